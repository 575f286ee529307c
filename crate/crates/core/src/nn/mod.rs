//! Convolution, normalization and gating layers.

mod conv;
mod layers;
mod sigma;

pub use conv::{conv2d, conv2d_raw, dd_conv, depthwise_conv2d_raw, Conv2dParams, DDConvParams};
pub use layers::{
    avg_pool2, bce_with_logits, bilinear_taps, instance_norm, resize_bilinear, upsample_bilinear, NORM_EPS,
};
pub use sigma::{sigma_block, sigma_real, SigmaParams};

/// Dilation used by every depthwise-dilated convolution unless configured.
pub const DEFAULT_DILATION: usize = 2;

#[cfg(test)]
mod tests;
