//! Corruption operators and the consistency losses that align a clean and a
//! corrupted forward pass through shared weights.

mod corrupt;
mod loss;

pub use corrupt::{corrupt, gaussian_kernel, gaussian_taps, CorruptionConfig, CorruptionKind};
pub use loss::{consistent_loss, kl_alignment, squared_alignment, ConsistentLossConfig, LossType, Pyramid};

use crate::autograd::{Tape, Var};
use crate::error::{Error, Result};
use crate::params::ParamStore;
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// Op name under which the corrupted image enters a tape.
pub const CORRUPTED_INPUT_OP: &str = "corrupted_input";

/// A network that maps an image to per-stage, per-level features.
pub trait PyramidModel<T: Scalar> {
    fn pyramid<'t>(&self, image: Var<'t, T>, store: &ParamStore<T>) -> Result<Pyramid<'t, T>>;
}

pub struct HdcOutput<'t, T> {
    pub loss: Var<'t, T>,
    pub base: Pyramid<'t, T>,
    pub corrupted: Pyramid<'t, T>,
}

/// Runs the clean and corrupted images through the same model and parameters
/// and returns the consistency loss with both pyramids.
pub fn hdc_step<'t, T: Scalar, M: PyramidModel<T> + ?Sized>(
    tape: &'t Tape<T>,
    store: &ParamStore<T>,
    model: &M,
    image: &Tensor<T>,
    corruption: &CorruptionConfig,
    loss: &ConsistentLossConfig,
) -> Result<HdcOutput<'t, T>> {
    let degraded = corrupt(image, corruption)?;
    let base = model.pyramid(tape.constant(image.clone()), store)?;
    let corrupted = model.pyramid(tape.constant_named(CORRUPTED_INPUT_OP, degraded), store)?;
    let loss = consistent_loss(&base, &corrupted, loss)?;
    Ok(HdcOutput { loss, base, corrupted })
}

/// Foreground/background contrast `(f+b)/b` before and `(f+b−c)/(b−c)` after
/// removing `c` from the background.
pub fn theorem1_contrast(f: f64, b: f64, c: f64) -> Result<(f64, f64)> {
    if !(f > 0.0 && b > 0.0 && c > 0.0 && c < b) {
        return Err(Error::InvalidArgument(format!("need f > 0, b > 0 and 0 < c < b, got f={f}, b={b}, c={c}")));
    }
    Ok(((f + b) / b, (f + b - c) / (b - c)))
}
