use rand::Rng;

use super::conv::{conv2d, Conv2dParams};
use super::layers::instance_norm;
use crate::autograd::Var;
use crate::error::Result;
use crate::params::ParamStore;
use crate::scalar::Scalar;
use crate::spectral::ComplexVar;
use crate::tensor::Tensor;

/// `1×1 conv → instance norm → ReLU → 1×1 conv → sigmoid`.
#[derive(Clone, Debug)]
pub struct SigmaParams {
    pub conv1: Conv2dParams,
    pub norm_scale: crate::params::ParamId,
    pub norm_shift: crate::params::ParamId,
    pub conv2: Conv2dParams,
}

impl SigmaParams {
    pub fn new<T: Scalar>(store: &mut ParamStore<T>, name: &str, channels: usize, rng: &mut impl Rng) -> Self {
        let conv1 = Conv2dParams::pointwise_unbiased(store, &format!("{name}.conv1"), channels, channels, rng);
        let norm_scale = store.insert(format!("{name}.norm.scale"), Tensor::ones([channels]));
        let norm_shift = store.insert(format!("{name}.norm.shift"), Tensor::zeros([channels]));
        let conv2 = Conv2dParams::pointwise(store, &format!("{name}.conv2"), channels, channels, rng);
        SigmaParams {
            conv1,
            norm_scale,
            norm_shift,
            conv2,
        }
    }

    pub fn channels(&self) -> usize {
        self.conv1.c_in
    }
}

/// The real-valued gate sequence on one `C×H×W` tensor.
pub fn sigma_real<'t, T: Scalar>(x: Var<'t, T>, p: &SigmaParams, store: &ParamStore<T>) -> Result<Var<'t, T>> {
    let tape = x.tape();
    let h = conv2d(x, &p.conv1, store)?;
    let h = instance_norm(h, tape.param(store, p.norm_scale), tape.param(store, p.norm_shift))?;
    conv2d(h.relu()?, &p.conv2, store)?.sigmoid()
}

/// Applies [`sigma_real`] to the real and imaginary parts with the same weights.
pub fn sigma_block<'t, T: Scalar>(
    s: ComplexVar<'t, T>,
    p: &SigmaParams,
    store: &ParamStore<T>,
) -> Result<ComplexVar<'t, T>> {
    Ok(ComplexVar {
        re: sigma_real(s.re, p, store)?,
        im: sigma_real(s.im, p, store)?,
    })
}
