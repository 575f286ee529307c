//! Differentiable counterparts of the spectral operations.

use super::{phase_value, transform};
use crate::autograd::{Tape, Var};
use crate::error::Result;
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// Smoothing added under the square root in the modulus and angle gradients.
pub const MODULUS_EPS: f64 = 1e-12;

/// Scaling of the transform pair.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub enum FftNorm {
    /// Unscaled forward, `1/(H·W)` on the inverse.
    #[default]
    Backward,
    /// `1/√(H·W)` on both directions.
    Ortho,
}

impl FftNorm {
    fn scales<T: Scalar>(self, h: usize, w: usize) -> (T, T) {
        let n = T::of_usize(h * w);
        match self {
            FftNorm::Backward => (T::one(), T::one() / n),
            FftNorm::Ortho => (T::one() / n.sqrt(), T::one() / n.sqrt()),
        }
    }
}

/// A complex `C×H×W` value on a tape.
#[derive(Clone, Copy, Debug)]
pub struct ComplexVar<'t, T> {
    pub re: Var<'t, T>,
    pub im: Var<'t, T>,
}

/// Transforms `[re; im]`, records the packed `2C×H×W` result and splits it.
fn packed_transform<'t, T: Scalar>(
    op: &'static str,
    re: Var<'t, T>,
    im: Var<'t, T>,
    sign: f64,
    scale: T,
) -> Result<ComplexVar<'t, T>> {
    let (c, h, w, out) = {
        let (r, i) = (re.value(), im.value());
        let (c, h, w) = r.chw()?;
        if r.shape() != i.shape() {
            return Err(crate::Error::shape(op, r.shape(), i.shape()));
        }
        let (mut or, oi) = transform(r.data(), i.data(), h, w, sign);
        or.extend(oi);
        or.iter_mut().for_each(|v| *v *= scale);
        (c, h, w, Tensor::new([2 * c, h, w], or)?)
    };
    let tape = re.tape();
    let packed = tape.record(
        op,
        out,
        &[re, im],
        Box::new(move |ctx| {
            let n = c * h * w;
            let (gr, gi) = ctx.grad.split_at(n);
            // adjoint of scale·T(sign) is scale·T(−sign)
            let (mut ar, mut ai) = transform(gr, gi, h, w, -sign);
            ar.iter_mut().chain(ai.iter_mut()).for_each(|v| *v *= scale);
            vec![ar, ai]
        }),
    )?;
    Ok(ComplexVar {
        re: packed.narrow(0, c)?,
        im: packed.narrow(c, c)?,
    })
}

fn zeros_like<'t, T: Scalar>(v: Var<'t, T>) -> Var<'t, T> {
    let shape = v.shape();
    v.tape().constant(Tensor::zeros(shape))
}

/// Forward transform; `im = None` treats the input as real.
pub fn fft2_var<'t, T: Scalar>(
    re: Var<'t, T>,
    im: Option<Var<'t, T>>,
    norm: FftNorm,
) -> Result<ComplexVar<'t, T>> {
    let im = im.unwrap_or_else(|| zeros_like(re));
    let (_, h, w) = re.value().chw()?;
    let (fwd, _) = norm.scales::<T>(h, w);
    packed_transform("fft2", re, im, -1.0, fwd)
}

/// Inverse transform, complex result.
pub fn ifft2_var<'t, T: Scalar>(s: ComplexVar<'t, T>, norm: FftNorm) -> Result<ComplexVar<'t, T>> {
    let (_, h, w) = s.re.value().chw()?;
    let (_, inv) = norm.scales::<T>(h, w);
    packed_transform("ifft2", s.re, s.im, 1.0, inv)
}

/// Modulus `√(R² + I²)`; the gradient uses `√(R² + I² + ε)`.
pub fn magnitude_var<'t, T: Scalar>(s: ComplexVar<'t, T>) -> Result<Var<'t, T>> {
    let out = s.re.value().zip_with(&s.im.value(), |r, i| r.hypot(i))?;
    s.re.tape().record(
        "magnitude",
        out,
        &[s.re, s.im],
        Box::new(|ctx| {
            let eps = T::of(MODULUS_EPS);
            let (r, i) = (ctx.inputs[0].data(), ctx.inputs[1].data());
            let denom = |k: usize| (r[k] * r[k] + i[k] * i[k] + eps).sqrt();
            let gr = ctx.grad.iter().enumerate().map(|(k, &g)| g * r[k] / denom(k)).collect();
            let gi = ctx.grad.iter().enumerate().map(|(k, &g)| g * i[k] / denom(k)).collect();
            vec![gr, gi]
        }),
    )
}

/// Angle in `(−π, π]`, bitwise identical to [`super::phase`].
pub fn phase_var<'t, T: Scalar>(s: ComplexVar<'t, T>) -> Result<Var<'t, T>> {
    let out = s.re.value().zip_with(&s.im.value(), phase_value)?;
    s.re.tape().record(
        "phase",
        out,
        &[s.re, s.im],
        Box::new(|ctx| {
            let eps = T::of(MODULUS_EPS);
            let (r, i) = (ctx.inputs[0].data(), ctx.inputs[1].data());
            let denom = |k: usize| r[k] * r[k] + i[k] * i[k] + eps;
            let gr = ctx.grad.iter().enumerate().map(|(k, &g)| -g * i[k] / denom(k)).collect();
            let gi = ctx.grad.iter().enumerate().map(|(k, &g)| g * r[k] / denom(k)).collect();
            vec![gr, gi]
        }),
    )
}

/// `m·e^{jp}`.
pub fn polar_var<'t, T: Scalar>(m: Var<'t, T>, p: Var<'t, T>) -> Result<ComplexVar<'t, T>> {
    Ok(ComplexVar {
        re: m.mul(p.cos()?)?,
        im: m.mul(p.sin()?)?,
    })
}

/// Elementwise complex product.
pub fn complex_mul<'t, T: Scalar>(a: ComplexVar<'t, T>, b: ComplexVar<'t, T>) -> Result<ComplexVar<'t, T>> {
    Ok(ComplexVar {
        re: a.re.mul(b.re)?.sub(a.im.mul(b.im)?)?,
        im: a.re.mul(b.im)?.add(a.im.mul(b.re)?)?,
    })
}

impl<'t, T: Scalar> ComplexVar<'t, T> {
    pub fn constant(tape: &'t Tape<T>, s: &super::ComplexSpectrum<T>) -> Self {
        ComplexVar {
            re: tape.constant(s.re().clone()),
            im: tape.constant(s.im().clone()),
        }
    }

    pub fn to_spectrum(&self) -> Result<super::ComplexSpectrum<T>> {
        super::ComplexSpectrum::new(self.re.to_tensor(), self.im.to_tensor())
    }
}
