//! Per-channel 2D discrete Fourier transforms and magnitude/phase analysis.
//!
//! Convention: the forward transform is unnormalized and the inverse carries
//! the `1/(H·W)` factor. Power-of-two planes take an iterative radix-2 path;
//! any other size falls back to the direct double sum, which is also the
//! reference the fast path is tested against.

mod tape;

use std::sync::Once;

use serde::{Deserialize, Serialize};

pub use tape::{complex_mul, fft2_var, ifft2_var, magnitude_var, phase_var, polar_var, ComplexVar, FftNorm};

use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// Default normalized radial cut-offs: low `[0, 1/16)`, mid `[1/16, 1/4)`,
/// high `[1/4, √2/2]`.
pub const DEFAULT_BAND_EDGES: [f64; 2] = [0.0625, 0.25];

/// Real and imaginary planes of a `C×H×W` complex array.
#[derive(Clone, Debug, PartialEq)]
pub struct ComplexSpectrum<T> {
    re: Tensor<T>,
    im: Tensor<T>,
}

impl<T: Scalar> ComplexSpectrum<T> {
    pub fn new(re: Tensor<T>, im: Tensor<T>) -> Result<Self> {
        if re.shape() != im.shape() {
            return Err(Error::shape("complex_spectrum", re.shape(), im.shape()));
        }
        re.chw()?;
        Ok(ComplexSpectrum { re, im })
    }

    pub fn zeros(c: usize, h: usize, w: usize) -> Self {
        ComplexSpectrum {
            re: Tensor::zeros([c, h, w]),
            im: Tensor::zeros([c, h, w]),
        }
    }

    pub fn from_real(re: Tensor<T>) -> Result<Self> {
        let im = Tensor::zeros(re.shape());
        Self::new(re, im)
    }

    pub fn re(&self) -> &Tensor<T> {
        &self.re
    }

    pub fn im(&self) -> &Tensor<T> {
        &self.im
    }

    pub fn into_parts(self) -> (Tensor<T>, Tensor<T>) {
        (self.re, self.im)
    }

    pub fn shape(&self) -> (usize, usize, usize) {
        self.re.chw().expect("validated at construction")
    }

    /// `F(c, u, v)` as `(re, im)`.
    pub fn at(&self, c: usize, u: usize, v: usize) -> (T, T) {
        let (_, h, w) = self.shape();
        let i = (c * h + u) * w + v;
        (self.re.data()[i], self.im.data()[i])
    }

    /// Largest elementwise modulus of the difference.
    pub fn max_abs_diff(&self, other: &Self) -> Result<T> {
        Ok(self
            .re
            .max_abs_diff(&other.re)?
            .max(self.im.max_abs_diff(&other.im)?))
    }
}

pub(crate) fn is_pow2(n: usize) -> bool {
    n.is_power_of_two()
}

fn twiddles<T: Scalar>(n: usize, sign: f64) -> (Vec<T>, Vec<T>) {
    (0..n)
        .map(|k| {
            let angle = sign * 2.0 * std::f64::consts::PI * k as f64 / n as f64;
            (T::of(angle.cos()), T::of(angle.sin()))
        })
        .unzip()
}

/// In-place iterative radix-2 transform of one contiguous sequence.
/// `tw` holds `exp(sign·2πik/n)` for `k < n/2`.
fn fft_1d<T: Scalar>(re: &mut [T], im: &mut [T], tw_re: &[T], tw_im: &[T]) {
    let n = re.len();
    if n <= 1 {
        return;
    }
    let bits = n.trailing_zeros();
    for i in 0..n {
        let j = i.reverse_bits() >> (usize::BITS - bits);
        if j > i {
            re.swap(i, j);
            im.swap(i, j);
        }
    }
    let mut len = 2;
    while len <= n {
        let half = len / 2;
        let step = n / len;
        for start in (0..n).step_by(len) {
            for k in 0..half {
                let (wr, wi) = (tw_re[k * step], tw_im[k * step]);
                let (a, b) = (start + k, start + k + half);
                let xr = re[b] * wr - im[b] * wi;
                let xi = re[b] * wi + im[b] * wr;
                re[b] = re[a] - xr;
                im[b] = im[a] - xi;
                re[a] += xr;
                im[a] += xi;
            }
        }
        len <<= 1;
    }
}

/// Radix-2 2D transform of each `H×W` plane, unscaled. `sign` is −1 for the
/// forward kernel and +1 for the inverse kernel.
fn fft2_planes<T: Scalar>(re: &mut [T], im: &mut [T], h: usize, w: usize, sign: f64) {
    let (rw_re, rw_im) = twiddles::<T>(w, sign);
    let (cw_re, cw_im) = twiddles::<T>(h, sign);
    let mut col_re = vec![T::zero(); h];
    let mut col_im = vec![T::zero(); h];
    for (plane_re, plane_im) in re.chunks_exact_mut(h * w).zip(im.chunks_exact_mut(h * w)) {
        for (row_re, row_im) in plane_re.chunks_exact_mut(w).zip(plane_im.chunks_exact_mut(w)) {
            fft_1d(row_re, row_im, &rw_re, &rw_im);
        }
        for v in 0..w {
            for u in 0..h {
                col_re[u] = plane_re[u * w + v];
                col_im[u] = plane_im[u * w + v];
            }
            fft_1d(&mut col_re, &mut col_im, &cw_re, &cw_im);
            for u in 0..h {
                plane_re[u * w + v] = col_re[u];
                plane_im[u * w + v] = col_im[u];
            }
        }
    }
}

/// Literal double-sum transform of each plane, unscaled.
fn dft2_planes<T: Scalar>(re: &[T], im: &[T], h: usize, w: usize, sign: f64) -> (Vec<T>, Vec<T>) {
    let (hw_re, hw_im) = twiddles::<T>(h, sign);
    let (ww_re, ww_im) = twiddles::<T>(w, sign);
    let mut out_re = vec![T::zero(); re.len()];
    let mut out_im = vec![T::zero(); re.len()];
    for (p, (src_re, src_im)) in re.chunks_exact(h * w).zip(im.chunks_exact(h * w)).enumerate() {
        let base = p * h * w;
        for u in 0..h {
            for v in 0..w {
                let (mut acc_re, mut acc_im) = (T::zero(), T::zero());
                for y in 0..h {
                    let (ar, ai) = (hw_re[(y * u) % h], hw_im[(y * u) % h]);
                    for x in 0..w {
                        let (br, bi) = (ww_re[(x * v) % w], ww_im[(x * v) % w]);
                        let kr = ar * br - ai * bi;
                        let ki = ar * bi + ai * br;
                        let (sr, si) = (src_re[y * w + x], src_im[y * w + x]);
                        acc_re += sr * kr - si * ki;
                        acc_im += sr * ki + si * kr;
                    }
                }
                out_re[base + u * w + v] = acc_re;
                out_im[base + u * w + v] = acc_im;
            }
        }
    }
    (out_re, out_im)
}

static FALLBACK_NOTICE: Once = Once::new();

/// Unscaled transform of complex planes, fast path when possible.
pub(crate) fn transform<T: Scalar>(
    re: &[T],
    im: &[T],
    h: usize,
    w: usize,
    sign: f64,
) -> (Vec<T>, Vec<T>) {
    if is_pow2(h) && is_pow2(w) {
        let (mut r, mut i) = (re.to_vec(), im.to_vec());
        fft2_planes(&mut r, &mut i, h, w, sign);
        (r, i)
    } else {
        FALLBACK_NOTICE.call_once(|| {
            log::info!("{h}×{w} is not a power-of-two plane; using the direct DFT");
        });
        dft2_planes(re, im, h, w, sign)
    }
}

fn spectrum_from<T: Scalar>(shape: &[usize], (re, im): (Vec<T>, Vec<T>)) -> Result<ComplexSpectrum<T>> {
    ComplexSpectrum::new(Tensor::new(shape, re)?, Tensor::new(shape, im)?)
}

fn scaled<T: Scalar>((mut re, mut im): (Vec<T>, Vec<T>), s: T) -> (Vec<T>, Vec<T>) {
    re.iter_mut().chain(im.iter_mut()).for_each(|v| *v *= s);
    (re, im)
}

/// Forward transform of a real `C×H×W` tensor.
pub fn fft2<T: Scalar>(x: &Tensor<T>) -> Result<ComplexSpectrum<T>> {
    let (_, h, w) = x.chw()?;
    let zeros = vec![T::zero(); x.numel()];
    spectrum_from(x.shape(), transform(x.data(), &zeros, h, w, -1.0))
}

/// Forward transform of complex planes.
pub fn fft2_complex<T: Scalar>(s: &ComplexSpectrum<T>) -> Result<ComplexSpectrum<T>> {
    let (_, h, w) = s.shape();
    spectrum_from(s.re.shape(), transform(s.re.data(), s.im.data(), h, w, -1.0))
}

/// Inverse transform with the `1/(H·W)` factor; the result is complex.
pub fn ifft2<T: Scalar>(s: &ComplexSpectrum<T>) -> Result<ComplexSpectrum<T>> {
    let (_, h, w) = s.shape();
    let raw = transform(s.re.data(), s.im.data(), h, w, 1.0);
    spectrum_from(s.re.shape(), scaled(raw, T::one() / T::of_usize(h * w)))
}

/// Real part of [`ifft2`].
pub fn ifft2_real<T: Scalar>(s: &ComplexSpectrum<T>) -> Result<Tensor<T>> {
    Ok(ifft2(s)?.re)
}

/// Direct evaluation of the forward double sum for any plane size.
pub fn dft2_naive<T: Scalar>(x: &Tensor<T>) -> Result<ComplexSpectrum<T>> {
    let (_, h, w) = x.chw()?;
    let zeros = vec![T::zero(); x.numel()];
    spectrum_from(x.shape(), dft2_planes(x.data(), &zeros, h, w, -1.0))
}

/// Direct evaluation of the inverse double sum, real part.
pub fn idft2_naive<T: Scalar>(s: &ComplexSpectrum<T>) -> Result<Tensor<T>> {
    Ok(idft2_naive_complex(s)?.re)
}

pub fn idft2_naive_complex<T: Scalar>(s: &ComplexSpectrum<T>) -> Result<ComplexSpectrum<T>> {
    let (_, h, w) = s.shape();
    let raw = dft2_planes(s.re.data(), s.im.data(), h, w, 1.0);
    spectrum_from(s.re.shape(), scaled(raw, T::one() / T::of_usize(h * w)))
}

/// `√(R² + I²)` per bin.
pub fn magnitude<T: Scalar>(s: &ComplexSpectrum<T>) -> Tensor<T> {
    s.re.zip_with(&s.im, |r, i| r.hypot(i))
        .expect("parts share a shape")
}

/// Four-quadrant angle in `(−π, π]`, with the angle of `0 + 0j` taken as 0.
pub(crate) fn phase_value<T: Scalar>(re: T, im: T) -> T {
    if re.is_zero() && im.is_zero() {
        return T::zero();
    }
    let p = im.atan2(re);
    if p <= -T::PI() {
        T::PI()
    } else {
        p
    }
}

pub fn phase<T: Scalar>(s: &ComplexSpectrum<T>) -> Tensor<T> {
    s.re.zip_with(&s.im, phase_value)
        .expect("parts share a shape")
}

/// `R = m·cos p`, `I = m·sin p`.
pub fn polar_recombine<T: Scalar>(m: &Tensor<T>, p: &Tensor<T>) -> Result<ComplexSpectrum<T>> {
    ComplexSpectrum::new(
        m.zip_with(p, |m, p| m * p.cos())?,
        m.zip_with(p, |m, p| m * p.sin())?,
    )
}

/// Moves the zero-frequency bin to `(H/2, W/2)`.
pub fn fftshift<T: Scalar>(s: &ComplexSpectrum<T>) -> ComplexSpectrum<T> {
    let (_, h, w) = s.shape();
    let shift = |t: &Tensor<T>| {
        let d = t.data();
        Tensor::from_fn(t.shape().to_vec(), |i| {
            let (p, u, v) = (i / (h * w), (i / w) % h, i % w);
            let (su, sv) = ((u + h - h / 2) % h, (v + w - w / 2) % w);
            d[(p * h + su) * w + sv]
        })
    };
    ComplexSpectrum {
        re: shift(&s.re),
        im: shift(&s.im),
    }
}

/// Share of squared-magnitude energy per radial frequency band.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BandEnergyReport {
    pub edges: Vec<f64>,
    pub fractions: Vec<f64>,
}

impl BandEnergyReport {
    pub fn high(&self) -> f64 {
        *self.fractions.last().expect("at least one band")
    }
}

/// Normalized radial frequency of every centered bin of an `h×w` plane.
pub fn radial_frequency(h: usize, w: usize) -> Vec<f64> {
    let mut r = Vec::with_capacity(h * w);
    for i in 0..h {
        let fu = (i as f64 - (h / 2) as f64) / h as f64;
        for j in 0..w {
            let fv = (j as f64 - (w / 2) as f64) / w as f64;
            r.push(fu.hypot(fv));
        }
    }
    r
}

/// Band index of a radius: the number of edges at or below it.
pub fn band_of(r: f64, edges: &[f64]) -> usize {
    edges.iter().take_while(|&&e| r >= e).count()
}

fn validate_edges(edges: &[f64]) -> Result<()> {
    let max = 0.5 * std::f64::consts::SQRT_2;
    if edges.iter().any(|&e| !(e > 0.0 && e <= max)) {
        return Err(Error::InvalidArgument(format!(
            "band edges must lie in (0, {max:.4}], got {edges:?}"
        )));
    }
    if edges.windows(2).any(|p| p[0] >= p[1]) {
        return Err(Error::InvalidArgument(format!(
            "band edges must be strictly increasing, got {edges:?}"
        )));
    }
    Ok(())
}

/// Partitions the centered spectrum by normalized radial frequency and
/// reports the fraction of `Σ M²` in each band, summed over channels.
pub fn band_energy<T: Scalar>(s: &ComplexSpectrum<T>, edges: &[f64]) -> Result<BandEnergyReport> {
    validate_edges(edges)?;
    let (_, h, w) = s.shape();
    let centered = fftshift(s);
    let radius = radial_frequency(h, w);
    let mut energy = vec![0.0f64; edges.len() + 1];
    for (i, (&re, &im)) in centered.re.data().iter().zip(centered.im.data()).enumerate() {
        let e = re.as_f64().powi(2) + im.as_f64().powi(2);
        energy[band_of(radius[i % (h * w)], edges)] += e;
    }
    let total: f64 = energy.iter().sum();
    if total <= 0.0 {
        return Err(Error::domain("band_energy", "spectrum carries no energy"));
    }
    Ok(BandEnergyReport {
        edges: edges.to_vec(),
        fractions: energy.into_iter().map(|e| e / total).collect(),
    })
}

#[cfg(test)]
mod tests;
