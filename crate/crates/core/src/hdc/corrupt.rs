use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::resize_bilinear;
use crate::scalar::Scalar;
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum CorruptionKind {
    /// Gaussian blur.
    Gb,
    /// Nearest downsample then bilinear upsample.
    Du,
    /// Additive Gaussian noise.
    Gn,
}

impl std::str::FromStr for CorruptionKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "gb" => Ok(CorruptionKind::Gb),
            "du" => Ok(CorruptionKind::Du),
            "gn" => Ok(CorruptionKind::Gn),
            _ => Err(Error::InvalidArgument(format!("unknown corruption kind {s:?} (expected gb, du or gn)"))),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct CorruptionConfig {
    pub kind: CorruptionKind,
    pub gb_kernel_size: usize,
    pub gb_sigma: f64,
    pub du_factor: usize,
    pub gn_sigma: f64,
    pub seed: u64,
}

impl Default for CorruptionConfig {
    fn default() -> Self {
        CorruptionConfig {
            kind: CorruptionKind::Gb,
            gb_kernel_size: 3,
            gb_sigma: 5.0,
            du_factor: 4,
            gn_sigma: 0.2,
            seed: 0,
        }
    }
}

impl CorruptionConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::InvalidArgument(msg));
        match self.kind {
            CorruptionKind::Gb if self.gb_kernel_size % 2 == 0 => {
                bad(format!("blur kernel size must be odd, got {}", self.gb_kernel_size))
            }
            CorruptionKind::Gb if !(self.gb_sigma > 0.0) => bad(format!("blur sigma must be positive, got {}", self.gb_sigma)),
            CorruptionKind::Du if self.du_factor < 2 => bad(format!("resampling factor must be at least 2, got {}", self.du_factor)),
            CorruptionKind::Gn if !(self.gn_sigma >= 0.0) => bad(format!("noise sigma must be non-negative, got {}", self.gn_sigma)),
            _ => Ok(()),
        }
    }
}

/// Normalized 1D Gaussian taps; the 2D kernel is their outer product.
pub fn gaussian_taps(size: usize, sigma: f64) -> Vec<f64> {
    let mid = (size / 2) as f64;
    let raw: Vec<f64> = (0..size).map(|i| (-((i as f64 - mid).powi(2)) / (2.0 * sigma * sigma)).exp()).collect();
    let total: f64 = raw.iter().sum();
    raw.into_iter().map(|v| v / total).collect()
}

/// `size×size` normalized Gaussian kernel, row-major.
pub fn gaussian_kernel(size: usize, sigma: f64) -> Vec<f64> {
    let taps = gaussian_taps(size, sigma);
    taps.iter().flat_map(|a| taps.iter().map(move |b| a * b)).collect()
}

/// Mirror index without repeating the edge sample.
fn reflect(i: isize, n: usize) -> usize {
    if n == 1 {
        return 0;
    }
    let period = 2 * (n as isize - 1);
    let m = i.rem_euclid(period);
    (if m >= n as isize { period - m } else { m }) as usize
}

fn blur<T: Scalar>(x: &Tensor<T>, size: usize, sigma: f64) -> Result<Tensor<T>> {
    let (c, h, w) = x.chw()?;
    let taps = gaussian_taps(size, sigma);
    let r = (size / 2) as isize;
    let d = x.data();
    let rows = Tensor::from_fn([c, h, w], |i| {
        let (ch, y, xx) = (i / (h * w), (i / w) % h, i % w);
        taps.iter()
            .enumerate()
            .map(|(k, &t)| T::of(t) * d[(ch * h + y) * w + reflect(xx as isize + k as isize - r, w)])
            .sum()
    });
    let rd = rows.data();
    Ok(Tensor::from_fn([c, h, w], |i| {
        let (ch, y, xx) = (i / (h * w), (i / w) % h, i % w);
        taps.iter()
            .enumerate()
            .map(|(k, &t)| T::of(t) * rd[(ch * h + reflect(y as isize + k as isize - r, h)) * w + xx])
            .sum()
    }))
}

/// Nearest sample to the centre of each `factor×factor` cell.
pub(crate) fn downsample_nearest<T: Scalar>(x: &Tensor<T>, factor: usize) -> Result<Tensor<T>> {
    let (c, h, w) = x.chw()?;
    if factor > h || factor > w {
        return Err(Error::InvalidArgument(format!(
            "resampling factor {factor} exceeds image side ({h}×{w})"
        )));
    }
    let (sh, sw) = (h / factor, w / factor);
    let d = x.data();
    Ok(Tensor::from_fn([c, sh, sw], |i| {
        let (ch, y, xx) = (i / (sh * sw), (i / sw) % sh, i % sw);
        d[(ch * h + y * factor + factor / 2) * w + xx * factor + factor / 2]
    }))
}

fn down_up<T: Scalar>(x: &Tensor<T>, factor: usize) -> Result<Tensor<T>> {
    let (_, h, w) = x.chw()?;
    resize_bilinear(&downsample_nearest(x, factor)?, h, w)
}

fn noise<T: Scalar>(x: &Tensor<T>, sigma: f64, seed: u64) -> Result<Tensor<T>> {
    if sigma == 0.0 {
        return Ok(x.clone());
    }
    let normal = Normal::new(0.0, sigma).map_err(|e| Error::InvalidArgument(e.to_string()))?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let data = x
        .data()
        .iter()
        .map(|&v| (v + T::of(normal.sample(&mut rng))).max(T::zero()).min(T::one()))
        .collect();
    Tensor::new(x.shape(), data)
}

/// Applies the configured corruption to an image with values in `[0, 1]`.
pub fn corrupt<T: Scalar>(x: &Tensor<T>, cfg: &CorruptionConfig) -> Result<Tensor<T>> {
    cfg.validate()?;
    x.chw()?;
    if x.data().iter().any(|&v| !(v >= T::zero() && v <= T::one())) {
        return Err(Error::domain("corrupt", "image values must lie in [0, 1]"));
    }
    match cfg.kind {
        CorruptionKind::Gb => blur(x, cfg.gb_kernel_size, cfg.gb_sigma),
        CorruptionKind::Du => down_up(x, cfg.du_factor),
        CorruptionKind::Gn => noise(x, cfg.gn_sigma, cfg.seed),
    }
}
