//! Procedural overlapping scenes: textured foreground objects over
//! background clutter, composited by exponential attenuation.

use std::f64::consts::PI;
use std::fs;
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Environment variable that replaces the configured seed when set.
pub const SEED_ENV: &str = "FOAM_SEED";
pub const DATASET_FORMAT: &str = "foam-scenes-v1";
const BACKGROUND_ATTEMPTS: usize = 64;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SceneConfig {
    pub height: usize,
    pub width: usize,
    /// Inclusive range of foreground object counts.
    pub n_foreground: (usize, usize),
    /// Inclusive range of background clutter counts.
    pub n_background: (usize, usize),
    /// Stripe frequency in cycles per pixel.
    pub texture_freq: (f64, f64),
    pub fg_attenuation: (f64, f64),
    pub bg_attenuation: (f64, f64),
    /// Accepted share of foreground pixels that also lie under clutter.
    pub overlap: (f64, f64),
    pub seed: u64,
}

impl Default for SceneConfig {
    fn default() -> Self {
        SceneConfig {
            height: 64,
            width: 64,
            n_foreground: (1, 3),
            n_background: (3, 6),
            texture_freq: (0.15, 0.35),
            fg_attenuation: (0.5, 1.0),
            bg_attenuation: (0.3, 0.9),
            overlap: (0.2, 0.7),
            seed: 0,
        }
    }
}

impl SceneConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::InvalidArgument(msg));
        for (name, side) in [("height", self.height), ("width", self.width)] {
            if side < 32 || !side.is_power_of_two() {
                return bad(format!("{name} must be a power of two of at least 32, got {side}"));
            }
        }
        let counts = [("n_foreground", self.n_foreground), ("n_background", self.n_background)];
        for (name, (lo, hi)) in counts {
            if lo > hi {
                return bad(format!("{name} range is empty: {lo}..={hi}"));
            }
        }
        let ranges = [
            ("texture_freq", self.texture_freq),
            ("fg_attenuation", self.fg_attenuation),
            ("bg_attenuation", self.bg_attenuation),
            ("overlap", self.overlap),
        ];
        for (name, (lo, hi)) in ranges {
            if !(lo <= hi) || lo < 0.0 {
                return bad(format!("{name} range must be non-negative and non-empty, got {lo}..{hi}"));
            }
        }
        if self.overlap.1 > 1.0 {
            return bad(format!("overlap range must lie in [0, 1], got up to {}", self.overlap.1));
        }
        Ok(())
    }

    /// Applies the seed override from the environment, if any.
    pub fn with_env_seed(mut self) -> Result<Self> {
        if let Ok(v) = std::env::var(SEED_ENV) {
            self.seed = v
                .trim()
                .parse()
                .map_err(|_| Error::InvalidArgument(format!("{SEED_ENV} must be an unsigned integer, got {v:?}")))?;
        }
        Ok(self)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SceneMeta {
    pub seed: u64,
    pub n_foreground: usize,
    pub n_background: usize,
    pub overlap: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Scene {
    /// Transmittance in `[0, 1]`, `1×H×W`.
    pub image: Tensor<f64>,
    /// Foreground support in `{0, 1}`, `1×H×W`.
    pub mask: Tensor<f64>,
    pub meta: SceneMeta,
}

/// `exp(−Σ μᵢ)` elementwise; an empty list gives ones of `shape`.
pub fn composite_transmittance(layers: &[Tensor<f64>], shape: &[usize]) -> Result<Tensor<f64>> {
    let mut total = Tensor::zeros(shape.to_vec());
    for layer in layers {
        total = total.zip_with(layer, |a, b| a + b)?;
    }
    Ok(total.map(|m| (-m).exp()))
}

/// A rotated local frame: maps pixel centres to coordinates along and
/// across the shape's axes.
#[derive(Clone, Copy)]
struct Frame {
    cx: f64,
    cy: f64,
    cos: f64,
    sin: f64,
}

impl Frame {
    fn random(rng: &mut ChaCha8Rng, h: usize, w: usize, margin: f64) -> Frame {
        let angle = rng.random_range(0.0..PI);
        Frame {
            cx: rng.random_range(margin..w as f64 - margin),
            cy: rng.random_range(margin..h as f64 - margin),
            cos: angle.cos(),
            sin: angle.sin(),
        }
    }

    fn local(&self, y: usize, x: usize) -> (f64, f64) {
        let (dx, dy) = (x as f64 + 0.5 - self.cx, y as f64 + 0.5 - self.cy);
        (dx * self.cos + dy * self.sin, -dx * self.sin + dy * self.cos)
    }
}

#[derive(Clone, Copy)]
enum Outline {
    Ellipse { a: f64, b: f64 },
    Rect { a: f64, b: f64 },
    /// Two bars of thickness `t` meeting at a corner.
    Ell { a: f64, b: f64, t: f64 },
}

impl Outline {
    fn contains(&self, u: f64, v: f64) -> bool {
        match *self {
            Outline::Ellipse { a, b } => (u / a).powi(2) + (v / b).powi(2) <= 1.0,
            Outline::Rect { a, b } => u.abs() <= a && v.abs() <= b,
            Outline::Ell { a, b, t } => {
                let inside = u.abs() <= a && v.abs() <= b;
                inside && (v <= -b + t || u <= -a + t)
            }
        }
    }
}

struct Stripes {
    freq: f64,
    cos: f64,
    sin: f64,
    phase: f64,
}

impl Stripes {
    fn at(&self, u: f64, v: f64) -> f64 {
        1.0 + 0.5 * (2.0 * PI * self.freq * (u * self.cos + v * self.sin) + self.phase).sin()
    }
}

fn sample(rng: &mut ChaCha8Rng, (lo, hi): (f64, f64)) -> f64 {
    if lo == hi {
        lo
    } else {
        rng.random_range(lo..hi)
    }
}

fn count(rng: &mut ChaCha8Rng, (lo, hi): (usize, usize)) -> usize {
    rng.random_range(lo..=hi)
}

/// Renders the foreground: attenuation and support.
fn foreground(cfg: &SceneConfig, rng: &mut ChaCha8Rng, n: usize) -> (Tensor<f64>, Tensor<f64>) {
    let (h, w) = (cfg.height, cfg.width);
    let side = h.min(w) as f64;
    let mut mu = Tensor::zeros([1, h, w]);
    let mut mask = Tensor::zeros([1, h, w]);
    for _ in 0..n {
        let frame = Frame::random(rng, h, w, 0.15 * side);
        let (a, b) = (rng.random_range(0.08..0.2) * side, rng.random_range(0.08..0.2) * side);
        let outline = match rng.random_range(0..3) {
            0 => Outline::Ellipse { a, b },
            1 => Outline::Rect { a, b },
            _ => Outline::Ell { a, b, t: 0.45 * a.min(b) },
        };
        let dir = rng.random_range(0.0..PI);
        let stripes = Stripes {
            freq: sample(rng, cfg.texture_freq),
            cos: dir.cos(),
            sin: dir.sin(),
            phase: rng.random_range(0.0..2.0 * PI),
        };
        let strength = sample(rng, cfg.fg_attenuation);
        for y in 0..h {
            for x in 0..w {
                let (u, v) = frame.local(y, x);
                if outline.contains(u, v) {
                    mu.data_mut()[y * w + x] += strength * stripes.at(u, v);
                    mask.data_mut()[y * w + x] = 1.0;
                }
            }
        }
    }
    (mu, mask)
}

/// Renders clutter: attenuation and the support used to measure overlap.
fn background(cfg: &SceneConfig, rng: &mut ChaCha8Rng, n: usize) -> (Tensor<f64>, Vec<bool>) {
    let (h, w) = (cfg.height, cfg.width);
    let side = h.min(w) as f64;
    let mut mu = Tensor::zeros([1, h, w]);
    let mut support = vec![false; h * w];
    // a faint global gradient, not counted as clutter
    let (gx, gy) = (rng.random_range(-0.15..0.15), rng.random_range(-0.15..0.15));
    for y in 0..h {
        for x in 0..w {
            mu.data_mut()[y * w + x] = 0.15 + gx * (x as f64 / w as f64 - 0.5) + gy * (y as f64 / h as f64 - 0.5);
        }
    }
    for _ in 0..n {
        let strength = sample(rng, cfg.bg_attenuation);
        if rng.random_bool(0.6) {
            let frame = Frame::random(rng, h, w, 0.0);
            let (a, b) = (rng.random_range(0.12..0.3) * side, rng.random_range(0.12..0.3) * side);
            for y in 0..h {
                for x in 0..w {
                    let (u, v) = frame.local(y, x);
                    let r2 = (u / a).powi(2) + (v / b).powi(2);
                    if r2 <= 1.0 {
                        mu.data_mut()[y * w + x] += strength * (1.0 - r2).sqrt();
                        support[y * w + x] = true;
                    }
                }
            }
        } else {
            // a thin straight wire across the frame
            let frame = Frame::random(rng, h, w, 0.0);
            for y in 0..h {
                for x in 0..w {
                    let (_, v) = frame.local(y, x);
                    if v.abs() <= 0.75 {
                        mu.data_mut()[y * w + x] += strength;
                        support[y * w + x] = true;
                    }
                }
            }
        }
    }
    (mu, support)
}

fn overlap_fraction(mask: &Tensor<f64>, support: &[bool]) -> f64 {
    let fg = mask.data().iter().filter(|&&m| m > 0.5).count();
    if fg == 0 {
        return 0.0;
    }
    let both = mask.data().iter().zip(support).filter(|(&m, &s)| m > 0.5 && s).count();
    both as f64 / fg as f64
}

/// Deterministic scene for `(cfg, seed)`; `cfg.seed` is ignored.
pub fn gen_scene(cfg: &SceneConfig, seed: u64) -> Result<Scene> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n_fg = count(&mut rng, cfg.n_foreground);
    let n_bg = count(&mut rng, cfg.n_background);
    let (fg_mu, mask) = foreground(cfg, &mut rng, n_fg);
    // redraw clutter until the overlap lands in range, keeping the closest
    let mut best: Option<(f64, Tensor<f64>, f64)> = None;
    for _ in 0..BACKGROUND_ATTEMPTS {
        let (bg_mu, support) = background(cfg, &mut rng, n_bg);
        let ov = overlap_fraction(&mask, &support);
        let miss = (cfg.overlap.0 - ov).max(ov - cfg.overlap.1).max(0.0);
        if best.as_ref().is_none_or(|b| miss < b.0) {
            best = Some((miss, bg_mu, ov));
        }
        if miss == 0.0 || n_fg == 0 || n_bg == 0 {
            break;
        }
    }
    let (_, bg_mu, overlap) = best.expect("at least one attempt");
    let image = composite_transmittance(&[fg_mu, bg_mu], &[1, cfg.height, cfg.width])?;
    Ok(Scene {
        image,
        mask,
        meta: SceneMeta {
            seed,
            n_foreground: n_fg,
            n_background: n_bg,
            overlap,
        },
    })
}

/// Seed of scene `index` in a dataset generated from `base`.
pub fn scene_seed(base: u64, index: usize) -> u64 {
    base.wrapping_mul(0x9E37_79B9_7F4A_7C15).wrapping_add(index as u64)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DatasetEntry {
    pub image: String,
    pub mask: String,
    #[serde(flatten)]
    pub meta: SceneMeta,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub format: String,
    pub count: usize,
    pub config: SceneConfig,
    pub scenes: Vec<DatasetEntry>,
}

pub fn gen_dataset(cfg: &SceneConfig, count: usize, out_dir: impl AsRef<Path>) -> Result<DatasetManifest> {
    cfg.validate()?;
    let dir = out_dir.as_ref();
    fs::create_dir_all(dir)?;
    let mut scenes = Vec::with_capacity(count);
    for i in 0..count {
        let scene = gen_scene(cfg, scene_seed(cfg.seed, i))?;
        let (image, mask) = (format!("scene_{i:05}.img.tns"), format!("scene_{i:05}.mask.tns"));
        scene.image.save(dir.join(&image))?;
        scene.mask.save(dir.join(&mask))?;
        scenes.push(DatasetEntry {
            image,
            mask,
            meta: scene.meta,
        });
    }
    let manifest = DatasetManifest {
        format: DATASET_FORMAT.into(),
        count,
        config: cfg.clone(),
        scenes,
    };
    fs::write(dir.join("manifest.json"), serde_json::to_string_pretty(&manifest)?)?;
    Ok(manifest)
}

/// A loaded dataset: `(image, mask)` pairs in manifest order.
#[derive(Clone, Debug)]
pub struct Dataset {
    pub dir: PathBuf,
    pub manifest: DatasetManifest,
    pub samples: Vec<(Tensor<f64>, Tensor<f64>)>,
}

pub fn load_dataset(dir: impl AsRef<Path>) -> Result<Dataset> {
    let dir = dir.as_ref();
    let path = dir.join("manifest.json");
    let text = fs::read_to_string(&path)?;
    let manifest: DatasetManifest = serde_json::from_str(&text)?;
    let format_err = |msg: String| Error::Format {
        path: path.clone(),
        msg,
    };
    if manifest.format != DATASET_FORMAT {
        return Err(format_err(format!("unsupported dataset format {:?}", manifest.format)));
    }
    if manifest.count != manifest.scenes.len() {
        return Err(format_err(format!(
            "manifest lists {} scenes but declares {}",
            manifest.scenes.len(),
            manifest.count
        )));
    }
    let expected = [1, manifest.config.height, manifest.config.width];
    let mut samples = Vec::with_capacity(manifest.count);
    for e in &manifest.scenes {
        let image: Tensor<f64> = Tensor::load(dir.join(&e.image))?;
        let mask: Tensor<f64> = Tensor::load(dir.join(&e.mask))?;
        if image.shape() != expected || mask.shape() != expected {
            return Err(format_err(format!("{} has shape {:?}, expected {expected:?}", e.image, image.shape())));
        }
        samples.push((image, mask));
    }
    Ok(Dataset {
        dir: dir.to_path_buf(),
        manifest,
        samples,
    })
}

#[cfg(test)]
mod tests;
