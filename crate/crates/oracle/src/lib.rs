//! Straight-line reference implementations used only by tests.
//!
//! Everything here works on plain `f64` vectors with explicit loops and a
//! direct-summation DFT, sharing no code with the main crate. Weights are
//! looked up by the parameter names the main crate registers.

use std::collections::HashMap;
use std::f64::consts::PI;

pub type Weights = HashMap<String, Vec<f64>>;

#[derive(Clone, Debug, PartialEq)]
pub struct Grid {
    pub c: usize,
    pub h: usize,
    pub w: usize,
    pub data: Vec<f64>,
}

impl Grid {
    pub fn new(c: usize, h: usize, w: usize, data: Vec<f64>) -> Grid {
        assert_eq!(data.len(), c * h * w);
        Grid { c, h, w, data }
    }

    fn zeros(c: usize, h: usize, w: usize) -> Grid {
        Grid::new(c, h, w, vec![0.0; c * h * w])
    }

    fn at(&self, c: usize, y: usize, x: usize) -> f64 {
        self.data[(c * self.h + y) * self.w + x]
    }

    fn map(&self, f: impl Fn(f64) -> f64) -> Grid {
        Grid::new(self.c, self.h, self.w, self.data.iter().map(|&v| f(v)).collect())
    }

    fn zip(&self, o: &Grid, f: impl Fn(f64, f64) -> f64) -> Grid {
        assert_eq!((self.c, self.h, self.w), (o.c, o.h, o.w));
        Grid::new(self.c, self.h, self.w, self.data.iter().zip(&o.data).map(|(&a, &b)| f(a, b)).collect())
    }

    fn cat(&self, o: &Grid) -> Grid {
        assert_eq!((self.h, self.w), (o.h, o.w));
        let mut data = self.data.clone();
        data.extend_from_slice(&o.data);
        Grid::new(self.c + o.c, self.h, self.w, data)
    }

    pub fn max_abs_diff(&self, o: &Grid) -> f64 {
        self.data.iter().zip(&o.data).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max)
    }
}

fn weight<'a>(wts: &'a Weights, name: &str) -> &'a [f64] {
    wts.get(name).unwrap_or_else(|| panic!("missing weight {name}"))
}

/// Zero-padded dilated cross-correlation.
pub fn conv(x: &Grid, w: &[f64], b: Option<&[f64]>, c_out: usize, k: usize, d: usize) -> Grid {
    assert_eq!(w.len(), c_out * x.c * k * k);
    let pad = (d * (k - 1) / 2) as i64;
    let mut out = Grid::zeros(c_out, x.h, x.w);
    for o in 0..c_out {
        for y in 0..x.h {
            for xx in 0..x.w {
                let mut acc = b.map_or(0.0, |b| b[o]);
                for i in 0..x.c {
                    for ky in 0..k {
                        for kx in 0..k {
                            let sy = y as i64 + (ky * d) as i64 - pad;
                            let sx = xx as i64 + (kx * d) as i64 - pad;
                            if sy >= 0 && sx >= 0 && sy < x.h as i64 && sx < x.w as i64 {
                                acc += w[((o * x.c + i) * k + ky) * k + kx] * x.at(i, sy as usize, sx as usize);
                            }
                        }
                    }
                }
                out.data[(o * x.h + y) * x.w + xx] = acc;
            }
        }
    }
    out
}

pub fn conv1x1(wts: &Weights, name: &str, x: &Grid, c_out: usize) -> Grid {
    let b = wts.get(&format!("{name}.bias")).map(Vec::as_slice);
    conv(x, weight(wts, &format!("{name}.weight")), b, c_out, 1, 1)
}

/// Per-channel dilated kernel, then a biased `1×1` projection.
pub fn dd_conv(wts: &Weights, name: &str, x: &Grid, c_out: usize, k: usize, d: usize) -> Grid {
    let dw = weight(wts, &format!("{name}.depthwise"));
    let mut mid = Grid::zeros(x.c, x.h, x.w);
    for ch in 0..x.c {
        let plane = Grid::new(1, x.h, x.w, x.data[ch * x.h * x.w..(ch + 1) * x.h * x.w].to_vec());
        let one = conv(&plane, &dw[ch * k * k..(ch + 1) * k * k], None, 1, k, d);
        mid.data[ch * x.h * x.w..(ch + 1) * x.h * x.w].copy_from_slice(&one.data);
    }
    conv1x1(wts, &format!("{name}.pointwise"), &mid, c_out)
}

fn sigmoid(v: f64) -> f64 {
    1.0 / (1.0 + (-v).exp())
}

pub fn gelu(v: f64) -> f64 {
    0.5 * v * (1.0 + libm::erf(v / 2f64.sqrt()))
}

/// `1×1 → instance norm → ReLU → 1×1 → sigmoid` on a real tensor.
pub fn sigma_real(wts: &Weights, name: &str, x: &Grid) -> Grid {
    let c = x.c;
    let mut h = conv1x1(wts, &format!("{name}.conv1"), x, c);
    let scale = weight(wts, &format!("{name}.norm.scale"));
    let shift = weight(wts, &format!("{name}.norm.shift"));
    let n = (x.h * x.w) as f64;
    for ch in 0..c {
        let plane = &mut h.data[ch * x.h * x.w..(ch + 1) * x.h * x.w];
        let mean = plane.iter().sum::<f64>() / n;
        let var = plane.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
        for v in plane.iter_mut() {
            *v = (scale[ch] * (*v - mean) / (var + 1e-5).sqrt() + shift[ch]).max(0.0);
        }
    }
    conv1x1(wts, &format!("{name}.conv2"), &h, c).map(sigmoid)
}

/// Direct-summation DFT of every plane; inverse divides by `H·W`.
pub fn dft(re: &Grid, im: &Grid, inverse: bool) -> (Grid, Grid) {
    let (h, w) = (re.h, re.w);
    let sign = if inverse { 1.0 } else { -1.0 };
    let norm = if inverse { 1.0 / (h * w) as f64 } else { 1.0 };
    let (mut or, mut oi) = (Grid::zeros(re.c, h, w), Grid::zeros(re.c, h, w));
    for ch in 0..re.c {
        for u in 0..h {
            for v in 0..w {
                let (mut sr, mut si) = (0.0, 0.0);
                for y in 0..h {
                    for x in 0..w {
                        let ang = sign * 2.0 * PI * ((u * y) as f64 / h as f64 + (v * x) as f64 / w as f64);
                        let (s, c) = ang.sin_cos();
                        let (a, b) = (re.at(ch, y, x), im.at(ch, y, x));
                        sr += a * c - b * s;
                        si += a * s + b * c;
                    }
                }
                or.data[(ch * h + u) * w + v] = sr * norm;
                oi.data[(ch * h + u) * w + v] = si * norm;
            }
        }
    }
    (or, oi)
}

fn softmax_rows(m: &mut [f64], width: usize) {
    for row in m.chunks_mut(width) {
        let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let total: f64 = row.iter().map(|v| (v - max).exp()).sum();
        row.iter_mut().for_each(|v| *v = (*v - max).exp() / total);
    }
}

fn dd_pair(wts: &Weights, name: &str, x: &Grid, d: usize) -> Grid {
    let half = x.c / 2;
    dd_conv(wts, &format!("{name}.dd3"), x, half, 3, d).cat(&dd_conv(wts, &format!("{name}.dd5"), x, half, 5, d))
}

/// Spatial channel attention.
pub fn sdca(wts: &Weights, name: &str, x: &Grid, d: usize) -> Grid {
    let (c, n) = (x.c, x.h * x.w);
    let project = |role: &str| {
        let embedded = conv1x1(wts, &format!("{name}.{role}.embed"), x, c);
        dd_pair(wts, &format!("{name}.{role}"), &embedded, d)
    };
    let (q, k, v) = (project("query"), project("key"), project("value"));
    let mut a = vec![0.0; c * c];
    for i in 0..c {
        for j in 0..c {
            let dot: f64 = (0..n).map(|p| q.data[i * n + p] * k.data[j * n + p]).sum();
            a[i * c + j] = dot / (n as f64).sqrt();
        }
    }
    softmax_rows(&mut a, c);
    let mut attended = Grid::zeros(c, x.h, x.w);
    for i in 0..c {
        for p in 0..n {
            attended.data[i * n + p] = (0..c).map(|j| a[i * c + j] * v.data[j * n + p]).sum();
        }
    }
    let residual = dd_pair(wts, &format!("{name}.residual"), x, d);
    conv1x1(wts, &format!("{name}.fuse"), &attended.cat(&residual), c)
}

fn sigma_complex(wts: &Weights, name: &str, re: &Grid, im: &Grid) -> (Grid, Grid) {
    (sigma_real(wts, name, re), sigma_real(wts, name, im))
}

fn phase_of(r: f64, i: f64) -> f64 {
    if r == 0.0 && i == 0.0 {
        return 0.0;
    }
    let p = i.atan2(r);
    if p == -PI {
        PI
    } else {
        p
    }
}

/// Band attention over the magnitude spectrum.
pub fn fdba(wts: &Weights, name: &str, x: &Grid) -> Grid {
    let (c, n) = (x.c, x.h * x.w);
    let zero = Grid::zeros(c, x.h, x.w);
    let (sr, si) = dft(x, &zero, false);
    let mag = sr.zip(&si, |a, b| (a * a + b * b).sqrt());
    let phase = sr.zip(&si, phase_of);
    let mut a = vec![0.0; n * n];
    for p in 0..n {
        for q in 0..n {
            let dot: f64 = (0..c).map(|ch| mag.data[ch * n + p] * mag.data[ch * n + q]).sum();
            a[p * n + q] = dot / (c as f64).sqrt();
        }
    }
    softmax_rows(&mut a, n);
    let mut attended = Grid::zeros(c, x.h, x.w);
    for ch in 0..c {
        for p in 0..n {
            attended.data[ch * n + p] = (0..n).map(|q| a[p * n + q] * mag.data[ch * n + q]).sum();
        }
    }
    let rebuilt_re = attended.zip(&phase, |m, p| m * p.cos());
    let rebuilt_im = attended.zip(&phase, |m, p| m * p.sin());
    let (refined, _) = dft(&rebuilt_re, &rebuilt_im, true);
    let (gr, gi) = sigma_complex(wts, &format!("{name}.sigma"), &sr, &si);
    let (gated, _) = dft(&gr, &gi, true);
    conv1x1(wts, &format!("{name}.fuse"), &refined.cat(&gated), c)
}

/// `(a·b)` for complex grids given as parts.
fn cmul(ar: &Grid, ai: &Grid, br: &Grid, bi: &Grid) -> (Grid, Grid) {
    let mut re = Grid::zeros(ar.c, ar.h, ar.w);
    let mut im = Grid::zeros(ar.c, ar.h, ar.w);
    for k in 0..ar.data.len() {
        re.data[k] = ar.data[k] * br.data[k] - ai.data[k] * bi.data[k];
        im.data[k] = ar.data[k] * bi.data[k] + ai.data[k] * br.data[k];
    }
    (re, im)
}

/// Two-stage frequency/spatial feed-forward network.
pub fn fsfn(wts: &Weights, name: &str, x: &Grid, d: usize) -> Grid {
    let c = x.c;
    let zero = Grid::zeros(c, x.h, x.w);
    let (sr, si) = dft(x, &zero, false);
    let (gr, gi) = sigma_complex(wts, &format!("{name}.freq_gate"), &sr, &si);
    let (pr, pi) = cmul(&gr, &gi, &sr, &si);
    let s = pr.zip(&pi, |a, b| (a * a + b * b).sqrt());
    let freq = s.map(|v| gelu(v) * v);
    let sp = dd_conv(wts, &format!("{name}.spatial_gate"), x, c, 3, d);
    let spatial = sp.map(|v| gelu(v) * v);
    let joint = spatial.cat(&freq);

    let zero2 = Grid::zeros(2 * c, x.h, x.w);
    let (jr, ji) = dft(&joint, &zero2, false);
    let (hr, hi) = sigma_complex(wts, &format!("{name}.joint_freq_gate"), &jr, &ji);
    let (qr, qi) = cmul(&hr, &hi, &jr, &ji);
    let (ir, ii) = dft(&qr, &qi, true);
    let joint_freq = ir.zip(&ii, |a, b| (a * a + b * b).sqrt());
    let joint_spatial = dd_conv(wts, &format!("{name}.joint_spatial"), &joint, c, 3, d);
    conv1x1(wts, &format!("{name}.fuse"), &joint_freq.cat(&joint_spatial), c)
}

/// The whole block with its input residual.
pub fn fstb(wts: &Weights, name: &str, x: &Grid, d: usize) -> Grid {
    let s = sdca(wts, &format!("{name}.sdca"), x, d);
    let f = fdba(wts, &format!("{name}.fdba"), x);
    let merged = conv1x1(wts, &format!("{name}.combine"), &s.cat(&f), x.c);
    fsfn(wts, &format!("{name}.fsfn"), &merged, d).zip(x, |a, b| a + b)
}

/// Per-channel spatial softmax KL(target ‖ prediction), averaged over channels.
pub fn kl_alignment(target: &Grid, pred: &Grid) -> f64 {
    let n = target.h * target.w;
    let mut total = 0.0;
    for ch in 0..target.c {
        let mut t = target.data[ch * n..(ch + 1) * n].to_vec();
        let mut p = pred.data[ch * n..(ch + 1) * n].to_vec();
        softmax_rows(&mut t, n);
        softmax_rows(&mut p, n);
        total += t.iter().zip(&p).map(|(a, b)| if *a > 0.0 { a * (a / b).ln() } else { 0.0 }).sum::<f64>();
    }
    total / target.c as f64
}

/// Sum of squared differences divided by `H·W`.
pub fn squared_alignment(target: &Grid, pred: &Grid) -> f64 {
    let mut total = 0.0;
    for ch in 0..target.c {
        for y in 0..target.h {
            for x in 0..target.w {
                let d = target.at(ch, y, x) - pred.at(ch, y, x);
                total += d * d;
            }
        }
    }
    total / (target.h * target.w) as f64
}
