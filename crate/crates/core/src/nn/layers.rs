use crate::autograd::{sigmoid, Var};
use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

pub const NORM_EPS: f64 = 1e-5;

/// Per-channel standardization over spatial positions followed by a learned
/// per-channel scale and shift.
pub fn instance_norm<'t, T: Scalar>(
    x: Var<'t, T>,
    scale: Var<'t, T>,
    shift: Var<'t, T>,
) -> Result<Var<'t, T>> {
    let (plane, out) = {
        let (xv, gv, bv) = (x.value(), scale.value(), shift.value());
        let (c, h, w) = xv.chw()?;
        if gv.shape() != [c] || bv.shape() != [c] {
            return Err(Error::shape("instance_norm", xv.shape(), gv.shape()));
        }
        let plane = h * w;
        let n = T::of_usize(plane);
        let mut out = vec![T::zero(); xv.numel()];
        for ch in 0..c {
            let src = &xv.data()[ch * plane..(ch + 1) * plane];
            let mean = src.iter().copied().sum::<T>() / n;
            let var = src.iter().map(|&v| (v - mean) * (v - mean)).sum::<T>() / n;
            let inv = T::one() / (var + T::of(NORM_EPS)).sqrt();
            let (g, b) = (gv.data()[ch], bv.data()[ch]);
            for (o, &v) in out[ch * plane..(ch + 1) * plane].iter_mut().zip(src) {
                *o = g * (v - mean) * inv + b;
            }
        }
        (plane, Tensor::new(xv.shape(), out)?)
    };
    x.tape().record(
        "instance_norm",
        out,
        &[x, scale, shift],
        Box::new(move |ctx| {
            let (xd, gd) = (ctx.inputs[0].data(), ctx.inputs[1].data());
            let c = gd.len();
            let n = T::of_usize(plane);
            let mut gx = vec![T::zero(); xd.len()];
            let mut gg = vec![T::zero(); c];
            let mut gb = vec![T::zero(); c];
            for ch in 0..c {
                let src = &xd[ch * plane..(ch + 1) * plane];
                let go = &ctx.grad[ch * plane..(ch + 1) * plane];
                let mean = src.iter().copied().sum::<T>() / n;
                let var = src.iter().map(|&v| (v - mean) * (v - mean)).sum::<T>() / n;
                let inv = T::one() / (var + T::of(NORM_EPS)).sqrt();
                let (mut sum_g, mut sum_gx) = (T::zero(), T::zero());
                for (&g, &v) in go.iter().zip(src) {
                    sum_g += g;
                    sum_gx += g * (v - mean) * inv;
                }
                gg[ch] = sum_gx;
                gb[ch] = sum_g;
                let k = gd[ch] * inv / n;
                for ((dst, &g), &v) in gx[ch * plane..(ch + 1) * plane].iter_mut().zip(go).zip(src) {
                    let xhat = (v - mean) * inv;
                    *dst = k * (n * g - sum_g - xhat * sum_gx);
                }
            }
            vec![gx, gg, gb]
        }),
    )
}

/// 2×2 average pooling with stride 2.
pub fn avg_pool2<'t, T: Scalar>(x: Var<'t, T>) -> Result<Var<'t, T>> {
    let (c, h, w, out) = {
        let xv = x.value();
        let (c, h, w) = xv.chw()?;
        if h % 2 != 0 || w % 2 != 0 {
            return Err(Error::invalid_shape("avg_pool2", format!("odd plane {h}×{w}")));
        }
        let (oh, ow) = (h / 2, w / 2);
        let d = xv.data();
        let quarter = T::of(0.25);
        let out = Tensor::from_fn([c, oh, ow], |i| {
            let (ch, y, x) = (i / (oh * ow), (i / ow) % oh, i % ow);
            let base = ch * h * w + 2 * y * w + 2 * x;
            quarter * (d[base] + d[base + 1] + d[base + w] + d[base + w + 1])
        });
        (c, h, w, out)
    };
    x.tape().record(
        "avg_pool2",
        out,
        &[x],
        Box::new(move |ctx| {
            let (oh, ow) = (h / 2, w / 2);
            let quarter = T::of(0.25);
            let mut gx = vec![T::zero(); c * h * w];
            for (i, &g) in ctx.grad.iter().enumerate() {
                let (ch, y, x) = (i / (oh * ow), (i / ow) % oh, i % ow);
                let base = ch * h * w + 2 * y * w + 2 * x;
                for off in [0, 1, w, w + 1] {
                    gx[base + off] = quarter * g;
                }
            }
            vec![gx]
        }),
    )
}

/// Two-tap linear interpolation weights for resizing an axis of `n_in`
/// samples to `n_out`, half-pixel centers, edge clamped.
pub fn bilinear_taps(n_in: usize, n_out: usize) -> Vec<[(usize, f64); 2]> {
    let scale = n_in as f64 / n_out as f64;
    (0..n_out)
        .map(|o| {
            let src = ((o as f64 + 0.5) * scale - 0.5).clamp(0.0, (n_in - 1) as f64);
            let lo = src.floor() as usize;
            let hi = (lo + 1).min(n_in - 1);
            let frac = src - lo as f64;
            [(lo, 1.0 - frac), (hi, frac)]
        })
        .collect()
}

/// Bilinear resize of every plane, plain tensors.
pub fn resize_bilinear<T: Scalar>(x: &Tensor<T>, oh: usize, ow: usize) -> Result<Tensor<T>> {
    let (c, h, w) = x.chw()?;
    let (ty, tx) = (bilinear_taps(h, oh), bilinear_taps(w, ow));
    let d = x.data();
    Ok(Tensor::from_fn([c, oh, ow], |i| {
        let (ch, y, xo) = (i / (oh * ow), (i / ow) % oh, i % ow);
        let mut acc = T::zero();
        for &(sy, wy) in &ty[y] {
            for &(sx, wx) in &tx[xo] {
                acc += T::of(wy * wx) * d[ch * h * w + sy * w + sx];
            }
        }
        acc
    }))
}

/// Differentiable bilinear resize to `oh×ow`.
pub fn upsample_bilinear<'t, T: Scalar>(x: Var<'t, T>, oh: usize, ow: usize) -> Result<Var<'t, T>> {
    let (c, h, w, out) = {
        let xv = x.value();
        let (c, h, w) = xv.chw()?;
        (c, h, w, resize_bilinear(&xv, oh, ow)?)
    };
    x.tape().record(
        "upsample_bilinear",
        out,
        &[x],
        Box::new(move |ctx| {
            let (ty, tx) = (bilinear_taps(h, oh), bilinear_taps(w, ow));
            let mut gx = vec![T::zero(); c * h * w];
            for (i, &g) in ctx.grad.iter().enumerate() {
                let (ch, y, xo) = (i / (oh * ow), (i / ow) % oh, i % ow);
                for &(sy, wy) in &ty[y] {
                    for &(sx, wx) in &tx[xo] {
                        gx[ch * h * w + sy * w + sx] += T::of(wy * wx) * g;
                    }
                }
            }
            vec![gx]
        }),
    )
}

/// Mean binary cross-entropy of logits against `{0,1}` targets.
pub fn bce_with_logits<'t, T: Scalar>(logits: Var<'t, T>, target: &Tensor<T>) -> Result<Var<'t, T>> {
    let value = {
        let z = logits.value();
        if z.shape() != target.shape() {
            return Err(Error::shape("bce_with_logits", z.shape(), target.shape()));
        }
        let total: T = z
            .data()
            .iter()
            .zip(target.data())
            .map(|(&z, &t)| z.max(T::zero()) - z * t + (T::one() + (-z.abs()).exp()).ln())
            .sum();
        total / T::of_usize(z.numel())
    };
    let target = target.clone();
    logits.tape().record(
        "bce_with_logits",
        Tensor::scalar(value),
        &[logits],
        Box::new(move |ctx| {
            let z = ctx.inputs[0].data();
            let n = T::of_usize(z.len());
            vec![z
                .iter()
                .zip(target.data())
                .map(|(&z, &t)| ctx.grad[0] * (sigmoid(z) - t) / n)
                .collect()]
        }),
    )
}
