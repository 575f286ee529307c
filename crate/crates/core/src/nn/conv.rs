use rand::Rng;

use crate::autograd::Var;
use crate::error::{Error, Result};
use crate::params::{init_with, ParamId, ParamStore};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// Geometry shared by the dense and depthwise kernels.
#[derive(Clone, Copy, Debug)]
struct Geometry {
    h: usize,
    w: usize,
    k: usize,
    dilation: usize,
}

impl Geometry {
    fn pad(&self) -> usize {
        self.dilation * (self.k - 1) / 2
    }

    /// Rows/cols of the output that see input offset `tap·dilation − pad`,
    /// and that offset.
    fn span(&self, tap: usize, extent: usize) -> (usize, usize, isize) {
        let off = (tap * self.dilation) as isize - self.pad() as isize;
        let lo = (-off).max(0) as usize;
        let hi = ((extent as isize) - off.max(0)).max(0) as usize;
        (lo.min(hi), hi, off)
    }
}

/// Correlates plane `src` into `dst` with one kernel, accumulating.
fn correlate_plane<T: Scalar>(dst: &mut [T], src: &[T], kernel: &[T], g: Geometry) {
    for ky in 0..g.k {
        let (y0, y1, oy) = g.span(ky, g.h);
        for kx in 0..g.k {
            let wv = kernel[ky * g.k + kx];
            let (x0, x1, ox) = g.span(kx, g.w);
            if wv.is_zero() || x0 == x1 {
                continue;
            }
            for y in y0..y1 {
                let sy = (y as isize + oy) as usize;
                let d = &mut dst[y * g.w + x0..y * g.w + x1];
                let s0 = (x0 as isize + ox) as usize;
                let s = &src[sy * g.w + s0..sy * g.w + s0 + (x1 - x0)];
                d.iter_mut().zip(s).for_each(|(d, &s)| *d += wv * s);
            }
        }
    }
}

/// Backward of [`correlate_plane`]: adds into the input gradient and the
/// kernel gradient.
fn correlate_plane_backward<T: Scalar>(
    grad_out: &[T],
    src: &[T],
    kernel: &[T],
    grad_src: &mut [T],
    grad_kernel: &mut [T],
    g: Geometry,
) {
    for ky in 0..g.k {
        let (y0, y1, oy) = g.span(ky, g.h);
        for kx in 0..g.k {
            let wv = kernel[ky * g.k + kx];
            let (x0, x1, ox) = g.span(kx, g.w);
            if x0 == x1 {
                continue;
            }
            let mut acc = T::zero();
            for y in y0..y1 {
                let sy = (y as isize + oy) as usize;
                let s0 = (x0 as isize + ox) as usize;
                let go = &grad_out[y * g.w + x0..y * g.w + x1];
                let s = &src[sy * g.w + s0..sy * g.w + s0 + (x1 - x0)];
                let gs = &mut grad_src[sy * g.w + s0..sy * g.w + s0 + (x1 - x0)];
                for ((&go, &s), gs) in go.iter().zip(s).zip(gs) {
                    acc += go * s;
                    *gs += wv * go;
                }
            }
            grad_kernel[ky * g.k + kx] += acc;
        }
    }
}

fn check_kernel(op: &'static str, k: usize, dilation: usize) -> Result<()> {
    if k % 2 == 0 || dilation == 0 {
        return Err(Error::InvalidArgument(format!(
            "{op}: kernel size must be odd and dilation positive (k={k}, dilation={dilation})"
        )));
    }
    Ok(())
}

/// Dense 2D cross-correlation with zero "same" padding:
/// `x[C_in×H×W]`, `weight[C_out×C_in×k×k]`, optional `bias[C_out]`.
pub fn conv2d_raw<'t, T: Scalar>(
    x: Var<'t, T>,
    weight: Var<'t, T>,
    bias: Option<Var<'t, T>>,
    dilation: usize,
) -> Result<Var<'t, T>> {
    let (geo, c_in, c_out, out) = {
        let (xv, wv) = (x.value(), weight.value());
        let bv = bias.map(|b| b.value());
        let (c_in, h, w) = xv.chw()?;
        let &[c_out, wc_in, k, k2] = wv.shape() else {
            return Err(Error::invalid_shape("conv2d", format!("weight shape {:?}", wv.shape())));
        };
        if wc_in != c_in || k != k2 || bv.as_ref().is_some_and(|b| b.shape() != [c_out]) {
            return Err(Error::shape("conv2d", xv.shape(), wv.shape()));
        }
        check_kernel("conv2d", k, dilation)?;
        let geo = Geometry { h, w, k, dilation };
        let plane = h * w;
        let mut out = vec![T::zero(); c_out * plane];
        for co in 0..c_out {
            let dst = &mut out[co * plane..(co + 1) * plane];
            if let Some(bv) = &bv {
                dst.iter_mut().for_each(|v| *v = bv.data()[co]);
            }
            for ci in 0..c_in {
                let kernel = &wv.data()[(co * c_in + ci) * k * k..(co * c_in + ci + 1) * k * k];
                correlate_plane(dst, &xv.data()[ci * plane..(ci + 1) * plane], kernel, geo);
            }
        }
        (geo, c_in, c_out, Tensor::new([c_out, h, w], out)?)
    };
    let inputs: Vec<_> = [x, weight].into_iter().chain(bias).collect();
    x.tape().record(
        "conv2d",
        out,
        &inputs,
        Box::new(move |ctx| {
            let (xd, wd) = (ctx.inputs[0].data(), ctx.inputs[1].data());
            let plane = geo.h * geo.w;
            let kk = geo.k * geo.k;
            let mut gx = vec![T::zero(); xd.len()];
            let mut gw = vec![T::zero(); wd.len()];
            let mut gb = vec![T::zero(); c_out];
            for co in 0..c_out {
                let go = &ctx.grad[co * plane..(co + 1) * plane];
                gb[co] = go.iter().copied().sum();
                for ci in 0..c_in {
                    let widx = (co * c_in + ci) * kk;
                    correlate_plane_backward(
                        go,
                        &xd[ci * plane..(ci + 1) * plane],
                        &wd[widx..widx + kk],
                        &mut gx[ci * plane..(ci + 1) * plane],
                        &mut gw[widx..widx + kk],
                        geo,
                    );
                }
            }
            if ctx.inputs.len() == 3 {
                vec![gx, gw, gb]
            } else {
                vec![gx, gw]
            }
        }),
    )
}

/// Per-channel 2D cross-correlation: `x[C×H×W]`, `weight[C×1×k×k]`, no bias.
pub fn depthwise_conv2d_raw<'t, T: Scalar>(
    x: Var<'t, T>,
    weight: Var<'t, T>,
    dilation: usize,
) -> Result<Var<'t, T>> {
    let (geo, out) = {
        let (xv, wv) = (x.value(), weight.value());
        let (c, h, w) = xv.chw()?;
        let &[wc, 1, k, k2] = wv.shape() else {
            return Err(Error::shape("depthwise_conv2d", xv.shape(), wv.shape()));
        };
        if wc != c || k != k2 {
            return Err(Error::shape("depthwise_conv2d", xv.shape(), wv.shape()));
        }
        check_kernel("depthwise_conv2d", k, dilation)?;
        let geo = Geometry { h, w, k, dilation };
        let plane = h * w;
        let mut out = vec![T::zero(); c * plane];
        for ch in 0..c {
            correlate_plane(
                &mut out[ch * plane..(ch + 1) * plane],
                &xv.data()[ch * plane..(ch + 1) * plane],
                &wv.data()[ch * k * k..(ch + 1) * k * k],
                geo,
            );
        }
        (geo, Tensor::new([c, h, w], out)?)
    };
    x.tape().record(
        "depthwise_conv2d",
        out,
        &[x, weight],
        Box::new(move |ctx| {
            let (xd, wd) = (ctx.inputs[0].data(), ctx.inputs[1].data());
            let plane = geo.h * geo.w;
            let kk = geo.k * geo.k;
            let mut gx = vec![T::zero(); xd.len()];
            let mut gw = vec![T::zero(); wd.len()];
            for ch in 0..xd.len() / plane {
                correlate_plane_backward(
                    &ctx.grad[ch * plane..(ch + 1) * plane],
                    &xd[ch * plane..(ch + 1) * plane],
                    &wd[ch * kk..(ch + 1) * kk],
                    &mut gx[ch * plane..(ch + 1) * plane],
                    &mut gw[ch * kk..(ch + 1) * kk],
                    geo,
                );
            }
            vec![gx, gw]
        }),
    )
}

/// Weights of a standard `k×k` convolution with `C_out` outputs.
#[derive(Clone, Debug)]
pub struct Conv2dParams {
    pub weight: ParamId,
    pub bias: Option<ParamId>,
    pub c_in: usize,
    pub c_out: usize,
    pub kernel: usize,
    pub dilation: usize,
}

impl Conv2dParams {
    pub fn new<T: Scalar>(
        store: &mut ParamStore<T>,
        name: &str,
        c_in: usize,
        c_out: usize,
        kernel: usize,
        dilation: usize,
        rng: &mut impl Rng,
    ) -> Self {
        let weight = store.insert(
            format!("{name}.weight"),
            init_with(&[c_out, c_in, kernel, kernel], rng),
        );
        store.set_dilation(weight, dilation);
        let bias = Some(store.insert(format!("{name}.bias"), Tensor::zeros([c_out])));
        Conv2dParams {
            weight,
            bias,
            c_in,
            c_out,
            kernel,
            dilation,
        }
    }

    pub fn pointwise<T: Scalar>(
        store: &mut ParamStore<T>,
        name: &str,
        c_in: usize,
        c_out: usize,
        rng: &mut impl Rng,
    ) -> Self {
        Self::new(store, name, c_in, c_out, 1, 1, rng)
    }

    /// `1×1` projection without bias, for use ahead of a normalization.
    pub fn pointwise_unbiased<T: Scalar>(
        store: &mut ParamStore<T>,
        name: &str,
        c_in: usize,
        c_out: usize,
        rng: &mut impl Rng,
    ) -> Self {
        let weight = store.insert(format!("{name}.weight"), init_with(&[c_out, c_in, 1, 1], rng));
        Conv2dParams {
            weight,
            bias: None,
            c_in,
            c_out,
            kernel: 1,
            dilation: 1,
        }
    }
}

pub fn conv2d<'t, T: Scalar>(
    x: Var<'t, T>,
    p: &Conv2dParams,
    store: &ParamStore<T>,
) -> Result<Var<'t, T>> {
    let c_in = x.value().chw()?.0;
    if c_in != p.c_in {
        return Err(Error::InvalidArgument(format!(
            "conv2d expects {} input channels, got {c_in}",
            p.c_in
        )));
    }
    let tape = x.tape();
    conv2d_raw(
        x,
        tape.param(store, p.weight),
        p.bias.map(|b| tape.param(store, b)),
        p.dilation,
    )
}

/// Depthwise separable dilated convolution: per-channel `k×k` dilated
/// kernels followed by a `1×1` projection to `C_out`.
#[derive(Clone, Debug)]
pub struct DDConvParams {
    pub depthwise: ParamId,
    pub pointwise: Conv2dParams,
    pub channels: usize,
    pub kernel: usize,
    pub dilation: usize,
}

impl DDConvParams {
    pub fn new<T: Scalar>(
        store: &mut ParamStore<T>,
        name: &str,
        c_in: usize,
        c_out: usize,
        kernel: usize,
        dilation: usize,
        rng: &mut impl Rng,
    ) -> Self {
        let depthwise = store.insert(
            format!("{name}.depthwise"),
            init_with(&[c_in, 1, kernel, kernel], rng),
        );
        store.set_dilation(depthwise, dilation);
        let pointwise = Conv2dParams::pointwise(store, &format!("{name}.pointwise"), c_in, c_out, rng);
        DDConvParams {
            depthwise,
            pointwise,
            channels: c_in,
            kernel,
            dilation,
        }
    }

    pub fn c_out(&self) -> usize {
        self.pointwise.c_out
    }
}

pub fn dd_conv<'t, T: Scalar>(
    x: Var<'t, T>,
    p: &DDConvParams,
    store: &ParamStore<T>,
) -> Result<Var<'t, T>> {
    let c = x.value().chw()?.0;
    if c != p.channels {
        return Err(Error::InvalidArgument(format!(
            "dd_conv expects {} channels, got {c}",
            p.channels
        )));
    }
    let dw = depthwise_conv2d_raw(x, x.tape().param(store, p.depthwise), p.dilation)?;
    conv2d(dw, &p.pointwise, store)
}
