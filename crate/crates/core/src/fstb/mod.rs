//! Frequency-spatial transformer block: channel self-attention in the spatial
//! domain, band self-attention over the magnitude spectrum, and a two-stage
//! frequency/spatial feed-forward network.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::autograd::{concat, Var};
use crate::error::{Error, Result};
use crate::nn::{conv2d, dd_conv, sigma_block, Conv2dParams, DDConvParams, SigmaParams, DEFAULT_DILATION};
use crate::params::ParamStore;
use crate::scalar::Scalar;
use crate::spectral::{complex_mul, fft2_var, ifft2_var, magnitude_var, phase_var, polar_var, FftNorm};

/// Largest `H·W` accepted by the band attention, whose map is `N×N`.
pub const DEFAULT_MAX_POSITIONS: usize = 4096;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct FstbConfig {
    pub channels: usize,
    pub dilation: usize,
    pub max_positions: usize,
    pub fft_norm: FftNorm,
    /// Adds the block input to its output.
    pub residual: bool,
}

impl FstbConfig {
    pub fn new(channels: usize) -> Self {
        FstbConfig {
            channels,
            dilation: DEFAULT_DILATION,
            max_positions: DEFAULT_MAX_POSITIONS,
            fft_norm: FftNorm::Backward,
            residual: true,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.channels < 2 || self.channels % 2 != 0 {
            return Err(Error::InvalidArgument(format!(
                "channel count must be even and at least 2, got {}",
                self.channels
            )));
        }
        if self.dilation == 0 {
            return Err(Error::InvalidArgument("dilation must be positive".into()));
        }
        Ok(())
    }
}

/// A `{DD₃, DD₅}` pair, each mapping to half the channels.
#[derive(Clone, Debug)]
pub struct DdPair {
    pub dd3: DDConvParams,
    pub dd5: DDConvParams,
}

impl DdPair {
    fn new<T: Scalar>(store: &mut ParamStore<T>, name: &str, cfg: &FstbConfig, rng: &mut impl Rng) -> Self {
        let (c, half) = (cfg.channels, cfg.channels / 2);
        DdPair {
            dd3: DDConvParams::new(store, &format!("{name}.dd3"), c, half, 3, cfg.dilation, rng),
            dd5: DDConvParams::new(store, &format!("{name}.dd5"), c, half, 5, cfg.dilation, rng),
        }
    }

    fn forward<'t, T: Scalar>(&self, x: Var<'t, T>, store: &ParamStore<T>) -> Result<Var<'t, T>> {
        concat(&[dd_conv(x, &self.dd3, store)?, dd_conv(x, &self.dd5, store)?])
    }
}

/// Positional `1×1` projection followed by a [`DdPair`].
#[derive(Clone, Debug)]
pub struct Projection {
    pub embed: Conv2dParams,
    pub pair: DdPair,
}

impl Projection {
    fn new<T: Scalar>(store: &mut ParamStore<T>, name: &str, cfg: &FstbConfig, rng: &mut impl Rng) -> Self {
        let c = cfg.channels;
        Projection {
            embed: Conv2dParams::pointwise(store, &format!("{name}.embed"), c, c, rng),
            pair: DdPair::new(store, name, cfg, rng),
        }
    }

    fn forward<'t, T: Scalar>(&self, x: Var<'t, T>, store: &ParamStore<T>) -> Result<Var<'t, T>> {
        self.pair.forward(conv2d(x, &self.embed, store)?, store)
    }
}

#[derive(Clone, Debug)]
pub struct SdcaParams {
    pub query: Projection,
    pub key: Projection,
    pub value: Projection,
    pub residual: DdPair,
    pub fuse: Conv2dParams,
}

#[derive(Clone, Debug)]
pub struct FdbaParams {
    pub sigma: SigmaParams,
    pub fuse: Conv2dParams,
}

#[derive(Clone, Debug)]
pub struct FsfnParams {
    pub spatial_gate: DDConvParams,
    pub freq_gate: SigmaParams,
    pub joint_freq_gate: SigmaParams,
    pub joint_spatial: DDConvParams,
    pub fuse: Conv2dParams,
}

#[derive(Clone, Debug)]
pub struct FstbParams {
    pub config: FstbConfig,
    pub sdca: SdcaParams,
    pub fdba: FdbaParams,
    pub fsfn: FsfnParams,
    pub combine: Conv2dParams,
}

impl FstbParams {
    /// Registers every weight of one block under `prefix`.
    pub fn new<T: Scalar>(
        store: &mut ParamStore<T>,
        prefix: &str,
        config: FstbConfig,
        rng: &mut impl Rng,
    ) -> Result<Self> {
        config.validate()?;
        let c = config.channels;
        let n = |s: &str| format!("{prefix}.{s}");
        let sdca = SdcaParams {
            query: Projection::new(store, &n("sdca.query"), &config, rng),
            key: Projection::new(store, &n("sdca.key"), &config, rng),
            value: Projection::new(store, &n("sdca.value"), &config, rng),
            residual: DdPair::new(store, &n("sdca.residual"), &config, rng),
            fuse: Conv2dParams::pointwise(store, &n("sdca.fuse"), 2 * c, c, rng),
        };
        let fdba = FdbaParams {
            sigma: SigmaParams::new(store, &n("fdba.sigma"), c, rng),
            fuse: Conv2dParams::pointwise(store, &n("fdba.fuse"), 2 * c, c, rng),
        };
        let fsfn = FsfnParams {
            spatial_gate: DDConvParams::new(store, &n("fsfn.spatial_gate"), c, c, 3, config.dilation, rng),
            freq_gate: SigmaParams::new(store, &n("fsfn.freq_gate"), c, rng),
            joint_freq_gate: SigmaParams::new(store, &n("fsfn.joint_freq_gate"), 2 * c, rng),
            joint_spatial: DDConvParams::new(store, &n("fsfn.joint_spatial"), 2 * c, c, 3, config.dilation, rng),
            fuse: Conv2dParams::pointwise(store, &n("fsfn.fuse"), 3 * c, c, rng),
        };
        let combine = Conv2dParams::pointwise(store, &n("combine"), 2 * c, c, rng);
        Ok(FstbParams {
            config,
            sdca,
            fdba,
            fsfn,
            combine,
        })
    }
}

fn check_input<T: Scalar>(x: Var<'_, T>, channels: usize) -> Result<(usize, usize, usize)> {
    let (c, h, w) = x.value().chw()?;
    if c != channels {
        return Err(Error::InvalidArgument(format!("block expects {channels} channels, got {c}")));
    }
    if c % 2 != 0 {
        return Err(Error::InvalidArgument(format!("channel count must be even, got {c}")));
    }
    Ok((c, h, w))
}

/// Output of the spatial branch with its `C×C` attention map.
pub struct SdcaTrace<'t, T> {
    pub output: Var<'t, T>,
    pub attention: Var<'t, T>,
}

pub fn sdca_traced<'t, T: Scalar>(
    x: Var<'t, T>,
    p: &SdcaParams,
    store: &ParamStore<T>,
) -> Result<SdcaTrace<'t, T>> {
    let (c, h, w) = check_input(x, p.fuse.c_out)?;
    let n = h * w;
    let q = p.query.forward(x, store)?.reshape([c, n])?;
    let k = p.key.forward(x, store)?.reshape([c, n])?;
    let v = p.value.forward(x, store)?.reshape([c, n])?;
    let scale = T::one() / T::of_usize(n).sqrt();
    let attention = q.matmul(k.t()?)?.scale(scale)?.softmax(1)?;
    let attended = attention.matmul(v)?.reshape([c, h, w])?;
    let residual = p.residual.forward(x, store)?;
    let output = conv2d(concat(&[attended, residual])?, &p.fuse, store)?;
    Ok(SdcaTrace { output, attention })
}

pub fn sdca_forward<'t, T: Scalar>(x: Var<'t, T>, p: &SdcaParams, store: &ParamStore<T>) -> Result<Var<'t, T>> {
    Ok(sdca_traced(x, p, store)?.output)
}

/// Output of the frequency branch with its `N×N` attention map and the phase
/// used to rebuild the attended spectrum.
pub struct FdbaTrace<'t, T> {
    pub output: Var<'t, T>,
    pub attention: Var<'t, T>,
    pub phase: Var<'t, T>,
}

pub fn fdba_traced<'t, T: Scalar>(
    x: Var<'t, T>,
    p: &FdbaParams,
    store: &ParamStore<T>,
    cfg: &FstbConfig,
) -> Result<FdbaTrace<'t, T>> {
    let (c, h, w) = check_input(x, p.fuse.c_out)?;
    let n = h * w;
    if n > cfg.max_positions {
        return Err(Error::InvalidArgument(format!(
            "band attention over {h}×{w} = {n} positions exceeds the limit of {}; downsample the input first",
            cfg.max_positions
        )));
    }
    let spectrum = fft2_var(x, None, cfg.fft_norm)?;
    let magnitude = magnitude_var(spectrum)?;
    let phase = phase_var(spectrum)?;
    let m = magnitude.reshape([c, n])?;
    let scale = T::one() / T::of_usize(c).sqrt();
    let attention = m.t()?.matmul(m)?.scale(scale)?.softmax(1)?;
    let attended = attention.matmul(m.t()?)?.t()?.reshape([c, h, w])?;
    let refined = ifft2_var(polar_var(attended, phase)?, cfg.fft_norm)?.re;
    let gated = ifft2_var(sigma_block(spectrum, &p.sigma, store)?, cfg.fft_norm)?.re;
    let output = conv2d(concat(&[refined, gated])?, &p.fuse, store)?;
    Ok(FdbaTrace {
        output,
        attention,
        phase,
    })
}

pub fn fdba_forward<'t, T: Scalar>(
    x: Var<'t, T>,
    p: &FdbaParams,
    store: &ParamStore<T>,
    cfg: &FstbConfig,
) -> Result<Var<'t, T>> {
    Ok(fdba_traced(x, p, store, cfg)?.output)
}

/// `GELU(v)·v`.
fn gelu_gate<'t, T: Scalar>(v: Var<'t, T>) -> Result<Var<'t, T>> {
    v.gelu()?.mul(v)
}

pub fn fsfn_forward<'t, T: Scalar>(
    x: Var<'t, T>,
    p: &FsfnParams,
    store: &ParamStore<T>,
    cfg: &FstbConfig,
) -> Result<Var<'t, T>> {
    check_input(x, p.fuse.c_out)?;
    let spectrum = fft2_var(x, None, cfg.fft_norm)?;
    let gated = magnitude_var(complex_mul(sigma_block(spectrum, &p.freq_gate, store)?, spectrum)?)?;
    let freq = gelu_gate(gated)?;
    let spatial = gelu_gate(dd_conv(x, &p.spatial_gate, store)?)?;
    let joint = concat(&[spatial, freq])?;

    let joint_spectrum = fft2_var(joint, None, cfg.fft_norm)?;
    let joint_gated = complex_mul(sigma_block(joint_spectrum, &p.joint_freq_gate, store)?, joint_spectrum)?;
    let joint_freq = magnitude_var(ifft2_var(joint_gated, cfg.fft_norm)?)?;
    let joint_spatial = dd_conv(joint, &p.joint_spatial, store)?;
    conv2d(concat(&[joint_freq, joint_spatial])?, &p.fuse, store)
}

pub fn fstb_forward<'t, T: Scalar>(x: Var<'t, T>, p: &FstbParams, store: &ParamStore<T>) -> Result<Var<'t, T>> {
    check_input(x, p.config.channels)?;
    let spatial = sdca_forward(x, &p.sdca, store)?;
    let freq = fdba_forward(x, &p.fdba, store, &p.config)?;
    let merged = conv2d(concat(&[spatial, freq])?, &p.combine, store)?;
    let out = fsfn_forward(merged, &p.fsfn, store, &p.config)?;
    if p.config.residual {
        out.add(x)
    } else {
        Ok(out)
    }
}

/// Cascades the blocks and returns the output of every one of them.
pub fn fstb_stack<'t, T: Scalar>(
    x: Var<'t, T>,
    blocks: &[FstbParams],
    store: &ParamStore<T>,
) -> Result<Vec<Var<'t, T>>> {
    if blocks.is_empty() {
        return Err(Error::InvalidArgument("a block stack needs at least one block".into()));
    }
    let mut outputs: Vec<Var<'t, T>> = Vec::with_capacity(blocks.len());
    for p in blocks {
        let input = outputs.last().copied().unwrap_or(x);
        outputs.push(fstb_forward(input, p, store)?);
    }
    Ok(outputs)
}
