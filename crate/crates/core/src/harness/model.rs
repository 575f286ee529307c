use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::autograd::Var;
use crate::error::{Error, Result};
use crate::fstb::{fstb_forward, FstbConfig, FstbParams};
use crate::hdc::{Pyramid, PyramidModel};
use crate::nn::{avg_pool2, conv2d, upsample_bilinear, Conv2dParams};
use crate::params::ParamStore;
use crate::spectral::FftNorm;
use crate::scalar::Scalar;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub in_channels: usize,
    pub channels: usize,
    /// Pyramid levels; level `l` has side `input / 2^l`.
    pub levels: usize,
    /// Cascaded blocks per refined level.
    pub n_stages: usize,
    /// How many of the coarsest levels carry blocks.
    pub fstb_levels: usize,
    pub enable_fstb: bool,
    pub fstb: FstbConfig,
    /// Multiplier on each block's output projection at initialization.
    pub block_init_gain: f64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            in_channels: 1,
            channels: 16,
            levels: 3,
            n_stages: 1,
            fstb_levels: 2,
            enable_fstb: true,
            fstb: FstbConfig {
                fft_norm: FftNorm::Ortho,
                ..FstbConfig::new(16)
            },
            block_init_gain: 0.0,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::InvalidArgument(msg));
        if self.levels == 0 || self.channels == 0 || self.in_channels == 0 {
            return bad("levels and channel counts must be positive".into());
        }
        if self.enable_fstb {
            if self.n_stages == 0 {
                return bad("at least one block stage is required when blocks are enabled".into());
            }
            if self.fstb_levels == 0 || self.fstb_levels > self.levels {
                return bad(format!("block levels must lie in 1..={}, got {}", self.levels, self.fstb_levels));
            }
            if self.fstb.channels != self.channels {
                return bad(format!(
                    "block width {} differs from backbone width {}",
                    self.fstb.channels, self.channels
                ));
            }
            self.fstb.validate()?;
            if !(self.block_init_gain.is_finite() && self.block_init_gain >= 0.0) {
                return bad(format!("block init gain must be finite and non-negative, got {}", self.block_init_gain));
            }
        }
        Ok(())
    }

    /// 0-based indices of the levels that carry blocks.
    pub fn refined_levels(&self) -> std::ops::Range<usize> {
        if self.enable_fstb {
            self.levels - self.fstb_levels..self.levels
        } else {
            self.levels..self.levels
        }
    }

    /// Stages in the pyramid, counting the backbone output as stage 0.
    pub fn stage_count(&self) -> usize {
        if self.enable_fstb {
            self.n_stages + 1
        } else {
            1
        }
    }
}

/// Backbone, per-level block cascades and segmentation head.
#[derive(Clone, Debug)]
pub struct FoamModel {
    pub config: ModelConfig,
    pub backbone: Vec<Conv2dParams>,
    /// `blocks[n][k]`: stage `n+1` on the `k`-th refined level.
    pub blocks: Vec<Vec<FstbParams>>,
    pub head: Vec<Conv2dParams>,
}

impl FoamModel {
    pub fn new<T: Scalar>(store: &mut ParamStore<T>, config: ModelConfig, rng: &mut impl Rng) -> Result<Self> {
        config.validate()?;
        let c = config.channels;
        let backbone = (0..config.levels)
            .map(|l| {
                let c_in = if l == 0 { config.in_channels } else { c };
                Conv2dParams::new(store, &format!("backbone.{l}"), c_in, c, 3, 1, rng)
            })
            .collect();
        let mut blocks = Vec::new();
        if config.enable_fstb {
            for n in 0..config.n_stages {
                let stage = config
                    .refined_levels()
                    .map(|l| FstbParams::new(store, &format!("fstb.s{}.l{}", n + 1, l + 1), config.fstb, rng))
                    .collect::<Result<Vec<_>>>()?;
                for block in &stage {
                    let gain = T::of(config.block_init_gain);
                    for v in store.value_mut(block.fsfn.fuse.weight).data_mut() {
                        *v = *v * gain;
                    }
                }
                blocks.push(stage);
            }
        }
        let head = (0..config.levels)
            .map(|l| Conv2dParams::pointwise(store, &format!("head.{l}"), c, 1, rng))
            .collect();
        Ok(FoamModel {
            config,
            backbone,
            blocks,
            head,
        })
    }

    /// Stage-0 features, one per level.
    pub fn backbone_forward<'t, T: Scalar>(&self, x: Var<'t, T>, store: &ParamStore<T>) -> Result<Vec<Var<'t, T>>> {
        let mut levels = Vec::with_capacity(self.backbone.len());
        let mut h = x;
        for conv in &self.backbone {
            h = avg_pool2(conv2d(h, conv, store)?.relu()?)?;
            levels.push(h);
        }
        Ok(levels)
    }

    /// Logits at input resolution from the last stage of a pyramid.
    pub fn head_forward<'t, T: Scalar>(
        &self,
        top: &[Var<'t, T>],
        out_hw: (usize, usize),
        store: &ParamStore<T>,
    ) -> Result<Var<'t, T>> {
        let mut logits: Option<Var<'t, T>> = None;
        for (feat, conv) in top.iter().zip(&self.head) {
            let up = upsample_bilinear(conv2d(*feat, conv, store)?, out_hw.0, out_hw.1)?;
            logits = Some(match logits {
                Some(acc) => acc.add(up)?,
                None => up,
            });
        }
        logits.ok_or_else(|| Error::InvalidArgument("empty pyramid".into()))
    }

    /// Full inference path: image to logits.
    pub fn forward<'t, T: Scalar>(&self, x: Var<'t, T>, store: &ParamStore<T>) -> Result<Var<'t, T>> {
        let (_, h, w) = x.value().chw()?;
        let pyramid = self.pyramid(x, store)?;
        self.head_forward(pyramid.last().expect("stage 0"), (h, w), store)
    }
}

impl<T: Scalar> PyramidModel<T> for FoamModel {
    fn pyramid<'t>(&self, image: Var<'t, T>, store: &ParamStore<T>) -> Result<Pyramid<'t, T>> {
        let mut stages = vec![self.backbone_forward(image, store)?];
        let refined = self.config.refined_levels();
        for stage in &self.blocks {
            let mut next = stages.last().expect("stage 0").clone();
            for (block, l) in stage.iter().zip(refined.clone()) {
                next[l] = fstb_forward(next[l], block, store)?;
            }
            stages.push(next);
        }
        Ok(stages)
    }
}
