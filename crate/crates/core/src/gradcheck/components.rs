use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{gradcheck_where, GradReport};
use crate::autograd::{Tape, Var};
use crate::error::{Error, Result};
use crate::fstb::{fdba_forward, fsfn_forward, fstb_forward, sdca_forward, FstbConfig, FstbParams};
use crate::hdc::{consistent_loss, ConsistentLossConfig, LossType};
use crate::nn::{conv2d, dd_conv, sigma_block, Conv2dParams, DDConvParams, SigmaParams, DEFAULT_DILATION};
use crate::params::ParamStore;
use crate::spectral::ComplexVar;
use crate::tensor::Tensor;

const CHANNELS: usize = 4;
const SIDE: usize = 8;

/// A differentiable building block with a canned gradient check.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Component {
    Conv,
    Dd,
    Sigma,
    Sdca,
    Fdba,
    Fsfn,
    Fstb,
    ConsistentI,
    ConsistentII,
}

impl Component {
    pub const ALL: [Component; 9] = [
        Component::Conv,
        Component::Dd,
        Component::Sigma,
        Component::Sdca,
        Component::Fdba,
        Component::Fsfn,
        Component::Fstb,
        Component::ConsistentI,
        Component::ConsistentII,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Component::Conv => "conv",
            Component::Dd => "dd",
            Component::Sigma => "sigma",
            Component::Sdca => "sdca",
            Component::Fdba => "fdba",
            Component::Fsfn => "fsfn",
            Component::Fstb => "fstb",
            Component::ConsistentI => "consistent-i",
            Component::ConsistentII => "consistent-ii",
        }
    }
}

impl FromStr for Component {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let lower = s.to_ascii_lowercase();
        Component::ALL
            .into_iter()
            .find(|c| c.name() == lower)
            .ok_or_else(|| {
                let names: Vec<_> = Component::ALL.iter().map(|c| c.name()).collect();
                Error::InvalidArgument(format!("unknown component {s:?} (expected one of {})", names.join(", ")))
            })
    }
}

fn random(shape: [usize; 3], rng: &mut impl Rng) -> Tensor<f64> {
    Tensor::from_fn(shape, |_| rng.random_range(-1.0..1.0))
}

/// Moves zero-initialized biases and norm terms off their start values.
fn perturb(store: &mut ParamStore<f64>, rng: &mut impl Rng) {
    for id in store.ids().collect::<Vec<_>>() {
        let name = store.name(id);
        if name.ends_with("bias") || name.contains(".norm.") {
            store.value_mut(id).data_mut().iter_mut().for_each(|v| *v += rng.random_range(-0.3..0.3));
        }
    }
}

/// `Σ out ⊙ r` for a fixed random `r`.
fn project<'t>(tape: &'t Tape<f64>, out: Var<'t, f64>, r: &Tensor<f64>) -> Result<Var<'t, f64>> {
    out.mul(tape.constant(r.clone()))?.sum()
}

/// Gradient check of one component on a `4×8×8` input with seeded weights.
pub fn check_component(component: Component, seed: u64, tol: f64, h: f64) -> Result<Vec<GradReport>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut store = ParamStore::new();
    let shape = [CHANNELS, SIDE, SIDE];
    let x = random(shape, &mut rng);
    let r = random(shape, &mut rng);
    let r2 = random(shape, &mut rng);
    let block = |store: &mut ParamStore<f64>, rng: &mut ChaCha8Rng| {
        FstbParams::new(store, "blk", FstbConfig::new(CHANNELS), rng)
    };
    let reports = match component {
        Component::Conv => {
            let p = Conv2dParams::new(&mut store, "conv", CHANNELS, CHANNELS, 3, 1, &mut rng);
            perturb(&mut store, &mut rng);
            gradcheck_where(
                |t, s| project(t, conv2d(t.constant(x.clone()), &p, s)?, &r),
                &mut store,
                |_| true,
                tol,
                h,
            )?
        }
        Component::Dd => {
            let p = DDConvParams::new(&mut store, "dd", CHANNELS, CHANNELS, 3, DEFAULT_DILATION, &mut rng);
            perturb(&mut store, &mut rng);
            gradcheck_where(
                |t, s| project(t, dd_conv(t.constant(x.clone()), &p, s)?, &r),
                &mut store,
                |_| true,
                tol,
                h,
            )?
        }
        Component::Sigma => {
            let p = SigmaParams::new(&mut store, "sigma", CHANNELS, &mut rng);
            perturb(&mut store, &mut rng);
            let im = random(shape, &mut rng);
            gradcheck_where(
                |t, s| {
                    let z = ComplexVar {
                        re: t.constant(x.clone()),
                        im: t.constant(im.clone()),
                    };
                    let out = sigma_block(z, &p, s)?;
                    project(t, out.re, &r)?.add(project(t, out.im, &r2)?)
                },
                &mut store,
                |_| true,
                tol,
                h,
            )?
        }
        Component::Sdca | Component::Fdba | Component::Fsfn | Component::Fstb => {
            let p = block(&mut store, &mut rng)?;
            perturb(&mut store, &mut rng);
            let prefix = match component {
                Component::Sdca => "blk.sdca.",
                Component::Fdba => "blk.fdba.",
                Component::Fsfn => "blk.fsfn.",
                _ => "blk.",
            };
            gradcheck_where(
                |t, s| {
                    let xv = t.constant(x.clone());
                    let out = match component {
                        Component::Sdca => sdca_forward(xv, &p.sdca, s)?,
                        Component::Fdba => fdba_forward(xv, &p.fdba, s, &p.config)?,
                        Component::Fsfn => fsfn_forward(xv, &p.fsfn, s, &p.config)?,
                        _ => fstb_forward(xv, &p, s)?,
                    };
                    project(t, out, &r)
                },
                &mut store,
                |name| name.starts_with(prefix),
                tol,
                h,
            )?
        }
        Component::ConsistentI | Component::ConsistentII => {
            let loss_type = if component == Component::ConsistentI {
                LossType::I
            } else {
                LossType::II
            };
            let levels = 2;
            let mut ids = Vec::new();
            for branch in ["base", "corrupted"] {
                for n in 0..2 {
                    for l in 0..levels {
                        let side = SIDE >> l;
                        let v = random([CHANNELS, side, side], &mut rng);
                        ids.push(store.insert(format!("{branch}.s{n}.l{l}"), v));
                    }
                }
            }
            let cfg = ConsistentLossConfig {
                loss_type,
                layers: (1..=levels).collect(),
                lambda: 0.7,
                detach_base: false,
            };
            gradcheck_where(
                |t, s| {
                    let vars: Vec<_> = ids.iter().map(|&id| t.param(s, id)).collect();
                    let pyramid = |k: usize| -> Vec<Vec<Var<'_, f64>>> {
                        (0..2).map(|n| vars[k + n * levels..k + (n + 1) * levels].to_vec()).collect()
                    };
                    consistent_loss(&pyramid(0), &pyramid(2 * levels), &cfg)
                },
                &mut store,
                |name| !name.starts_with("base.s1.") && !name.starts_with("corrupted.s0."),
                tol,
                h,
            )?
        }
    };
    Ok(reports)
}
