use serde::{Deserialize, Serialize};

use crate::autograd::Var;
use crate::error::{Error, Result};
use crate::scalar::Scalar;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum LossType {
    /// Spatial-softmax KL divergence.
    I,
    /// Squared difference normalized by the plane size.
    II,
}

impl std::str::FromStr for LossType {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_uppercase().as_str() {
            "I" | "1" => Ok(LossType::I),
            "II" | "2" => Ok(LossType::II),
            _ => Err(Error::InvalidArgument(format!("unknown loss type {s:?} (expected I or II)"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ConsistentLossConfig {
    pub loss_type: LossType,
    /// 1-based pyramid levels to align.
    pub layers: Vec<usize>,
    pub lambda: f64,
    pub detach_base: bool,
}

impl ConsistentLossConfig {
    /// Aligns the upper half of `levels` pyramid levels.
    pub fn for_levels(loss_type: LossType, levels: usize) -> Self {
        ConsistentLossConfig {
            loss_type,
            layers: (levels / 2 + 1..=levels).collect(),
            lambda: 1.0,
            detach_base: true,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.layers.is_empty() {
            return Err(Error::InvalidArgument("the aligned layer set must not be empty".into()));
        }
        if !(self.lambda > 0.0) {
            return Err(Error::InvalidArgument(format!("loss weight must be positive, got {}", self.lambda)));
        }
        Ok(())
    }
}

/// `stages[n][l]`: the output of stage `n` at pyramid level `l` (0-based).
pub type Pyramid<'t, T> = Vec<Vec<Var<'t, T>>>;

/// Mean over channels of `KL(softmax(target) ‖ softmax(pred))`, softmax over
/// each channel's spatial positions.
pub fn kl_alignment<'t, T: Scalar>(target: Var<'t, T>, pred: Var<'t, T>) -> Result<Var<'t, T>> {
    let (c, h, w) = target.value().chw()?;
    let lt = target.reshape([c, h * w])?.log_softmax(1)?;
    let lp = pred.reshape([c, h * w])?.log_softmax(1)?;
    lt.exp()?.mul(lt.sub(lp)?)?.sum()?.scale(T::one() / T::of_usize(c))
}

/// `Σ (target − pred)² / (H·W)`.
pub fn squared_alignment<'t, T: Scalar>(target: Var<'t, T>, pred: Var<'t, T>) -> Result<Var<'t, T>> {
    let (_, h, w) = target.value().chw()?;
    target.sub(pred)?.square()?.sum()?.scale(T::one() / T::of_usize(h * w))
}

/// Aligns corrupted stage `n` with base stage `n−1` for every `n ≥ 1` and
/// every configured level.
pub fn consistent_loss<'t, T: Scalar>(
    base: &Pyramid<'t, T>,
    corrupted: &Pyramid<'t, T>,
    cfg: &ConsistentLossConfig,
) -> Result<Var<'t, T>> {
    cfg.validate()?;
    if base.len() != corrupted.len() || base.len() < 2 {
        return Err(Error::InvalidArgument(format!(
            "pyramids need matching stage counts of at least 2, got {} and {}",
            base.len(),
            corrupted.len()
        )));
    }
    let levels = base[0].len();
    for stage in base.iter().chain(corrupted) {
        if stage.len() != levels {
            return Err(Error::InvalidArgument("pyramid stages disagree on level count".into()));
        }
    }
    if let Some(&bad) = cfg.layers.iter().find(|&&l| l == 0 || l > levels) {
        return Err(Error::InvalidArgument(format!("layer {bad} is outside the pyramid's 1..={levels}")));
    }
    let mut total: Option<Var<'t, T>> = None;
    for n in 1..base.len() {
        for &l in &cfg.layers {
            let (target, pred) = (base[n - 1][l - 1], corrupted[n][l - 1]);
            if target.shape() != pred.shape() {
                return Err(Error::shape("consistent_loss", &target.shape(), &pred.shape()));
            }
            let target = if cfg.detach_base { target.detach() } else { target };
            let term = match cfg.loss_type {
                LossType::I => kl_alignment(target, pred)?,
                LossType::II => squared_alignment(target, pred)?,
            };
            total = Some(match total {
                Some(t) => t.add(term)?,
                None => term,
            });
        }
    }
    total.expect("at least one term").scale(T::of(cfg.lambda))
}
