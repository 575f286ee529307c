use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::model::{FoamModel, ModelConfig};
use crate::autograd::{Tape, Var};
use crate::error::{Error, Result};
use crate::hdc::{hdc_step, ConsistentLossConfig, CorruptionConfig, LossType, PyramidModel};
use crate::nn::bce_with_logits;
use crate::params::ParamStore;
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Optimizer {
    Sgd,
    Adam,
}

impl std::str::FromStr for Optimizer {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "sgd" => Ok(Optimizer::Sgd),
            "adam" => Ok(Optimizer::Adam),
            _ => Err(Error::InvalidArgument(format!("unknown optimizer {s:?} (expected sgd or adam)"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub optimizer: Optimizer,
    pub momentum: f64,
    pub weight_decay: f64,
    /// Global gradient-norm ceiling; zero disables clipping.
    pub clip_norm: f64,
    pub seed: u64,
    pub enable_hdc: bool,
    pub model: ModelConfig,
    pub corruption: CorruptionConfig,
    pub hdc: ConsistentLossConfig,
}

impl Default for TrainConfig {
    fn default() -> Self {
        let model = ModelConfig::default();
        TrainConfig {
            epochs: 4,
            batch_size: 4,
            learning_rate: 0.01,
            optimizer: Optimizer::Sgd,
            momentum: 0.9,
            weight_decay: 0.0,
            clip_norm: 5.0,
            seed: 0,
            enable_hdc: true,
            hdc: ConsistentLossConfig::for_levels(LossType::I, model.levels),
            model,
            corruption: CorruptionConfig::default(),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        self.model.validate()?;
        if self.enable_hdc {
            if !self.model.enable_fstb {
                return Err(Error::InvalidArgument("the consistency loss requires blocks to be enabled".into()));
            }
            self.corruption.validate()?;
            self.hdc.validate()?;
            if let Some(&bad) = self.hdc.layers.iter().find(|&&l| l == 0 || l > self.model.levels) {
                return Err(Error::InvalidArgument(format!(
                    "aligned layer {bad} lies outside 1..={}",
                    self.model.levels
                )));
            }
        }
        if self.batch_size == 0 || self.epochs == 0 {
            return Err(Error::InvalidArgument("epochs and batch size must be positive".into()));
        }
        if !(self.learning_rate > 0.0) {
            return Err(Error::InvalidArgument(format!("learning rate must be positive, got {}", self.learning_rate)));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TraceRow {
    pub step: usize,
    pub task_loss: f64,
    pub consistent_loss: f64,
    pub total: f64,
}

pub fn trace_csv(rows: &[TraceRow]) -> String {
    let mut out = String::from("step,task_loss,consistent_loss,total\n");
    for r in rows {
        writeln!(out, "{},{:e},{:e},{:e}", r.step, r.task_loss, r.consistent_loss, r.total).expect("string write");
    }
    out
}

struct OptimizerState {
    first: Vec<Vec<f32>>,
    second: Vec<Vec<f32>>,
    steps: i32,
}

impl OptimizerState {
    fn new(store: &ParamStore<f32>) -> Self {
        let zeros: Vec<Vec<f32>> = store.ids().map(|id| vec![0.0; store.value(id).numel()]).collect();
        OptimizerState {
            second: zeros.clone(),
            first: zeros,
            steps: 0,
        }
    }

    fn apply(&mut self, store: &mut ParamStore<f32>, cfg: &TrainConfig) {
        self.steps += 1;
        let ids: Vec<_> = store.ids().collect();
        let mut scale = 1.0f32;
        if cfg.clip_norm > 0.0 {
            let norm = ids
                .iter()
                .flat_map(|&id| store.grad(id).iter())
                .map(|g| f64::from(*g).powi(2))
                .sum::<f64>()
                .sqrt();
            if norm > cfg.clip_norm {
                scale = (cfg.clip_norm / norm) as f32;
            }
        }
        let (lr, mom, wd) = (cfg.learning_rate as f32, cfg.momentum as f32, cfg.weight_decay as f32);
        let (b1, b2, eps) = (0.9f32, 0.999f32, 1e-8f32);
        for (k, &id) in ids.iter().enumerate() {
            let grad: Vec<f32> = store.grad(id).iter().map(|g| g * scale).collect();
            let value = store.value_mut(id).data_mut();
            for (i, (v, g)) in value.iter_mut().zip(grad).enumerate() {
                let g = g + wd * *v;
                match cfg.optimizer {
                    Optimizer::Sgd => {
                        let m = &mut self.first[k][i];
                        *m = mom * *m + g;
                        *v -= lr * *m;
                    }
                    Optimizer::Adam => {
                        let m = &mut self.first[k][i];
                        *m = b1 * *m + (1.0 - b1) * g;
                        let s = &mut self.second[k][i];
                        *s = b2 * *s + (1.0 - b2) * g * g;
                        let mh = *m / (1.0 - b1.powi(self.steps));
                        let sh = *s / (1.0 - b2.powi(self.steps));
                        *v -= lr * mh / (sh.sqrt() + eps);
                    }
                }
            }
        }
    }
}

pub struct TrainOutcome {
    pub model: FoamModel,
    pub store: ParamStore<f32>,
    pub trace: Vec<TraceRow>,
}

fn at_step(step: usize) -> impl Fn(Error) -> Error {
    move |e| match e {
        Error::NonFinite { .. } => Error::NonFiniteLoss { step },
        other => other,
    }
}

/// Losses of one sample on a fresh tape, after backward.
fn sample_losses(
    cfg: &TrainConfig,
    model: &FoamModel,
    store: &mut ParamStore<f32>,
    image: &Tensor<f32>,
    mask: &Tensor<f32>,
    corruption_seed: u64,
    weight: f32,
) -> Result<(f64, f64)> {
    let tape = Tape::new();
    let (_, h, w) = image.chw()?;
    let (task, consistent): (Var<f32>, Option<Var<f32>>) = if cfg.enable_hdc {
        let corruption = CorruptionConfig {
            seed: corruption_seed,
            ..cfg.corruption
        };
        let out = hdc_step(&tape, store, model, image, &corruption, &cfg.hdc)?;
        let logits = model.head_forward(out.base.last().expect("stage 0"), (h, w), store)?;
        (bce_with_logits(logits, mask)?, Some(out.loss))
    } else {
        let pyramid = model.pyramid(tape.constant(image.clone()), store)?;
        let logits = model.head_forward(pyramid.last().expect("stage 0"), (h, w), store)?;
        (bce_with_logits(logits, mask)?, None)
    };
    let total = match consistent {
        Some(c) => task.add(c)?,
        None => task,
    };
    tape.backward(total.scale(weight)?)?;
    tape.flush_param_grads(store);
    Ok((f64::from(task.item()), consistent.map_or(0.0, |c| f64::from(c.item()))))
}

/// Trains a fresh model on `(image, mask)` pairs.
pub fn train(cfg: &TrainConfig, data: &[(Tensor<f32>, Tensor<f32>)]) -> Result<TrainOutcome> {
    cfg.validate()?;
    if data.is_empty() {
        return Err(Error::InvalidArgument("training set is empty".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut store = ParamStore::new();
    let model = FoamModel::new(&mut store, cfg.model.clone(), &mut rng)?;
    let mut opt = OptimizerState::new(&store);
    let mut order: Vec<usize> = (0..data.len()).collect();
    let mut trace = Vec::new();
    let mut step = 0;
    for _ in 0..cfg.epochs {
        order.shuffle(&mut rng);
        for batch in order.chunks(cfg.batch_size) {
            store.zero_grad();
            let weight = 1.0 / batch.len() as f32;
            let (mut task, mut consistent) = (0.0, 0.0);
            for (j, &i) in batch.iter().enumerate() {
                let seed = cfg.seed.wrapping_add((step * cfg.batch_size + j) as u64);
                let (t, c) = sample_losses(cfg, &model, &mut store, &data[i].0, &data[i].1, seed, weight)
                    .map_err(at_step(step))?;
                task += t / batch.len() as f64;
                consistent += c / batch.len() as f64;
            }
            let total = task + consistent;
            if !total.is_finite() {
                return Err(Error::NonFiniteLoss { step });
            }
            trace.push(TraceRow {
                step,
                task_loss: task,
                consistent_loss: consistent,
                total,
            });
            opt.apply(&mut store, cfg);
            step += 1;
        }
    }
    Ok(TrainOutcome { model, store, trace })
}

#[derive(Clone, Debug, Serialize, Deserialize)]
struct CheckpointConfig {
    format: String,
    train: TrainConfig,
}

pub const CHECKPOINT_FORMAT: &str = "foam-checkpoint-v1";

/// Writes `config.json` and the parameter manifest directory `params/`.
pub fn save_checkpoint(dir: impl AsRef<Path>, cfg: &TrainConfig, store: &ParamStore<f32>) -> Result<()> {
    let dir = dir.as_ref();
    fs::create_dir_all(dir)?;
    let meta = CheckpointConfig {
        format: CHECKPOINT_FORMAT.into(),
        train: cfg.clone(),
    };
    fs::write(dir.join("config.json"), serde_json::to_string_pretty(&meta)?)?;
    store.save_dir(dir.join("params"))?;
    Ok(())
}

pub fn load_checkpoint(dir: impl AsRef<Path>) -> Result<(TrainConfig, FoamModel, ParamStore<f32>)> {
    let dir = dir.as_ref();
    let path = dir.join("config.json");
    let meta: CheckpointConfig = serde_json::from_str(&fs::read_to_string(&path)?)?;
    if meta.format != CHECKPOINT_FORMAT {
        return Err(Error::Format {
            path,
            msg: format!("unsupported checkpoint format {:?}", meta.format),
        });
    }
    let mut store = ParamStore::new();
    let model = FoamModel::new(&mut store, meta.train.model.clone(), &mut ChaCha8Rng::seed_from_u64(0))?;
    store.load_dir(dir.join("params"))?;
    Ok((meta.train, model, store))
}
