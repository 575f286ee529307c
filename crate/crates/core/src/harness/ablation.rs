use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use super::config::ExperimentConfig;
use super::eval::evaluate;
use super::train::{train, TrainConfig};
use crate::error::{Error, Result};
use crate::scenes::{gen_scene, scene_seed, SceneConfig};
use crate::tensor::Tensor;

pub type Sample = (Tensor<f32>, Tensor<f32>);

/// Offset that keeps evaluation scenes disjoint from training scenes.
const TEST_SEED_OFFSET: u64 = 0x7E57;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Variant {
    Baseline,
    Fstb,
    FstbHdc,
}

impl Variant {
    pub const ALL: [Variant; 3] = [Variant::Baseline, Variant::Fstb, Variant::FstbHdc];

    pub fn label(self) -> &'static str {
        match self {
            Variant::Baseline => "baseline",
            Variant::Fstb => "+FSTB",
            Variant::FstbHdc => "+FSTB+HDC",
        }
    }

    pub fn apply(self, cfg: &TrainConfig) -> TrainConfig {
        let mut out = cfg.clone();
        out.model.enable_fstb = self != Variant::Baseline;
        out.enable_hdc = self == Variant::FstbHdc;
        out
    }
}

/// Named aligned-layer set: the `k` coarsest of `levels`, or all of them.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct LayerSet {
    pub name: String,
    pub layers: Vec<usize>,
}

impl LayerSet {
    pub fn top(k: usize, levels: usize) -> Self {
        let k = k.min(levels);
        let name = if k == levels { "all".to_string() } else { format!("top-{k}") };
        LayerSet {
            name,
            layers: (levels - k + 1..=levels).collect(),
        }
    }

    pub fn grid(levels: usize) -> Vec<Self> {
        let mut sets: Vec<Self> = (1..levels).take(2).map(|k| Self::top(k, levels)).collect();
        sets.push(Self::top(levels, levels));
        sets
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AblationCell {
    pub variant: Variant,
    pub label: String,
    /// Aligned layers when the consistency loss is on.
    pub layer_set: Option<String>,
    pub seeds: Vec<u64>,
    pub ious: Vec<f64>,
    pub median_iou: f64,
    pub seconds: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AblationReport {
    pub cells: Vec<AblationCell>,
    pub layer_grid: Vec<AblationCell>,
}

impl AblationReport {
    pub fn median(&self, variant: Variant) -> Option<f64> {
        self.cells.iter().find(|c| c.variant == variant).map(|c| c.median_iou)
    }

    pub fn to_table(&self) -> String {
        let mut out = String::new();
        let rows: Vec<&AblationCell> = self.cells.iter().chain(&self.layer_grid).collect();
        let width = rows
            .iter()
            .map(|c| cell_name(c).len())
            .max()
            .unwrap_or(0)
            .max("variant".len());
        writeln!(out, "{:<width$}  {:>10}  {:>8}  per-seed IoU", "variant", "median IoU", "time s").expect("string write");
        for c in rows {
            let ious = c.ious.iter().map(|v| format!("{v:.4}")).collect::<Vec<_>>().join(" ");
            writeln!(out, "{:<width$}  {:>10.4}  {:>8.1}  {ious}", cell_name(c), c.median_iou, c.seconds)
                .expect("string write");
        }
        out
    }
}

fn cell_name(c: &AblationCell) -> String {
    match &c.layer_set {
        Some(set) => format!("{} [{set}]", c.label),
        None => c.label.clone(),
    }
}

/// Median; the mean of the middle pair for even counts.
pub fn median(values: &[f64]) -> f64 {
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len();
    match n {
        0 => f64::NAN,
        _ if n % 2 == 1 => v[n / 2],
        _ => 0.5 * (v[n / 2 - 1] + v[n / 2]),
    }
}

pub fn scene_samples(cfg: &SceneConfig, base_seed: u64, count: usize) -> Result<Vec<Sample>> {
    (0..count)
        .map(|i| {
            let scene = gen_scene(cfg, scene_seed(base_seed, i))?;
            Ok((scene.image.cast(), scene.mask.cast()))
        })
        .collect()
}

/// Training and evaluation scenes for an experiment.
pub fn experiment_data(cfg: &ExperimentConfig) -> Result<(Vec<Sample>, Vec<Sample>)> {
    let train_set = scene_samples(&cfg.scene, cfg.scene.seed, cfg.train_count)?;
    let test_set = scene_samples(&cfg.scene, cfg.scene.seed.wrapping_add(TEST_SEED_OFFSET), cfg.test_count)?;
    Ok((train_set, test_set))
}

fn run_cell(
    train_cfg: &TrainConfig,
    variant: Variant,
    layer_set: Option<&LayerSet>,
    seeds: &[u64],
    train_set: &[Sample],
    test_set: &[Sample],
) -> Result<AblationCell> {
    let start = std::time::Instant::now();
    let mut cfg = variant.apply(train_cfg);
    if let Some(set) = layer_set {
        cfg.hdc.layers = set.layers.clone();
    }
    let mut ious = Vec::with_capacity(seeds.len());
    for &seed in seeds {
        cfg.seed = seed;
        let out = train(&cfg, train_set)?;
        let iou = evaluate(&out.model, &out.store, test_set)?.mean_iou;
        log::info!("{} seed {seed}: IoU {iou:.4}", variant.label());
        ious.push(iou);
    }
    Ok(AblationCell {
        variant,
        label: variant.label().to_string(),
        layer_set: layer_set.map(|s| s.name.clone()),
        seeds: seeds.to_vec(),
        median_iou: median(&ious),
        ious,
        seconds: start.elapsed().as_secs_f64(),
    })
}

/// Trains every variant on every seed, then the layer-set grid with the
/// consistency loss on. An empty `layer_sets` skips the grid.
pub fn run_ablation(cfg: &ExperimentConfig, seeds: &[u64], layer_sets: &[LayerSet]) -> Result<AblationReport> {
    if seeds.is_empty() {
        return Err(Error::InvalidArgument("an ablation needs at least one seed".into()));
    }
    let mut base = cfg.train.clone();
    base.model.enable_fstb = true;
    base.enable_hdc = true;
    base.validate()?;
    let (train_set, test_set) = experiment_data(cfg)?;
    let cells = Variant::ALL
        .iter()
        .map(|&v| run_cell(&base, v, None, seeds, &train_set, &test_set))
        .collect::<Result<Vec<_>>>()?;
    let mut layer_grid = Vec::new();
    for set in layer_sets {
        let reuse = cells
            .iter()
            .find(|c| c.variant == Variant::FstbHdc && set.layers == base.hdc.layers);
        let cell = match reuse {
            Some(c) => AblationCell {
                layer_set: Some(set.name.clone()),
                ..c.clone()
            },
            None => run_cell(&base, Variant::FstbHdc, Some(set), seeds, &train_set, &test_set)?,
        };
        layer_grid.push(cell);
    }
    Ok(AblationReport { cells, layer_grid })
}
