use std::collections::HashSet;
use std::fmt::{Display, Write as _};
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::train::TrainConfig;
use crate::error::{Error, Result};
use crate::hdc::ConsistentLossConfig;
use crate::scenes::SceneConfig;
use crate::spectral::FftNorm;

/// Everything a data, training or ablation run reads from a config file.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub scene: SceneConfig,
    pub train: TrainConfig,
    pub train_count: usize,
    pub test_count: usize,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            scene: SceneConfig::default(),
            train: TrainConfig::default(),
            train_count: 64,
            test_count: 64,
        }
    }
}

impl ExperimentConfig {
    pub fn validate(&self) -> Result<()> {
        self.scene.validate()?;
        self.train.validate()?;
        if self.train_count == 0 || self.test_count == 0 {
            return Err(Error::InvalidArgument("scene counts must be positive".into()));
        }
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        parse_config(&std::fs::read_to_string(path)?)
    }

    /// Renders every key, in a form `parse_config` reads back unchanged.
    pub fn to_text(&self) -> String {
        let s = &self.scene;
        let t = &self.train;
        let m = &t.model;
        let c = &t.corruption;
        let h = &t.hdc;
        let pair = |(a, b): (f64, f64)| format!("{a},{b}");
        let upair = |(a, b): (usize, usize)| format!("{a},{b}");
        let layers = h.layers.iter().map(|l| l.to_string()).collect::<Vec<_>>().join(",");
        let rows: Vec<(&str, String)> = vec![
            ("scene.height", s.height.to_string()),
            ("scene.width", s.width.to_string()),
            ("scene.n_foreground", upair(s.n_foreground)),
            ("scene.n_background", upair(s.n_background)),
            ("scene.texture_freq", pair(s.texture_freq)),
            ("scene.fg_attenuation", pair(s.fg_attenuation)),
            ("scene.bg_attenuation", pair(s.bg_attenuation)),
            ("scene.overlap", pair(s.overlap)),
            ("scene.seed", s.seed.to_string()),
            ("data.train_count", self.train_count.to_string()),
            ("data.test_count", self.test_count.to_string()),
            ("train.epochs", t.epochs.to_string()),
            ("train.batch_size", t.batch_size.to_string()),
            ("train.learning_rate", t.learning_rate.to_string()),
            ("train.optimizer", format!("{:?}", t.optimizer).to_lowercase()),
            ("train.momentum", t.momentum.to_string()),
            ("train.weight_decay", t.weight_decay.to_string()),
            ("train.clip_norm", t.clip_norm.to_string()),
            ("train.seed", t.seed.to_string()),
            ("train.enable_fstb", m.enable_fstb.to_string()),
            ("train.enable_hdc", t.enable_hdc.to_string()),
            ("model.channels", m.channels.to_string()),
            ("model.levels", m.levels.to_string()),
            ("model.n_stages", m.n_stages.to_string()),
            ("model.fstb_levels", m.fstb_levels.to_string()),
            ("model.block_init_gain", m.block_init_gain.to_string()),
            ("model.dilation", m.fstb.dilation.to_string()),
            ("model.max_positions", m.fstb.max_positions.to_string()),
            ("model.fft_norm", format!("{:?}", m.fstb.fft_norm).to_lowercase()),
            ("corruption.kind", format!("{:?}", c.kind).to_lowercase()),
            ("corruption.gb_kernel_size", c.gb_kernel_size.to_string()),
            ("corruption.gb_sigma", c.gb_sigma.to_string()),
            ("corruption.du_factor", c.du_factor.to_string()),
            ("corruption.gn_sigma", c.gn_sigma.to_string()),
            ("hdc.loss_type", format!("{:?}", h.loss_type)),
            ("hdc.lambda", h.lambda.to_string()),
            ("hdc.layers", layers),
            ("hdc.detach_base", h.detach_base.to_string()),
        ];
        let mut out = String::new();
        for (k, v) in rows {
            writeln!(out, "{k} = {v}").expect("string write");
        }
        out
    }
}

fn scalar<V: FromStr>(line: usize, key: &str, raw: &str) -> Result<V>
where
    V::Err: Display,
{
    raw.parse().map_err(|e| Error::Config {
        line,
        msg: format!("bad value {raw:?} for {key}: {e}"),
    })
}

fn list<V: FromStr>(line: usize, key: &str, raw: &str) -> Result<Vec<V>>
where
    V::Err: Display,
{
    raw.split(',').map(|part| scalar(line, key, part.trim())).collect()
}

fn range<V: FromStr + Copy>(line: usize, key: &str, raw: &str) -> Result<(V, V)>
where
    V::Err: Display,
{
    match list(line, key, raw)?.as_slice() {
        [lo, hi] => Ok((*lo, *hi)),
        _ => Err(Error::Config {
            line,
            msg: format!("{key} expects two comma-separated values, got {raw:?}"),
        }),
    }
}

fn fft_norm(line: usize, raw: &str) -> Result<FftNorm> {
    match raw.to_ascii_lowercase().as_str() {
        "backward" => Ok(FftNorm::Backward),
        "ortho" => Ok(FftNorm::Ortho),
        _ => Err(Error::Config {
            line,
            msg: format!("bad value {raw:?} for model.fft_norm (expected backward or ortho)"),
        }),
    }
}

/// Parses `key = value` lines over the defaults. `#` starts a comment.
pub fn parse_config(text: &str) -> Result<ExperimentConfig> {
    let mut cfg = ExperimentConfig::default();
    let mut seen = HashSet::new();
    for (idx, raw_line) in text.lines().enumerate() {
        let line = idx + 1;
        let content = raw_line.split('#').next().unwrap_or("").trim();
        if content.is_empty() {
            continue;
        }
        let (key, value) = content.split_once('=').ok_or_else(|| Error::Config {
            line,
            msg: format!("expected key = value, got {content:?}"),
        })?;
        let (key, v) = (key.trim(), value.trim());
        if !seen.insert(key.to_string()) {
            return Err(Error::Config {
                line,
                msg: format!("duplicate key {key}"),
            });
        }
        let s = &mut cfg.scene;
        let t = &mut cfg.train;
        match key {
            "scene.height" => s.height = scalar(line, key, v)?,
            "scene.width" => s.width = scalar(line, key, v)?,
            "scene.size" => {
                s.height = scalar(line, key, v)?;
                s.width = s.height;
            }
            "scene.n_foreground" => s.n_foreground = range(line, key, v)?,
            "scene.n_background" => s.n_background = range(line, key, v)?,
            "scene.texture_freq" => s.texture_freq = range(line, key, v)?,
            "scene.fg_attenuation" => s.fg_attenuation = range(line, key, v)?,
            "scene.bg_attenuation" => s.bg_attenuation = range(line, key, v)?,
            "scene.overlap" => s.overlap = range(line, key, v)?,
            "scene.seed" => s.seed = scalar(line, key, v)?,
            "data.train_count" => cfg.train_count = scalar(line, key, v)?,
            "data.test_count" => cfg.test_count = scalar(line, key, v)?,
            "train.epochs" => t.epochs = scalar(line, key, v)?,
            "train.batch_size" => t.batch_size = scalar(line, key, v)?,
            "train.learning_rate" => t.learning_rate = scalar(line, key, v)?,
            "train.optimizer" => t.optimizer = scalar(line, key, v)?,
            "train.momentum" => t.momentum = scalar(line, key, v)?,
            "train.weight_decay" => t.weight_decay = scalar(line, key, v)?,
            "train.clip_norm" => t.clip_norm = scalar(line, key, v)?,
            "train.seed" => t.seed = scalar(line, key, v)?,
            "train.enable_fstb" => t.model.enable_fstb = scalar(line, key, v)?,
            "train.enable_hdc" => t.enable_hdc = scalar(line, key, v)?,
            "model.channels" => {
                t.model.channels = scalar(line, key, v)?;
                t.model.fstb.channels = t.model.channels;
            }
            "model.levels" => t.model.levels = scalar(line, key, v)?,
            "model.n_stages" => t.model.n_stages = scalar(line, key, v)?,
            "model.fstb_levels" => t.model.fstb_levels = scalar(line, key, v)?,
            "model.block_init_gain" => t.model.block_init_gain = scalar(line, key, v)?,
            "model.dilation" => t.model.fstb.dilation = scalar(line, key, v)?,
            "model.max_positions" => t.model.fstb.max_positions = scalar(line, key, v)?,
            "model.fft_norm" => t.model.fstb.fft_norm = fft_norm(line, v)?,
            "corruption.kind" => t.corruption.kind = scalar(line, key, v)?,
            "corruption.gb_kernel_size" => t.corruption.gb_kernel_size = scalar(line, key, v)?,
            "corruption.gb_sigma" => t.corruption.gb_sigma = scalar(line, key, v)?,
            "corruption.du_factor" => t.corruption.du_factor = scalar(line, key, v)?,
            "corruption.gn_sigma" => t.corruption.gn_sigma = scalar(line, key, v)?,
            "hdc.loss_type" => t.hdc.loss_type = scalar(line, key, v)?,
            "hdc.lambda" => t.hdc.lambda = scalar(line, key, v)?,
            "hdc.layers" => t.hdc.layers = list(line, key, v)?,
            "hdc.detach_base" => t.hdc.detach_base = scalar(line, key, v)?,
            _ => {
                return Err(Error::Config {
                    line,
                    msg: format!("unknown key {key}"),
                })
            }
        }
    }
    if !seen.contains("hdc.layers") {
        let loss = &cfg.train.hdc;
        cfg.train.hdc = ConsistentLossConfig {
            layers: ConsistentLossConfig::for_levels(loss.loss_type, cfg.train.model.levels).layers,
            ..loss.clone()
        };
    }
    if !cfg.train.model.enable_fstb && !seen.contains("train.enable_hdc") {
        cfg.train.enable_hdc = false;
    }
    cfg.validate()?;
    Ok(cfg)
}
