//! Training, evaluation and ablation on synthetic scenes.

mod ablation;
mod config;
mod eval;
mod model;
mod train;

pub use ablation::{
    experiment_data, median, run_ablation, scene_samples, AblationCell, AblationReport, LayerSet, Sample, Variant,
};
pub use config::{parse_config, ExperimentConfig};
pub use eval::{evaluate, iou, predict, EvalReport};
pub use model::{FoamModel, ModelConfig};
pub use train::{
    load_checkpoint, save_checkpoint, trace_csv, train, Optimizer, TraceRow, TrainConfig, TrainOutcome,
    CHECKPOINT_FORMAT,
};
