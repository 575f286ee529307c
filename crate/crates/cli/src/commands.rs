use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use foam_core::autograd::Tape;
use foam_core::gradcheck::{check_component, Component, GradReport};
use foam_core::harness::{
    evaluate, load_checkpoint, run_ablation, save_checkpoint, trace_csv, AblationReport, EvalReport,
    ExperimentConfig, LayerSet,
};
use foam_core::hdc::{corrupt, CorruptionConfig, CorruptionKind, PyramidModel};
use foam_core::scenes::{gen_dataset, gen_scene, load_dataset, DatasetManifest, SceneConfig};
use foam_core::spectral::{band_energy, fft2, fftshift, magnitude, phase, DEFAULT_BAND_EDGES};
use foam_core::tensor::Tensor;
use serde::{Deserialize, Serialize};

use crate::{
    pgm, resolve_seed, AblateArgs, CliError, CliResult, DumpArgs, EvalArgs, GenDataArgs, GradcheckArgs, SpectrumArgs,
    TrainArgs,
};

fn out_dir(out: &Option<PathBuf>, default: &str) -> CliResult<PathBuf> {
    let dir = out.clone().unwrap_or_else(|| PathBuf::from(default));
    fs::create_dir_all(&dir)?;
    Ok(dir)
}

fn write_json(path: &Path, value: &impl Serialize) -> CliResult<()> {
    fs::write(path, serde_json::to_string_pretty(value)? + "\n")?;
    Ok(())
}

fn load_config(path: &Option<PathBuf>) -> CliResult<ExperimentConfig> {
    Ok(match path {
        Some(p) => ExperimentConfig::load(p)?,
        None => ExperimentConfig::default(),
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SpectrumEntry {
    pub name: String,
    pub fractions: Vec<f64>,
    pub high: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SpectrumReport {
    pub edges: Vec<f64>,
    pub images: Vec<SpectrumEntry>,
}

fn render_spectrum(dir: &Path, name: &str, image: &Tensor<f64>) -> CliResult<SpectrumEntry> {
    let (_, h, w) = image.chw()?;
    let plane = image.channel(0)?;
    pgm::write(dir.join(format!("{name}.pgm")), w, h, plane.data(), Some((0.0, 1.0)))?;
    let spectrum = fft2(&plane)?;
    let centered = fftshift(&spectrum);
    let logmag: Vec<f64> = magnitude(&centered).data().iter().map(|m| m.ln_1p()).collect();
    pgm::write(dir.join(format!("{name}_logmag.pgm")), w, h, &logmag, None)?;
    let pi = std::f64::consts::PI;
    pgm::write(dir.join(format!("{name}_phase.pgm")), w, h, phase(&centered).data(), Some((-pi, pi)))?;
    let bands = band_energy(&fft2(image)?, &DEFAULT_BAND_EDGES)?;
    Ok(SpectrumEntry {
        name: name.to_string(),
        high: bands.high(),
        fractions: bands.fractions,
    })
}

pub fn spectrum(a: &SpectrumArgs) -> CliResult<SpectrumReport> {
    let seed = resolve_seed(a.common.seed)?.unwrap_or(0);
    let image: Tensor<f64> = match &a.input {
        Some(p) => Tensor::load(p)?,
        None => gen_scene(&SceneConfig::default(), seed)?.image,
    };
    let dir = out_dir(&a.common.out, "spectrum")?;
    let kinds = if a.corrupt.is_empty() {
        vec![CorruptionKind::Gb, CorruptionKind::Du, CorruptionKind::Gn]
    } else {
        a.corrupt.clone()
    };
    let mut images = vec![render_spectrum(&dir, "original", &image)?];
    for kind in kinds {
        let cfg = CorruptionConfig {
            kind,
            seed,
            ..CorruptionConfig::default()
        };
        let name = format!("{kind:?}").to_lowercase();
        images.push(render_spectrum(&dir, &name, &corrupt(&image, &cfg)?)?);
    }
    let report = SpectrumReport {
        edges: DEFAULT_BAND_EDGES.to_vec(),
        images,
    };
    for e in &report.images {
        println!("{:<9} high-band share {:.4}", e.name, e.high);
    }
    write_json(&dir.join("bands.json"), &report)?;
    Ok(report)
}

#[derive(Clone, Debug, Serialize)]
pub struct ComponentResult {
    pub component: Component,
    pub pass: bool,
    pub worst: Option<GradReport>,
    pub reports: Vec<GradReport>,
}

#[derive(Clone, Debug, Serialize)]
pub struct GradcheckSummary {
    pub tol: f64,
    pub step: f64,
    pub seed: u64,
    pub pass: bool,
    pub components: Vec<ComponentResult>,
}

pub fn gradcheck(a: &GradcheckArgs) -> CliResult<GradcheckSummary> {
    let seed = resolve_seed(a.common.seed)?.unwrap_or(0);
    let selected = match a.component.0 {
        Some(c) => vec![c],
        None => Component::ALL.to_vec(),
    };
    let mut components = Vec::new();
    for c in selected {
        let reports = check_component(c, seed, a.tol, a.step)?;
        let worst = reports.iter().max_by(|x, y| x.max_rel_error.total_cmp(&y.max_rel_error)).cloned();
        let pass = reports.iter().all(|r| r.pass);
        match &worst {
            Some(w) => println!(
                "{:<14} {}  worst {} rel {:.3e} at {}",
                c.name(),
                if pass { "PASS" } else { "FAIL" },
                w.name,
                w.max_rel_error,
                w.worst_index
            ),
            None => println!("{:<14} PASS  no parameters", c.name()),
        }
        components.push(ComponentResult {
            component: c,
            pass,
            worst,
            reports,
        });
    }
    let summary = GradcheckSummary {
        tol: a.tol,
        step: a.step,
        seed,
        pass: components.iter().all(|c| c.pass),
        components,
    };
    if let Some(out) = &a.common.out {
        fs::create_dir_all(out)?;
        write_json(&out.join("gradcheck.json"), &summary)?;
    }
    if !summary.pass {
        return Err(CliError::Numerical("gradient check failed".into()));
    }
    Ok(summary)
}

pub fn gen_data(a: &GenDataArgs) -> CliResult<DatasetManifest> {
    let mut cfg = load_config(&a.config)?;
    if let Some(seed) = resolve_seed(a.common.seed)? {
        cfg.scene.seed = seed;
    }
    let dir = out_dir(&a.common.out, "data")?;
    let manifest = gen_dataset(&cfg.scene, a.count.unwrap_or(cfg.train_count), &dir)?;
    println!("wrote {} scenes to {}", manifest.count, dir.display());
    Ok(manifest)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainSummary {
    pub steps: usize,
    pub initial_task_loss: f64,
    pub final_task_loss: f64,
    pub final_consistent_loss: f64,
    pub seconds: f64,
    pub checkpoint: String,
    pub trace: String,
}

pub fn train(a: &TrainArgs) -> CliResult<TrainSummary> {
    let mut cfg = load_config(&a.config)?;
    if let Some(seed) = resolve_seed(a.common.seed)? {
        cfg.train.seed = seed;
    }
    let data: Vec<_> = load_dataset(&a.data)?
        .samples
        .into_iter()
        .map(|(i, m)| (i.cast::<f32>(), m.cast::<f32>()))
        .collect();
    let dir = out_dir(&a.common.out, "run")?;
    let start = Instant::now();
    let out = foam_core::harness::train(&cfg.train, &data)?;
    let seconds = start.elapsed().as_secs_f64();
    let ckpt = dir.join("checkpoint");
    save_checkpoint(&ckpt, &cfg.train, &out.store)?;
    let trace_path = dir.join("loss_trace.csv");
    fs::write(&trace_path, trace_csv(&out.trace))?;
    let (first, last) = (&out.trace[0], &out.trace[out.trace.len() - 1]);
    let summary = TrainSummary {
        steps: out.trace.len(),
        initial_task_loss: first.task_loss,
        final_task_loss: last.task_loss,
        final_consistent_loss: last.consistent_loss,
        seconds,
        checkpoint: ckpt.display().to_string(),
        trace: trace_path.display().to_string(),
    };
    write_json(&dir.join("train.json"), &summary)?;
    println!(
        "{} steps in {:.1}s, task loss {:.4} -> {:.4}",
        summary.steps, seconds, summary.initial_task_loss, summary.final_task_loss
    );
    Ok(summary)
}

pub fn eval(a: &EvalArgs) -> CliResult<EvalReport> {
    resolve_seed(a.common.seed)?;
    let (_, model, store) = load_checkpoint(&a.ckpt)?;
    let data: Vec<_> = load_dataset(&a.data)?
        .samples
        .into_iter()
        .map(|(i, m)| (i.cast::<f32>(), m.cast::<f32>()))
        .collect();
    let report = evaluate(&model, &store, &data)?;
    println!(
        "mean IoU {:.4}  precision {:.4}  recall {:.4}  over {} scenes",
        report.mean_iou,
        report.precision,
        report.recall,
        report.per_scene_iou.len()
    );
    if let Some(out) = &a.common.out {
        fs::create_dir_all(out)?;
        write_json(&out.join("eval.json"), &report)?;
    }
    Ok(report)
}

pub fn ablate(a: &AblateArgs) -> CliResult<AblationReport> {
    let cfg = load_config(&a.config)?;
    let base = resolve_seed(a.common.seed)?.unwrap_or(cfg.train.seed);
    if a.seeds == 0 {
        return Err(CliError::Usage("--seeds must be positive".into()));
    }
    let seeds: Vec<u64> = (0..a.seeds as u64).map(|k| base + k).collect();
    let grid = if a.no_layer_grid {
        Vec::new()
    } else {
        LayerSet::grid(cfg.train.model.levels)
    };
    let report = run_ablation(&cfg, &seeds, &grid)?;
    let table = report.to_table();
    print!("{table}");
    let dir = out_dir(&a.common.out, "ablation")?;
    write_json(&dir.join("ablation.json"), &report)?;
    fs::write(dir.join("ablation.txt"), table)?;
    Ok(report)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DumpSummary {
    pub stage: usize,
    pub level: usize,
    pub shape: Vec<usize>,
    pub files: Vec<String>,
}

fn dump_branch(dir: &Path, prefix: &str, feat: &Tensor<f32>, files: &mut Vec<String>) -> CliResult<()> {
    let (c, h, w) = feat.chw()?;
    let raw = format!("{prefix}.tns");
    feat.save(dir.join(&raw))?;
    files.push(raw);
    for k in 0..c {
        let plane: Vec<f64> = feat.channel(k)?.data().iter().map(|&v| f64::from(v)).collect();
        let name = format!("{prefix}_c{k:02}.pgm");
        pgm::write(dir.join(&name), w, h, &plane, None)?;
        files.push(name);
    }
    Ok(())
}

pub fn dump_features(a: &DumpArgs) -> CliResult<DumpSummary> {
    let seed = resolve_seed(a.common.seed)?.unwrap_or(0);
    let (cfg, model, store) = load_checkpoint(&a.ckpt)?;
    let stages = cfg.model.stage_count();
    if a.stage >= stages {
        return Err(CliError::Usage(format!("stage {} out of range 0..{stages}", a.stage)));
    }
    if a.level == 0 || a.level > cfg.model.levels {
        return Err(CliError::Usage(format!("level {} out of range 1..={}", a.level, cfg.model.levels)));
    }
    let image: Tensor<f32> = Tensor::<f64>::load(&a.input)?.cast();
    let dir = out_dir(&a.common.out, "features")?;
    let tag = format!("s{}_l{}", a.stage, a.level);
    let mut files = Vec::new();
    let base = {
        let tape = Tape::new();
        let pyramid = model.pyramid(tape.constant(image.clone()), &store)?;
        pyramid[a.stage][a.level - 1].to_tensor()
    };
    dump_branch(&dir, &format!("base_{tag}"), &base, &mut files)?;
    if let Some(kind) = a.corrupt {
        let corruption = CorruptionConfig {
            kind,
            seed,
            ..cfg.corruption
        };
        let tape = Tape::new();
        let pyramid = model.pyramid(tape.constant(corrupt(&image, &corruption)?), &store)?;
        let feat = pyramid[a.stage][a.level - 1].to_tensor();
        dump_branch(&dir, &format!("corrupted_{tag}"), &feat, &mut files)?;
    }
    let summary = DumpSummary {
        stage: a.stage,
        level: a.level,
        shape: base.shape().to_vec(),
        files,
    };
    write_json(&dir.join("features.json"), &summary)?;
    println!("wrote {} files to {}", summary.files.len(), dir.display());
    Ok(summary)
}
