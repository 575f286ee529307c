use foam_core::error::Error;
use foam_core::harness::*;
use foam_core::hdc::{CorruptionKind, LossType};
use foam_core::scenes::SceneConfig;

fn small_train(enable_fstb: bool, enable_hdc: bool) -> TrainConfig {
    let mut cfg = TrainConfig::default();
    cfg.model.channels = 4;
    cfg.model.fstb.channels = 4;
    cfg.model.enable_fstb = enable_fstb;
    cfg.enable_hdc = enable_hdc;
    cfg.optimizer = Optimizer::Adam;
    cfg.learning_rate = 0.003;
    cfg
}

fn scenes(count: usize, seed: u64) -> Vec<Sample> {
    let cfg = SceneConfig {
        height: 32,
        width: 32,
        ..SceneConfig::default()
    };
    scene_samples(&cfg, seed, count).unwrap()
}

#[test]
fn identical_runs_give_identical_traces() {
    let data = scenes(8, 1);
    let mut cfg = small_train(true, true);
    cfg.epochs = 2;
    let a = train(&cfg, &data).unwrap();
    let b = train(&cfg, &data).unwrap();
    assert_eq!(trace_csv(&a.trace), trace_csv(&b.trace));
    let bits = |t: &[TraceRow]| t.iter().map(|r| r.total.to_bits()).collect::<Vec<_>>();
    assert_eq!(bits(&a.trace), bits(&b.trace));
    cfg.seed = 1;
    let c = train(&cfg, &data).unwrap();
    assert_ne!(bits(&a.trace), bits(&c.trace));
}

#[test]
fn smoke_run_lowers_task_loss() {
    let data = scenes(64, 2);
    let mut cfg = small_train(true, false);
    cfg.batch_size = 2;
    cfg.epochs = 7;
    let out = train(&cfg, &data).unwrap();
    assert!(out.trace.len() >= 200);
    let window = |rows: &[TraceRow]| rows.iter().map(|r| r.task_loss).sum::<f64>() / rows.len() as f64;
    let n = out.trace.len();
    assert!(window(&out.trace[n - 10..]) < window(&out.trace[..10]));
    assert!(out.trace[n - 1].task_loss < out.trace[0].task_loss);
}

#[test]
fn zero_noise_consistency_starts_at_zero() {
    let data = scenes(8, 3);
    let mut cfg = small_train(true, true);
    cfg.corruption.kind = CorruptionKind::Gn;
    cfg.corruption.gn_sigma = 0.0;
    cfg.model.block_init_gain = 0.0;
    cfg.epochs = 1;
    cfg.batch_size = 1;
    let out = train(&cfg, &data).unwrap();
    assert!(out.trace[0].consistent_loss < 1e-7);
    assert!(out.trace.iter().all(|r| r.consistent_loss.is_finite() && r.consistent_loss >= -1e-9));
}

#[test]
fn trace_csv_header_and_rows() {
    let rows = [TraceRow {
        step: 0,
        task_loss: 0.5,
        consistent_loss: 0.25,
        total: 0.75,
    }];
    let csv = trace_csv(&rows);
    let mut lines = csv.lines();
    assert_eq!(lines.next(), Some("step,task_loss,consistent_loss,total"));
    let fields: Vec<f64> = lines.next().unwrap().split(',').map(|f| f.parse().unwrap()).collect();
    assert_eq!(fields, vec![0.0, 0.5, 0.25, 0.75]);
}

#[test]
fn evaluation_scores_in_unit_range_and_never_corrupts() {
    let data = scenes(4, 4);
    let mut cfg = small_train(true, true);
    cfg.epochs = 1;
    let out = train(&cfg, &data).unwrap();
    let report = evaluate(&out.model, &out.store, &data).unwrap();
    assert_eq!(report.per_scene_iou.len(), 4);
    for v in report.per_scene_iou.iter().chain([&report.mean_iou, &report.precision, &report.recall]) {
        assert!((0.0..=1.0).contains(v));
    }
}

#[test]
fn iou_examples() {
    assert_eq!(iou(&[false, false], &[false, false]), 1.0);
    assert_eq!(iou(&[true, false], &[false, true]), 0.0);
    assert_eq!(iou(&[true, true, false], &[true, false, false]), 0.5);
}

#[test]
fn checkpoint_roundtrip_reproduces_predictions() {
    let data = scenes(4, 5);
    let mut cfg = small_train(true, false);
    cfg.epochs = 1;
    let out = train(&cfg, &data).unwrap();
    let dir = tempfile::tempdir().unwrap();
    save_checkpoint(dir.path(), &cfg, &out.store).unwrap();
    let (cfg2, model, store) = load_checkpoint(dir.path()).unwrap();
    assert_eq!(cfg2, cfg);
    let a = predict(&out.model, &out.store, &data[0].0).unwrap();
    let b = predict(&model, &store, &data[0].0).unwrap();
    assert_eq!(a, b);
}

#[test]
fn invalid_training_configs() {
    let data = scenes(2, 6);
    let mut cfg = small_train(false, true);
    assert!(matches!(train(&cfg, &data), Err(Error::InvalidArgument(_))));
    cfg = small_train(true, true);
    cfg.hdc.layers = vec![4];
    assert!(train(&cfg, &data).is_err());
    cfg = small_train(true, false);
    cfg.learning_rate = 0.0;
    assert!(train(&cfg, &data).is_err());
    assert!(train(&small_train(true, false), &[]).is_err());
}

#[test]
fn divergence_reports_the_step() {
    let data = scenes(4, 7);
    let mut cfg = small_train(false, false);
    cfg.optimizer = Optimizer::Sgd;
    cfg.learning_rate = 1e30;
    cfg.clip_norm = 0.0;
    cfg.batch_size = 1;
    cfg.epochs = 4;
    match train(&cfg, &data) {
        Err(Error::NonFiniteLoss { step }) => assert!(step >= 1),
        other => panic!("expected a non-finite loss, got {:?}", other.map(|o| o.trace)),
    }
}

#[test]
fn config_defaults_roundtrip_through_text() {
    let cfg = ExperimentConfig::default();
    assert_eq!(parse_config(&cfg.to_text()).unwrap(), cfg);
    assert_eq!(parse_config("").unwrap(), cfg);
}

#[test]
fn config_overrides() {
    let text = "# reference run\n\
                scene.size = 32\n\
                train.optimizer = adam   # trailing comment\n\
                model.channels = 8\n\
                model.levels = 4\n\
                hdc.loss_type = II\n\
                hdc.lambda = 0.5\n\
                corruption.kind = du\n";
    let cfg = parse_config(text).unwrap();
    assert_eq!((cfg.scene.height, cfg.scene.width), (32, 32));
    assert_eq!(cfg.train.optimizer, Optimizer::Adam);
    assert_eq!(cfg.train.model.fstb.channels, 8);
    assert_eq!(cfg.train.hdc.layers, vec![3, 4]);
    assert_eq!(cfg.train.hdc.loss_type, LossType::II);
    assert_eq!(cfg.train.corruption.kind, CorruptionKind::Du);

    let cfg = parse_config("train.enable_fstb = false").unwrap();
    assert!(!cfg.train.enable_hdc);
}

#[test]
fn config_errors_carry_line_numbers() {
    let line_of = |text: &str| match parse_config(text) {
        Err(Error::Config { line, .. }) => line,
        other => panic!("expected a config error, got {other:?}"),
    };
    assert_eq!(line_of("train.epochs = 2\nbogus.key = 1"), 2);
    assert_eq!(line_of("\n\ntrain.epochs = two"), 3);
    assert_eq!(line_of("train.epochs"), 1);
    assert_eq!(line_of("train.seed = 1\ntrain.seed = 2"), 2);
    assert_eq!(line_of("scene.overlap = 0.1"), 1);
    assert!(matches!(
        parse_config("train.enable_fstb = false\ntrain.enable_hdc = true"),
        Err(Error::InvalidArgument(_))
    ));
}

#[test]
fn median_and_layer_sets() {
    assert_eq!(median(&[3.0, 1.0, 2.0]), 2.0);
    assert_eq!(median(&[4.0, 1.0, 2.0, 3.0]), 2.5);
    assert!(median(&[]).is_nan());
    let grid = LayerSet::grid(3);
    let names: Vec<_> = grid.iter().map(|s| s.name.as_str()).collect();
    assert_eq!(names, ["top-1", "top-2", "all"]);
    assert_eq!(grid[1].layers, vec![2, 3]);
    assert_eq!(grid[2].layers, vec![1, 2, 3]);
}

#[test]
fn tiny_ablation_reports_every_cell() {
    let mut cfg = ExperimentConfig {
        scene: SceneConfig {
            height: 32,
            width: 32,
            ..SceneConfig::default()
        },
        train: small_train(true, true),
        train_count: 4,
        test_count: 4,
    };
    cfg.train.epochs = 1;
    let report = run_ablation(&cfg, &[0, 1], &LayerSet::grid(3)).unwrap();
    assert_eq!(report.cells.len(), 3);
    assert_eq!(report.layer_grid.len(), 3);
    let top2 = report.layer_grid.iter().find(|c| c.layer_set.as_deref() == Some("top-2")).unwrap();
    assert_eq!(top2.ious, report.cells[2].ious);
    let table = report.to_table();
    assert!(table.contains("+FSTB+HDC [all]"));
    let json = serde_json::to_string(&report).unwrap();
    let back: AblationReport = serde_json::from_str(&json).unwrap();
    assert_eq!(back, report);
}
