use foam_core::autograd::Tape;
use foam_core::fstb::FstbConfig;
use foam_core::harness::{FoamModel, ModelConfig};
use foam_core::hdc::{
    consistent_loss, hdc_step, ConsistentLossConfig, CorruptionConfig, CorruptionKind, LossType, CORRUPTED_INPUT_OP,
};
use foam_core::params::ParamStore;
use foam_core::spectral::FftNorm;
use foam_core::tensor::Tensor;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn small_model(store: &mut ParamStore<f64>, gain: f64, seed: u64) -> FoamModel {
    let config = ModelConfig {
        channels: 4,
        fstb: FstbConfig {
            fft_norm: FftNorm::Ortho,
            ..FstbConfig::new(4)
        },
        block_init_gain: gain,
        ..ModelConfig::default()
    };
    FoamModel::new(store, config, &mut ChaCha8Rng::seed_from_u64(seed)).unwrap()
}

fn image(seed: u64) -> Tensor<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Tensor::from_fn([1, 16, 16], |_| rng.random_range(0.0..1.0))
}

fn identity_corruption() -> CorruptionConfig {
    CorruptionConfig {
        kind: CorruptionKind::Gn,
        gn_sigma: 0.0,
        ..CorruptionConfig::default()
    }
}

#[test]
fn identity_corruption_gives_identical_branches() {
    for seed in 0..5 {
        let mut store = ParamStore::new();
        let model = small_model(&mut store, 1.0, seed);
        let tape = Tape::new();
        let loss_cfg = ConsistentLossConfig::for_levels(LossType::I, 3);
        let out = hdc_step(&tape, &store, &model, &image(seed), &identity_corruption(), &loss_cfg).unwrap();
        assert!(tape.has_op(CORRUPTED_INPUT_OP));
        for (b, c) in out.base.iter().flatten().zip(out.corrupted.iter().flatten()) {
            assert_eq!(b.to_tensor(), c.to_tensor());
        }
        let same = consistent_loss(&out.base, &out.base, &loss_cfg).unwrap();
        assert_eq!(out.loss.item(), same.item());
    }
}

#[test]
fn identity_corruption_loss_vanishes_with_identity_blocks() {
    for lt in [LossType::I, LossType::II] {
        for seed in 0..5 {
            let mut store = ParamStore::new();
            let model = small_model(&mut store, 0.0, seed);
            let tape = Tape::new();
            let loss_cfg = ConsistentLossConfig::for_levels(lt, 3);
            let out = hdc_step(&tape, &store, &model, &image(seed), &identity_corruption(), &loss_cfg).unwrap();
            assert!(out.loss.item().abs() < 1e-7, "{lt:?}: {}", out.loss.item());
        }
    }
}

#[test]
fn blocks_learn_through_the_corrupted_branch() {
    let mut store = ParamStore::new();
    let model = small_model(&mut store, 1.0, 3);
    let tape = Tape::new();
    let loss_cfg = ConsistentLossConfig::for_levels(LossType::I, 3);
    let out = hdc_step(&tape, &store, &model, &image(3), &CorruptionConfig::default(), &loss_cfg).unwrap();
    assert!(out.loss.item() > 0.0);
    tape.backward(out.loss).unwrap();
    tape.flush_param_grads(&mut store);
    let block_grads: Vec<f64> = store
        .ids()
        .filter(|&id| store.name(id).starts_with("fstb."))
        .map(|id| store.grad(id).iter().fold(0.0f64, |m, g| m.max(g.abs())))
        .collect();
    assert!(!block_grads.is_empty());
    assert!(block_grads.iter().any(|&g| g > 0.0));
    let head = store.find("head.0.weight").unwrap();
    assert!(store.grad(head).iter().all(|&g| g == 0.0));
}

#[test]
fn detached_base_features_receive_no_gradient() {
    for lt in [LossType::I, LossType::II] {
        let mut store = ParamStore::new();
        let model = small_model(&mut store, 1.0, 4);
        let tape = Tape::new();
        let mut loss_cfg = ConsistentLossConfig::for_levels(lt, 3);
        let out = hdc_step(&tape, &store, &model, &image(4), &CorruptionConfig::default(), &loss_cfg).unwrap();
        tape.backward(out.loss).unwrap();
        for &l in &loss_cfg.layers {
            let g = out.base[0][l - 1].grad();
            assert!(g.is_none_or(|g| g.max_abs() == 0.0));
            assert!(out.corrupted[1][l - 1].grad().unwrap().max_abs() > 0.0);
        }

        loss_cfg.detach_base = false;
        let tape = Tape::new();
        let out = hdc_step(&tape, &store, &model, &image(4), &CorruptionConfig::default(), &loss_cfg).unwrap();
        tape.backward(out.loss).unwrap();
        let top = loss_cfg.layers[loss_cfg.layers.len() - 1] - 1;
        assert!(out.base[0][top].grad().unwrap().max_abs() > 0.0);
    }
}
