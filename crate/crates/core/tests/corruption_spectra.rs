use foam_core::hdc::{corrupt, CorruptionConfig, CorruptionKind};
use foam_core::scenes::{gen_scene, SceneConfig};
use foam_core::spectral::{band_energy, fft2, DEFAULT_BAND_EDGES};
use foam_core::Tensor;

fn high_band(x: &Tensor<f64>) -> f64 {
    band_energy(&fft2(x).unwrap(), &DEFAULT_BAND_EDGES).unwrap().high()
}

/// Paired high-band shares `(before, after)` over 100 scenes.
fn paired(cfg: CorruptionConfig) -> Vec<(f64, f64)> {
    let scenes = SceneConfig::default();
    (0..100)
        .map(|seed| {
            let img = gen_scene(&scenes, seed).unwrap().image;
            let c = CorruptionConfig { seed, ..cfg };
            (high_band(&img), high_band(&corrupt(&img, &c).unwrap()))
        })
        .collect()
}

#[test]
fn blur_lowers_high_band_share_on_every_scene() {
    let cfg = CorruptionConfig::default();
    assert_eq!((cfg.gb_kernel_size, cfg.gb_sigma), (3, 5.0));
    for (i, (before, after)) in paired(cfg).into_iter().enumerate() {
        assert!(after < before, "scene {i}: {before} -> {after}");
    }
}

#[test]
fn resampling_lowers_high_band_share_on_every_scene() {
    let cfg = CorruptionConfig {
        kind: CorruptionKind::Du,
        du_factor: 4,
        ..CorruptionConfig::default()
    };
    for (i, (before, after)) in paired(cfg).into_iter().enumerate() {
        assert!(after < before, "scene {i}: {before} -> {after}");
    }
}

#[test]
fn noise_raises_high_band_share_in_the_mean() {
    let cfg = CorruptionConfig {
        kind: CorruptionKind::Gn,
        gn_sigma: 0.2,
        ..CorruptionConfig::default()
    };
    let pairs = paired(cfg);
    let violations = pairs.iter().filter(|(b, a)| a <= b).count();
    let mean_gain = pairs.iter().map(|(b, a)| a - b).sum::<f64>() / pairs.len() as f64;
    assert!(mean_gain > 0.0, "{mean_gain}");
    assert!(violations <= 5, "{violations} violations");
}
