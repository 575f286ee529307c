use super::*;

fn small() -> SceneConfig {
    SceneConfig {
        height: 32,
        width: 32,
        ..SceneConfig::default()
    }
}

#[test]
fn compositing_examples() {
    let ones = composite_transmittance(&[], &[1, 2, 2]).unwrap();
    assert!(ones.data().iter().all(|&v| v == 1.0));
    let mu = Tensor::new([1, 2, 2], vec![0.0, 0.5, 1.0, 2.0]).unwrap();
    let one = composite_transmittance(&[mu.clone()], &[1, 2, 2]).unwrap();
    assert_eq!(one, mu.map(|m| (-m).exp()));
    let nu = Tensor::new([1, 2, 2], vec![0.3, 0.0, 0.1, 1.0]).unwrap();
    let two = composite_transmittance(&[mu, nu.clone()], &[1, 2, 2]).unwrap();
    let alone = composite_transmittance(&[nu], &[1, 2, 2]).unwrap();
    for ((&t, &a), &b) in two.data().iter().zip(one.data()).zip(alone.data()) {
        assert!(t <= a && t <= b);
    }
}

#[test]
fn scenes_are_deterministic_and_well_formed() {
    let cfg = SceneConfig::default();
    for seed in 0..20 {
        let a = gen_scene(&cfg, seed).unwrap();
        assert_eq!(a, gen_scene(&cfg, seed).unwrap());
        assert_eq!(a.image.shape(), [1, 64, 64]);
        assert!(a.image.data().iter().all(|&v| (0.0..=1.0).contains(&v)));
        assert!(a.mask.data().iter().all(|&v| v == 0.0 || v == 1.0));
        assert!(a.mask.sum() > 0.0);
    }
    assert_ne!(gen_scene(&cfg, 1).unwrap().image, gen_scene(&cfg, 2).unwrap().image);
}

#[test]
fn no_foreground_means_empty_mask() {
    let cfg = SceneConfig {
        n_foreground: (0, 0),
        ..small()
    };
    for seed in 0..5 {
        assert_eq!(gen_scene(&cfg, seed).unwrap().mask.sum(), 0.0);
    }
}

#[test]
fn mean_overlap_lies_in_configured_range() {
    let cfg = small();
    let total: f64 = (0..1000).map(|s| gen_scene(&cfg, s).unwrap().meta.overlap).sum();
    let mean = total / 1000.0;
    assert!(mean >= cfg.overlap.0 && mean <= cfg.overlap.1, "{mean}");
}

#[test]
fn foreground_is_darker_than_clutter_free_background() {
    let cfg = small();
    let (mut fg, mut nf, mut bg, mut nb) = (0.0, 0usize, 0.0, 0usize);
    for seed in 0..100 {
        let s = gen_scene(&cfg, seed).unwrap();
        for (&v, &m) in s.image.data().iter().zip(s.mask.data()) {
            if m > 0.5 {
                fg += v;
                nf += 1;
            } else {
                bg += v;
                nb += 1;
            }
        }
    }
    assert!(fg / (nf as f64) < bg / (nb as f64));
}

#[test]
fn invalid_configs_are_rejected() {
    let bad = [
        SceneConfig { height: 48, ..small() },
        SceneConfig { width: 16, ..small() },
        SceneConfig { n_foreground: (3, 1), ..small() },
        SceneConfig { overlap: (0.5, 0.2), ..small() },
        SceneConfig { overlap: (0.5, 1.2), ..small() },
    ];
    for cfg in bad {
        assert!(gen_scene(&cfg, 0).is_err());
    }
}

#[test]
fn dataset_roundtrip() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = SceneConfig { seed: 9, ..small() };
    let manifest = gen_dataset(&cfg, 3, dir.path()).unwrap();
    assert_eq!(manifest.count, 3);
    assert!(dir.path().join("scene_00002.mask.tns").exists());
    let data = load_dataset(dir.path()).unwrap();
    assert_eq!(data.manifest, manifest);
    let again = gen_scene(&cfg, scene_seed(9, 1)).unwrap();
    // files are stored in single precision
    assert!(data.samples[1].0.max_abs_diff(&again.image).unwrap() < 1e-7);
    assert_eq!(data.samples[1].1, again.mask);
}

#[test]
fn environment_overrides_seed() {
    std::env::set_var(SEED_ENV, "41");
    let cfg = small().with_env_seed().unwrap();
    std::env::set_var(SEED_ENV, "nope");
    let err = small().with_env_seed();
    std::env::remove_var(SEED_ENV);
    assert_eq!(cfg.seed, 41);
    assert!(err.is_err());
}
