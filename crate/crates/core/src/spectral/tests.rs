use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use super::*;
use crate::autograd::Tape;
use crate::gradcheck::gradcheck;
use crate::params::ParamStore;

fn random(shape: [usize; 3], seed: u64) -> Tensor<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Tensor::from_fn(shape, |_| rng.random_range(-1.0..1.0))
}

fn random_spectrum(shape: [usize; 3], seed: u64) -> ComplexSpectrum<f64> {
    ComplexSpectrum::new(random(shape, seed), random(shape, seed + 1000)).unwrap()
}

#[test]
fn constant_image_is_dc_only() {
    let x = Tensor::full([1, 4, 4], 0.75f64);
    let s = fft2(&x).unwrap();
    assert_eq!(s.at(0, 0, 0), (12.0, 0.0));
    for u in 0..4 {
        for v in 0..4 {
            if (u, v) != (0, 0) {
                let (r, i) = s.at(0, u, v);
                assert!(r.abs() < 1e-12 && i.abs() < 1e-12);
            }
        }
    }
    let m = magnitude(&s);
    assert_eq!(m.data().iter().filter(|&&v| v > 1e-12).count(), 1);
}

#[test]
fn impulse_has_flat_spectrum() {
    let mut x = Tensor::<f64>::zeros([1, 8, 8]);
    x.data_mut()[0] = 1.0;
    let s = fft2(&x).unwrap();
    assert!(s.re().data().iter().all(|&v| (v - 1.0).abs() < 1e-15));
    assert!(s.im().data().iter().all(|&v| v.abs() < 1e-15));
}

#[test]
fn fast_path_matches_direct_sum() {
    let x = random([3, 8, 8], 1);
    let err = fft2(&x).unwrap().max_abs_diff(&dft2_naive(&x).unwrap()).unwrap();
    assert!(err < 1e-10, "{err}");
    let s = random_spectrum([2, 8, 8], 2);
    let fast = ifft2(&s).unwrap();
    let naive = idft2_naive_complex(&s).unwrap();
    assert!(fast.max_abs_diff(&naive).unwrap() < 1e-10);
    assert!(fft2_complex(&s)
        .unwrap()
        .max_abs_diff(&super::spectrum_from(s.re().shape(), dft2_planes(s.re().data(), s.im().data(), 8, 8, -1.0)).unwrap())
        .unwrap()
        < 1e-10);
}

#[test]
fn non_power_of_two_falls_back() {
    let x = random([1, 6, 5], 3);
    let s = fft2(&x).unwrap();
    assert_eq!(s, dft2_naive(&x).unwrap());
    let back = ifft2_real(&s).unwrap();
    assert!(back.max_abs_diff(&x).unwrap() < 1e-12);
}

#[test]
fn inverse_examples() {
    let mut s = ComplexSpectrum::<f64>::zeros(1, 4, 8);
    let mut re = s.re().clone();
    re.data_mut()[0] = 32.0;
    s = ComplexSpectrum::new(re, s.im().clone()).unwrap();
    let x = ifft2_real(&s).unwrap();
    assert!(x.data().iter().all(|&v| (v - 1.0).abs() < 1e-15));

    let x = random([2, 16, 8], 4);
    let back = ifft2(&fft2(&x).unwrap()).unwrap();
    assert!(back.re().max_abs_diff(&x).unwrap() < 1e-10);
    assert!(back.im().max_abs() < 1e-10);

    let x32: Tensor<f32> = x.cast();
    let back32 = ifft2_real(&fft2(&x32).unwrap()).unwrap();
    assert!(back32.max_abs_diff(&x32).unwrap() < 1e-5);
}

#[test]
fn magnitude_and_phase_examples() {
    let s = ComplexSpectrum::new(
        Tensor::<f64>::from_f64([1, 1, 4], &[3.0, 1.0, 0.0, 0.0]).unwrap(),
        Tensor::<f64>::from_f64([1, 1, 4], &[4.0, 0.0, 1.0, 0.0]).unwrap(),
    )
    .unwrap();
    assert_eq!(magnitude(&s).data()[0], 5.0);
    let p = phase(&s);
    assert_eq!(p.data()[1], 0.0);
    assert_eq!(p.data()[2], std::f64::consts::FRAC_PI_2);
    assert_eq!(p.data()[3], 0.0);
    // the negative real axis maps to +π, never −π
    let neg = ComplexSpectrum::new(
        Tensor::<f64>::from_f64([1, 1, 2], &[-1.0, -1.0]).unwrap(),
        Tensor::<f64>::from_f64([1, 1, 2], &[0.0, -0.0]).unwrap(),
    )
    .unwrap();
    assert!(phase(&neg).data().iter().all(|&v| v == std::f64::consts::PI));
}

#[test]
fn polar_recombine_restores_spectrum() {
    for seed in 0..10 {
        let s = random_spectrum([2, 8, 8], seed);
        let back = polar_recombine(&magnitude(&s), &phase(&s)).unwrap();
        assert!(back.max_abs_diff(&s).unwrap() < 1e-6);
    }
}

#[test]
fn circular_shift_keeps_magnitude_but_not_phase() {
    let x = random([1, 8, 8], 5);
    let shifted = Tensor::from_fn([1, 8, 8], |i| {
        let (r, c) = (i / 8, i % 8);
        x.data()[((r + 3) % 8) * 8 + (c + 5) % 8]
    });
    let (a, b) = (fft2(&x).unwrap(), fft2(&shifted).unwrap());
    assert!(magnitude(&a).max_abs_diff(&magnitude(&b)).unwrap() < 1e-5);
    assert!(phase(&a).max_abs_diff(&phase(&b)).unwrap() > 1e-2);
}

#[test]
fn fftshift_centers_dc() {
    let x = Tensor::full([1, 4, 6], 1.0f64);
    let s = fftshift(&fft2(&x).unwrap());
    assert_eq!(s.at(0, 2, 3).0, 24.0);
}

#[test]
fn band_energy_of_constant_image() {
    let r = band_energy(&fft2(&Tensor::full([1, 16, 16], 0.3f64)).unwrap(), &DEFAULT_BAND_EDGES).unwrap();
    assert!((r.fractions[0] - 1.0).abs() < 1e-12);
    assert!(r.fractions[1..].iter().all(|&f| f.abs() < 1e-12));
}

#[test]
fn band_energy_rejects_bad_edges() {
    let s = fft2(&Tensor::full([1, 4, 4], 1.0f64)).unwrap();
    assert!(band_energy(&s, &[0.25, 0.1]).is_err());
    assert!(band_energy(&s, &[0.0, 0.1]).is_err());
    assert!(band_energy(&s, &[0.1, 0.8]).is_err());
    assert!(band_energy(&fft2(&Tensor::<f64>::zeros([1, 4, 4])).unwrap(), &[0.1]).is_err());
}

/// Edges splitting the bins of an `n×n` plane into three equal-count groups.
fn equal_area_edges(n: usize) -> ([f64; 2], [f64; 3]) {
    let mut radii = radial_frequency(n, n);
    radii.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let total = radii.len();
    let cut = |k: usize| {
        let i = k * total / 3;
        0.5 * (radii[i - 1] + radii[i])
    };
    let edges = [cut(1), cut(2)];
    let mut counts = [0.0; 3];
    for r in radial_frequency(n, n) {
        counts[band_of(r, &edges)] += 1.0;
    }
    (edges, counts.map(|c| c / total as f64))
}

#[test]
fn white_noise_energy_follows_band_area() {
    let (edges, area) = equal_area_edges(32);
    let mut mean = [0.0; 3];
    for seed in 0..100 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let x = Tensor::<f64>::from_fn([1, 32, 32], |_| rng.sample(StandardNormal));
        let r = band_energy(&fft2(&x).unwrap(), &edges).unwrap();
        mean.iter_mut().zip(&r.fractions).for_each(|(m, f)| *m += f / 100.0);
    }
    for (m, a) in mean.iter().zip(area) {
        assert!((m - a).abs() < 0.2 * a, "mean {mean:?} vs area {area:?}");
    }
}

#[test]
fn blur_lowers_high_band_share() {
    for seed in 0..20 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let x = Tensor::<f64>::from_fn([1, 32, 32], |_| rng.random_range(0.0..1.0));
        // separable [1 2 1]/4 Gaussian, circular boundary
        let k = [0.25, 0.5, 0.25];
        let blur = |t: &Tensor<f64>, dr: usize, dc: usize| {
            Tensor::from_fn([1, 32, 32], |i| {
                let (r, c) = (i / 32, i % 32);
                (0..3)
                    .map(|j| {
                        let off = j + 31;
                        let (rr, cc) = ((r + off * dr) % 32, (c + off * dc) % 32);
                        k[j] * t.data()[rr * 32 + cc]
                    })
                    .sum()
            })
        };
        let blurred = blur(&blur(&x, 1, 0), 0, 1);
        let before = band_energy(&fft2(&x).unwrap(), &DEFAULT_BAND_EDGES).unwrap();
        let after = band_energy(&fft2(&blurred).unwrap(), &DEFAULT_BAND_EDGES).unwrap();
        assert!(after.high() < before.high());
    }
}

#[test]
fn spectral_ops_pass_gradcheck() {
    for seed in 0..5 {
        let mut store = ParamStore::new();
        let re = store.insert("re", random([2, 4, 4], seed));
        let im = store.insert("im", random([2, 4, 4], seed + 50));
        let weights = random([2, 4, 4], seed + 99);
        let reports = gradcheck(
            |tape: &Tape<f64>, s| {
                let z = ComplexVar {
                    re: tape.param(s, re),
                    im: tape.param(s, im),
                };
                let f = fft2_var(z.re, Some(z.im), FftNorm::Backward)?;
                let m = magnitude_var(f)?;
                let p = phase_var(f)?;
                let back = ifft2_var(polar_var(m.scale(0.5)?, p)?, FftNorm::Ortho)?;
                let w = tape.constant(weights.clone());
                let a = magnitude_var(back)?.mul(w)?.sum()?;
                let b = phase_var(z)?.mul(w)?.sum()?;
                let c = complex_mul(back, z)?.re.sum()?;
                a.add(b)?.add(c)
            },
            &mut store,
            1e-3,
            1e-5,
        )
        .unwrap();
        assert!(reports.iter().all(|r| r.pass), "{reports:?}");
    }
}

#[test]
fn tape_phase_matches_plain_phase_bitwise() {
    let x = random([2, 8, 8], 8);
    let tape = Tape::new();
    let f = fft2_var(tape.constant(x.clone()), None, FftNorm::Backward).unwrap();
    assert_eq!(phase_var(f).unwrap().to_tensor(), phase(&fft2(&x).unwrap()));
    assert_eq!(magnitude_var(f).unwrap().to_tensor(), magnitude(&fft2(&x).unwrap()));
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(40))]

    #[test]
    fn transform_laws(seed in 0u64..10_000, hp in 0u32..4, wp in 0u32..4, a in -2.0f64..2.0, b in -2.0f64..2.0) {
        let (h, w) = (1usize << hp, 1usize << wp);
        let x = random([2, h, w], seed);
        let y = random([2, h, w], seed + 7);
        let fx = fft2(&x).unwrap();
        let fy = fft2(&y).unwrap();

        let combo = x.zip_with(&y, |p, q| a * p + b * q).unwrap();
        let lhs = fft2(&combo).unwrap();
        let scale = fx.re().max_abs().max(fy.re().max_abs()).max(1.0);
        for i in 0..lhs.re().numel() {
            let re = a * fx.re().data()[i] + b * fy.re().data()[i];
            let im = a * fx.im().data()[i] + b * fy.im().data()[i];
            prop_assert!((lhs.re().data()[i] - re).abs() <= 1e-6 * scale);
            prop_assert!((lhs.im().data()[i] - im).abs() <= 1e-6 * scale);
        }

        let energy: f64 = x.data().iter().map(|v| v * v).sum();
        let spectral: f64 = magnitude(&fx).data().iter().map(|m| m * m).sum::<f64>() / (h * w) as f64;
        prop_assert!((energy - spectral).abs() <= 1e-5 * energy.max(1e-12));

        for c in 0..2 {
            for u in 0..h {
                for v in 0..w {
                    let (r1, i1) = fx.at(c, u, v);
                    let (r2, i2) = fx.at(c, (h - u) % h, (w - v) % w);
                    prop_assert!((r1 - r2).abs() <= 1e-5 * scale);
                    prop_assert!((i1 + i2).abs() <= 1e-5 * scale);
                }
            }
        }
    }

    #[test]
    fn softmax_slices_sum_to_one_and_ignore_shifts(seed in 0u64..10_000, shift in -50.0f64..50.0) {
        let x = random([3, 4, 5], seed).map(|v| v * 10.0);
        let s = crate::autograd::softmax(&x, 2).unwrap();
        for row in s.data().chunks(5) {
            prop_assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-6);
            prop_assert!(row.iter().all(|&v| v >= 0.0));
        }
        let shifted = crate::autograd::softmax(&x.map(|v| v + shift), 2).unwrap();
        prop_assert!(s.max_abs_diff(&shifted).unwrap() < 1e-6);
    }
}
