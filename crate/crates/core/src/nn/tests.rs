use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::*;
use crate::autograd::{Tape, Var};
use crate::error::Result;
use crate::gradcheck::{gradcheck, DEFAULT_STEP, DEFAULT_TOLERANCE};
use crate::params::ParamStore;
use crate::spectral::{fft2_var, ComplexSpectrum, ComplexVar, FftNorm};
use crate::tensor::Tensor;

fn random(shape: &[usize], rng: &mut ChaCha8Rng) -> Tensor<f64> {
    Tensor::from_fn(shape.to_vec(), |_| rng.random_range(-1.0..1.0))
}

/// Weighted sum with fixed pseudo-random weights so every output matters.
fn project<'t>(out: Var<'t, f64>, seed: u64) -> Result<Var<'t, f64>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let w = random(&out.shape(), &mut rng);
    out.mul(out.tape().constant(w))?.sum()
}

fn assert_gradcheck<F>(name: &str, store: &mut ParamStore<f64>, f: F)
where
    F: for<'t> Fn(&'t Tape<f64>, &ParamStore<f64>) -> Result<Var<'t, f64>>,
{
    for r in gradcheck(f, store, DEFAULT_TOLERANCE, DEFAULT_STEP).unwrap() {
        assert!(r.pass, "{name}: {r:?}");
    }
}

/// Direct six-loop cross-correlation with zero padding.
fn conv_oracle(x: &Tensor<f64>, w: &Tensor<f64>, b: &[f64], dilation: usize) -> Vec<f64> {
    let (ci_n, h, wd) = x.chw().unwrap();
    let (co_n, k) = (w.shape()[0], w.shape()[2]);
    let pad = (dilation * (k - 1) / 2) as isize;
    let mut out = vec![0.0; co_n * h * wd];
    for co in 0..co_n {
        for y in 0..h {
            for xx in 0..wd {
                let mut acc = b[co];
                for ci in 0..ci_n {
                    for ky in 0..k {
                        for kx in 0..k {
                            let sy = y as isize + (ky * dilation) as isize - pad;
                            let sx = xx as isize + (kx * dilation) as isize - pad;
                            if sy < 0 || sx < 0 || sy >= h as isize || sx >= wd as isize {
                                continue;
                            }
                            acc += w.data()[((co * ci_n + ci) * k + ky) * k + kx]
                                * x.data()[(ci * h + sy as usize) * wd + sx as usize];
                        }
                    }
                }
                out[(co * h + y) * wd + xx] = acc;
            }
        }
    }
    out
}

fn impulse(c: usize, h: usize, w: usize, at: (usize, usize)) -> Tensor<f64> {
    let mut t = Tensor::zeros([c, h, w]);
    for ch in 0..c {
        t.data_mut()[(ch * h + at.0) * w + at.1] = 1.0;
    }
    t
}

#[test]
fn identity_pointwise_conv_is_noop() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let mut store = ParamStore::new();
    let p = Conv2dParams::pointwise(&mut store, "c", 3, 3, &mut rng);
    *store.value_mut(p.weight) = Tensor::from_fn([3, 3, 1, 1], |i| if i % 4 == 0 { 1.0 } else { 0.0 });
    let x = random(&[3, 5, 6], &mut rng);
    let tape = Tape::new();
    let y = conv2d(tape.constant(x.clone()), &p, &store).unwrap();
    assert_eq!(*y.value(), x);
}

#[test]
fn ones_kernel_spreads_impulse() {
    let tape = Tape::new();
    let w = tape.constant(Tensor::ones([1, 1, 3, 3]));
    let b = Some(tape.constant(Tensor::zeros([1])));
    let y = conv2d_raw(tape.constant(impulse(1, 5, 5, (2, 2))), w, b, 1).unwrap();
    for (i, &v) in y.value().data().iter().enumerate() {
        let (r, c) = (i / 5, i % 5);
        let inside = (1..=3).contains(&r) && (1..=3).contains(&c);
        assert_eq!(v, if inside { 1.0 } else { 0.0 });
    }
    // zero padding truncates the plateau at a corner
    let y = conv2d_raw(tape.constant(impulse(1, 5, 5, (0, 0))), w, b, 1).unwrap();
    assert_eq!(y.value().sum(), 4.0);
}

#[test]
fn conv_matches_loop_oracle() {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    for &(k, d) in &[(1, 1), (3, 1), (3, 2), (5, 1), (5, 2)] {
        let x = random(&[3, 7, 9], &mut rng);
        let w = random(&[4, 3, k, k], &mut rng);
        let b = random(&[4], &mut rng);
        let tape = Tape::new();
        let y = conv2d_raw(tape.constant(x.clone()), tape.constant(w.clone()), Some(tape.constant(b.clone())), d).unwrap();
        let want = conv_oracle(&x, &w, b.data(), d);
        let err = y.value().data().iter().zip(&want).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        assert!(err < 1e-10, "k={k} d={d}: {err}");
    }
}

#[test]
fn conv_rejects_bad_arguments() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let mut store = ParamStore::new();
    let p = Conv2dParams::new(&mut store, "c", 2, 2, 3, 1, &mut rng);
    let tape = Tape::<f64>::new();
    assert!(conv2d(tape.constant(Tensor::zeros([3, 4, 4])), &p, &store).is_err());
    let w = tape.constant(Tensor::zeros([1, 1, 2, 2]));
    let b = Some(tape.constant(Tensor::zeros([1])));
    assert!(conv2d_raw(tape.constant(Tensor::zeros([1, 4, 4])), w, b, 1).is_err());
    let w = tape.constant(Tensor::zeros([1, 1, 3, 3]));
    assert!(conv2d_raw(tape.constant(Tensor::zeros([1, 4, 4])), w, b, 0).is_err());
}

fn identity_dd(store: &mut ParamStore<f64>, c: usize, k: usize, d: usize) -> DDConvParams {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let p = DDConvParams::new(store, "dd", c, c, k, d, &mut rng);
    *store.value_mut(p.depthwise) = Tensor::from_fn([c, 1, k, k], |i| if i % (k * k) == k * k / 2 { 1.0 } else { 0.0 });
    *store.value_mut(p.pointwise.weight) = Tensor::from_fn([c, c, 1, 1], |i| if i % (c + 1) == 0 { 1.0 } else { 0.0 });
    p
}

#[test]
fn identity_dd_conv_is_noop() {
    let mut store = ParamStore::new();
    let p = identity_dd(&mut store, 4, 3, 2);
    let x = random(&[4, 6, 6], &mut ChaCha8Rng::seed_from_u64(4));
    let tape = Tape::new();
    assert_eq!(*dd_conv(tape.constant(x.clone()), &p, &store).unwrap().value(), x);
}

#[test]
fn dilated_taps_land_two_apart() {
    let mut store = ParamStore::new();
    let p = identity_dd(&mut store, 1, 3, 2);
    *store.value_mut(p.depthwise) = Tensor::ones([1, 1, 3, 3]);
    let tape = Tape::new();
    let y = dd_conv(tape.constant(impulse(1, 9, 9, (4, 4))), &p, &store).unwrap();
    for (i, &v) in y.value().data().iter().enumerate() {
        let (r, c) = (i / 9, i % 9);
        let tap = [2, 4, 6].contains(&r) && [2, 4, 6].contains(&c);
        assert_eq!(v, if tap { 1.0 } else { 0.0 }, "({r},{c})");
    }
}

/// Expands depthwise-then-pointwise weights into one dense dilated kernel:
/// `W[o,i] = P[o,i]·D[i]`.
fn expand_dd(store: &ParamStore<f64>, p: &DDConvParams) -> Tensor<f64> {
    let (c_in, c_out, k) = (p.channels, p.c_out(), p.kernel);
    let dw = store.value(p.depthwise).data();
    let pw = store.value(p.pointwise.weight).data();
    Tensor::from_fn([c_out, c_in, k, k], |idx| {
        let (o, i, tap) = (idx / (c_in * k * k), (idx / (k * k)) % c_in, idx % (k * k));
        pw[o * c_in + i] * dw[i * k * k + tap]
    })
}

#[test]
fn dd_conv_equals_expanded_dense_conv() {
    let mut rng = ChaCha8Rng::seed_from_u64(50);
    for trial in 0..50 {
        let (c_in, c_out) = (rng.random_range(1..5), rng.random_range(1..5));
        let k = [1, 3, 5][trial % 3];
        let d = 1 + trial % 2;
        let mut store = ParamStore::new();
        let p = DDConvParams::new(&mut store, "dd", c_in, c_out, k, d, &mut rng);
        *store.value_mut(p.pointwise.bias.unwrap()) = random(&[c_out], &mut rng);
        let x = random(&[c_in, 8, 7], &mut rng);
        let tape = Tape::new();
        let y = dd_conv(tape.constant(x.clone()), &p, &store).unwrap();
        let want = conv_oracle(&x, &expand_dd(&store, &p), store.value(p.pointwise.bias.unwrap()).data(), d);
        let err = y.value().data().iter().zip(&want).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        assert!(err < 1e-10, "trial {trial}: {err}");
    }
}

proptest! {
    #[test]
    fn convs_preserve_spatial_shape(k in prop::sample::select(vec![1usize, 3, 5]), d in 1usize..3,
                                    h in 1usize..10, w in 1usize..10, seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut store = ParamStore::new();
        let conv = Conv2dParams::new(&mut store, "c", 2, 3, k, d, &mut rng);
        let dd = DDConvParams::new(&mut store, "dd", 2, 3, k, d, &mut rng);
        let tape = Tape::new();
        let x = tape.constant(random(&[2, h, w], &mut rng));
        prop_assert_eq!(conv2d(x, &conv, &store).unwrap().shape(), vec![3, h, w]);
        prop_assert_eq!(dd_conv(x, &dd, &store).unwrap().shape(), vec![3, h, w]);
    }
}

#[test]
fn sigma_of_zero_with_zero_weights_is_half() {
    let mut store = ParamStore::<f64>::new();
    let p = SigmaParams::new(&mut store, "s", 3, &mut ChaCha8Rng::seed_from_u64(5));
    store.zero_values();
    let tape = Tape::new();
    let s = ComplexVar::constant(&tape, &ComplexSpectrum::zeros(3, 4, 4));
    let out = sigma_block(s, &p, &store).unwrap();
    assert!(out.re.value().data().iter().chain(out.im.value().data()).all(|&v| v == 0.5));
}

#[test]
fn sigma_output_stays_in_open_unit_interval() {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let mut store = ParamStore::new();
    let p = SigmaParams::new(&mut store, "s", 4, &mut rng);
    for _ in 0..20 {
        let tape = Tape::new();
        let x = tape.constant(random(&[4, 8, 8], &mut rng).map(|v| v * 10.0));
        let out = sigma_block(fft2_var(x, None, FftNorm::Backward).unwrap(), &p, &store).unwrap();
        for &v in out.re.value().data().iter().chain(out.im.value().data()) {
            assert!(v > 0.0 && v < 1.0, "{v}");
        }
    }
}

#[test]
fn instance_norm_standardizes_each_channel() {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let tape = Tape::new();
    let x = tape.constant(random(&[3, 6, 5], &mut rng).map(|v| 4.0 * v + 2.0));
    let y = instance_norm(x, tape.constant(Tensor::ones([3])), tape.constant(Tensor::zeros([3]))).unwrap();
    for ch in y.value().data().chunks(30) {
        let mean = ch.iter().sum::<f64>() / 30.0;
        let var = ch.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / 30.0;
        assert!(mean.abs() < 1e-12 && (var - 1.0).abs() < 1e-4, "{mean} {var}");
    }
}

#[test]
fn pooling_and_resizing_examples() {
    let tape = Tape::new();
    let x = tape.constant(Tensor::new([1, 2, 4], vec![1.0, 3.0, 5.0, 7.0, 1.0, 3.0, 5.0, 7.0]).unwrap());
    assert_eq!(avg_pool2(x).unwrap().value().data(), &[2.0, 6.0]);
    assert!(avg_pool2(tape.constant(Tensor::zeros([1, 3, 4]))).is_err());

    let c = Tensor::<f64>::full([2, 3, 5], 0.25);
    let up = resize_bilinear(&c, 12, 7).unwrap();
    assert!(up.data().iter().all(|&v| (v - 0.25).abs() < 1e-15));
    // half-pixel centres: doubling [0, 1] gives [0, 0.25, 0.75, 1]
    let ramp = Tensor::new([1, 1, 2], vec![0.0, 1.0]).unwrap();
    assert_eq!(resize_bilinear(&ramp, 1, 4).unwrap().data(), &[0.0, 0.25, 0.75, 1.0]);
}

#[test]
fn bce_examples() {
    let tape = Tape::<f64>::new();
    let z = tape.constant(Tensor::new([2], vec![0.0, 0.0]).unwrap());
    let t = Tensor::new([2], vec![1.0, 0.0]).unwrap();
    assert!((bce_with_logits(z, &t).unwrap().item() - std::f64::consts::LN_2).abs() < 1e-15);
    let z = tape.constant(Tensor::new([2], vec![800.0, -800.0]).unwrap());
    assert!(bce_with_logits(z, &t).unwrap().item().abs() < 1e-300);
    assert_eq!(bce_with_logits(z, &Tensor::zeros([3])).unwrap_err().to_string().is_empty(), false);
}

#[test]
fn layers_pass_gradcheck() {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    for trial in 0..3 {
        let mut store = ParamStore::new();
        let x = store.insert("x", random(&[3, 6, 6], &mut rng));
        let conv = Conv2dParams::new(&mut store, "conv", 3, 2, 3, 1 + trial % 2, &mut rng);
        let dd = DDConvParams::new(&mut store, "dd", 3, 2, 5, 2, &mut rng);
        store.value_mut(conv.bias.unwrap()).data_mut().iter_mut().for_each(|b| *b = 0.3);
        let scale = store.insert("scale", random(&[3], &mut rng));
        let shift = store.insert("shift", random(&[3], &mut rng));
        let target = Tensor::from_fn([2, 6, 6], |_| f64::from(rng.random_range(0..2u8)));
        assert_gradcheck("conv", &mut store, |t, s| project(conv2d(t.param(s, x), &conv, s)?, 1));
        assert_gradcheck("dd", &mut store, |t, s| project(dd_conv(t.param(s, x), &dd, s)?, 2));
        assert_gradcheck("norm", &mut store, |t, s| {
            project(instance_norm(t.param(s, x), t.param(s, scale), t.param(s, shift))?, 3)
        });
        assert_gradcheck("pool", &mut store, |t, s| project(avg_pool2(t.param(s, x))?, 4));
        assert_gradcheck("upsample", &mut store, |t, s| project(upsample_bilinear(t.param(s, x), 11, 8)?, 5));
        assert_gradcheck("bce", &mut store, |t, s| bce_with_logits(conv2d(t.param(s, x), &conv, s)?, &target));
    }
}

#[test]
fn sigma_block_passes_gradcheck() {
    let mut rng = ChaCha8Rng::seed_from_u64(10);
    let mut store = ParamStore::new();
    let x = store.insert("x", random(&[2, 4, 4], &mut rng));
    let p = SigmaParams::new(&mut store, "sigma", 2, &mut rng);
    let shift = p.norm_shift;
    *store.value_mut(shift) = Tensor::full([2], 0.5);
    assert_gradcheck("sigma", &mut store, |t, s| {
        let out = sigma_block(fft2_var(t.param(s, x), None, FftNorm::Backward)?, &p, s)?;
        Ok(project(out.re, 11)?.add(project(out.im, 12)?)?)
    });
}
