use foam_core::fstb::{fdba_forward, fsfn_forward, fstb_forward, sdca_forward, FstbConfig, FstbParams};
use foam_core::gradcheck::{gradcheck, DEFAULT_STEP, DEFAULT_TOLERANCE};
use foam_core::{ParamStore, Tape, Tensor};
use foam_oracle::{Grid, Weights};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn weights(store: &ParamStore<f64>) -> Weights {
    store.ids().map(|id| (store.name(id).to_string(), store.value(id).data().to_vec())).collect()
}

fn grid(t: &Tensor<f64>) -> Grid {
    let (c, h, w) = t.chw().unwrap();
    Grid::new(c, h, w, t.data().to_vec())
}

fn gap(got: &Tensor<f64>, want: &Grid) -> f64 {
    grid(got).max_abs_diff(want)
}

fn setup(seed: u64) -> (ParamStore<f64>, FstbParams, Tensor<f64>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut store = ParamStore::new();
    let p = FstbParams::new(&mut store, "blk", FstbConfig::new(4), &mut rng).unwrap();
    // perturb zero-initialized biases and norm affine terms so they take part
    for id in store.ids().collect::<Vec<_>>() {
        if store.name(id).ends_with("bias") || store.name(id).contains(".norm.") {
            store.value_mut(id).data_mut().iter_mut().for_each(|v| *v += rng.random_range(-0.3..0.3));
        }
    }
    let x = Tensor::from_fn([4, 8, 8], |_| rng.random_range(-1.0..1.0));
    (store, p, x)
}

#[test]
fn block_matches_straight_line_reference() {
    for seed in 0..20 {
        let (store, p, x) = setup(seed);
        let wts = weights(&store);
        let g = grid(&x);
        let d = p.config.dilation;
        let tape = Tape::new();
        let xv = tape.constant(x.clone());
        let cases = [
            ("sdca", sdca_forward(xv, &p.sdca, &store).unwrap(), foam_oracle::sdca(&wts, "blk.sdca", &g, d)),
            ("fdba", fdba_forward(xv, &p.fdba, &store, &p.config).unwrap(), foam_oracle::fdba(&wts, "blk.fdba", &g)),
            ("fsfn", fsfn_forward(xv, &p.fsfn, &store, &p.config).unwrap(), foam_oracle::fsfn(&wts, "blk.fsfn", &g, d)),
            ("fstb", fstb_forward(xv, &p, &store).unwrap(), foam_oracle::fstb(&wts, "blk", &g, d)),
        ];
        for (name, got, want) in cases {
            let err = gap(&got.to_tensor(), &want);
            assert!(err < 1e-6, "seed {seed} {name}: {err}");
        }
    }
}

#[test]
fn every_block_parameter_passes_gradcheck_and_is_live() {
    let (mut store, p, x) = setup(99);
    let mut rng = ChaCha8Rng::seed_from_u64(100);
    let proj = Tensor::from_fn([4, 8, 8], |_| rng.random_range(-1.0..1.0));
    let reports = gradcheck(
        |tape, s| {
            let out = fstb_forward(tape.constant(x.clone()), &p, s)?;
            out.mul(tape.constant(proj.clone()))?.sum()
        },
        &mut store,
        DEFAULT_TOLERANCE,
        DEFAULT_STEP,
    )
    .unwrap();
    assert_eq!(reports.len(), store.len());
    for r in &reports {
        assert!(r.pass, "{r:?}");
        assert!(r.analytic_max_abs > 1e-12, "dead parameter {}", r.name);
    }
}
