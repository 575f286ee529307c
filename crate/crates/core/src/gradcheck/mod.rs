//! Central finite differences and analytic-vs-numeric gradient comparison.

use serde::Serialize;

mod components;

pub use components::{check_component, Component};

use crate::autograd::{Tape, Var};
use crate::error::{Error, Result};
use crate::params::ParamStore;
use crate::scalar::Scalar;
use crate::tensor::Tensor;

pub const DEFAULT_STEP: f64 = 1e-5;
pub const DEFAULT_TOLERANCE: f64 = 1e-3;

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct GradReport {
    pub name: String,
    pub max_rel_error: f64,
    pub pass: bool,
    pub worst_index: usize,
    pub analytic_max_abs: f64,
}

/// `(f(p + h·eᵢ) − f(p − h·eᵢ)) / 2h` for every element `i` of `p`.
pub fn finite_diff_grad<T: Scalar>(
    mut f: impl FnMut(&Tensor<T>) -> Result<T>,
    p: &Tensor<T>,
    h: T,
) -> Result<Tensor<T>> {
    if h <= T::zero() {
        return Err(Error::InvalidArgument(format!("step must be positive, got {h}")));
    }
    let mut probe = p.clone();
    let mut grad = Vec::with_capacity(p.numel());
    for i in 0..p.numel() {
        let orig = probe.data()[i];
        probe.data_mut()[i] = orig + h;
        let up = f(&probe)?;
        probe.data_mut()[i] = orig - h;
        let down = f(&probe)?;
        probe.data_mut()[i] = orig;
        if !up.is_finite() || !down.is_finite() {
            return Err(Error::NonFinite {
                op: "finite_diff_grad",
            });
        }
        grad.push((up - down) / (h + h));
    }
    Tensor::new(p.shape(), grad)
}

/// Relative disagreement `max|a−b| / max(1e-8, max|a| + max|b|)` and the
/// index of the worst element.
pub fn relative_error(analytic: &[f64], numeric: &[f64]) -> (f64, usize) {
    let (mut worst, mut worst_index) = (0.0f64, 0);
    let (mut amax, mut nmax) = (0.0f64, 0.0f64);
    for (i, (&a, &n)) in analytic.iter().zip(numeric).enumerate() {
        let d = (a - n).abs();
        if d > worst {
            worst = d;
            worst_index = i;
        }
        amax = amax.max(a.abs());
        nmax = nmax.max(n.abs());
    }
    (worst / (amax + nmax).max(1e-8), worst_index)
}

/// Compares backward-pass gradients of every parameter in `store` against
/// central finite differences with step `h`.
///
/// `f` builds the scalar loss on a fresh tape. Failures are reported, not
/// returned as errors.
pub fn gradcheck<F>(
    f: F,
    store: &mut ParamStore<f64>,
    tol: f64,
    h: f64,
) -> Result<Vec<GradReport>>
where
    F: for<'t> Fn(&'t Tape<f64>, &ParamStore<f64>) -> Result<Var<'t, f64>>,
{
    gradcheck_where(f, store, |_| true, tol, h)
}

/// As [`gradcheck`], restricted to parameters whose name passes `keep`.
pub fn gradcheck_where<F>(
    f: F,
    store: &mut ParamStore<f64>,
    keep: impl Fn(&str) -> bool,
    tol: f64,
    h: f64,
) -> Result<Vec<GradReport>>
where
    F: for<'t> Fn(&'t Tape<f64>, &ParamStore<f64>) -> Result<Var<'t, f64>>,
{
    store.zero_grad();
    {
        let tape = Tape::new();
        let loss = f(&tape, store)?;
        tape.backward(loss)?;
        tape.flush_param_grads(store);
    }
    let ids: Vec<_> = store.ids().filter(|&id| keep(store.name(id))).collect();
    let mut reports = Vec::with_capacity(ids.len());
    for id in ids {
        let analytic = store.grad(id).to_vec();
        let original = store.value(id).clone();
        let mut probe = store.clone();
        let numeric = finite_diff_grad(
            |p| {
                *probe.value_mut(id) = p.clone();
                let tape = Tape::new();
                Ok(f(&tape, &probe)?.item())
            },
            &original,
            h,
        )?;
        let (max_rel_error, worst_index) = relative_error(&analytic, numeric.data());
        reports.push(GradReport {
            name: store.name(id).to_string(),
            max_rel_error,
            pass: max_rel_error < tol,
            worst_index,
            analytic_max_abs: analytic.iter().fold(0.0, |m, v| m.max(v.abs())),
        });
    }
    Ok(reports)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn square_sum_gradient() {
        let p = Tensor::<f64>::new([2], vec![1.0, 2.0]).unwrap();
        let g = finite_diff_grad(|x| Ok(x.data().iter().map(|v| v * v).sum()), &p, 1e-5).unwrap();
        assert!((g.data()[0] - 2.0).abs() < 1e-6);
        assert!((g.data()[1] - 4.0).abs() < 1e-6);
    }

    #[test]
    fn sine_gradient_at_zero() {
        let p = Tensor::<f64>::zeros([1]);
        let g = finite_diff_grad(|x| Ok(x.data()[0].sin()), &p, 1e-5).unwrap();
        assert!((g.data()[0] - 1.0).abs() < 1e-6);
    }

    #[test]
    fn rejects_bad_step_and_nonfinite() {
        let p = Tensor::<f64>::zeros([1]);
        assert!(finite_diff_grad(|_| Ok(0.0), &p, 0.0).is_err());
        assert!(finite_diff_grad(|_| Ok(f64::NAN), &p, 1e-5).is_err());
    }

    #[test]
    fn report_flags_wrong_gradient() {
        let mut store = ParamStore::new();
        store.insert("x", Tensor::<f64>::new([3], vec![0.3, -1.2, 2.0]).unwrap());
        let id = store.find("x").unwrap();
        let good = gradcheck(
            |tape, s| tape.param(s, id).square()?.sum(),
            &mut store,
            1e-3,
            1e-5,
        )
        .unwrap();
        assert!(good[0].pass, "{good:?}");

        let (err, idx) = relative_error(&[1.0, 2.0, 3.0], &[1.0, 2.5, 3.0]);
        assert!(err > 1e-3);
        assert_eq!(idx, 1);
    }
}
