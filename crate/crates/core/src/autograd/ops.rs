use super::{BackwardCtx, Var};
use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// How the smaller operand of a binary op is repeated to the larger shape.
///
/// Only leading expansion is allowed: after dropping leading unit extents the
/// smaller shape must be a suffix of the larger one, so element `i` of the
/// output reads element `i % small_len` of the smaller operand.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum Broadcast {
    Same,
    Lhs,
    Rhs,
}

fn strip_leading_ones(shape: &[usize]) -> &[usize] {
    let start = shape.iter().position(|&d| d != 1).unwrap_or(shape.len());
    &shape[start..]
}

fn broadcast_plan(op: &'static str, a: &[usize], b: &[usize]) -> Result<(Vec<usize>, Broadcast)> {
    if a == b {
        return Ok((a.to_vec(), Broadcast::Same));
    }
    let (sa, sb) = (strip_leading_ones(a), strip_leading_ones(b));
    if sa.len() <= sb.len() && sb.ends_with(sa) {
        return Ok((b.to_vec(), Broadcast::Lhs));
    }
    if sb.len() <= sa.len() && sa.ends_with(sb) {
        return Ok((a.to_vec(), Broadcast::Rhs));
    }
    Err(Error::shape(op, a, b))
}

/// Sums `grad` (output sized) down to a buffer of `len` elements by folding
/// the leading repetitions.
fn fold_repeats<T: Scalar>(grad: &[T], len: usize) -> Vec<T> {
    if grad.len() == len {
        return grad.to_vec();
    }
    let mut out = vec![T::zero(); len];
    for chunk in grad.chunks_exact(len) {
        out.iter_mut().zip(chunk).for_each(|(o, &g)| *o += g);
    }
    out
}

fn binary_values<T: Scalar>(
    a: &Tensor<T>,
    b: &Tensor<T>,
    plan: Broadcast,
    f: impl Fn(T, T) -> T,
) -> Vec<T> {
    let (ad, bd) = (a.data(), b.data());
    match plan {
        Broadcast::Same => ad.iter().zip(bd).map(|(&x, &y)| f(x, y)).collect(),
        Broadcast::Lhs => bd
            .iter()
            .enumerate()
            .map(|(i, &y)| f(ad[i % ad.len()], y))
            .collect(),
        Broadcast::Rhs => ad
            .iter()
            .enumerate()
            .map(|(i, &x)| f(x, bd[i % bd.len()]))
            .collect(),
    }
}

fn lhs_at<T: Scalar>(ctx: &BackwardCtx<'_, T>, i: usize) -> T {
    let d = ctx.inputs[0].data();
    d[i % d.len()]
}

fn rhs_at<T: Scalar>(ctx: &BackwardCtx<'_, T>, i: usize) -> T {
    let d = ctx.inputs[1].data();
    d[i % d.len()]
}

fn check_axis(op: &'static str, shape: &[usize], axis: usize) -> Result<(usize, usize, usize)> {
    if axis >= shape.len() {
        return Err(Error::invalid_shape(
            op,
            format!("axis {axis} out of range for shape {shape:?}"),
        ));
    }
    let outer = shape[..axis].iter().product();
    let inner = shape[axis + 1..].iter().product();
    Ok((outer, shape[axis], inner))
}

pub(crate) fn gelu<T: Scalar>(x: T) -> T {
    let half = T::of(0.5);
    half * x * (T::one() + (x * T::FRAC_1_SQRT_2()).erf())
}

fn gelu_grad<T: Scalar>(x: T) -> T {
    let half = T::of(0.5);
    let cdf = half * (T::one() + (x * T::FRAC_1_SQRT_2()).erf());
    let pdf = (-half * x * x).exp() / (T::of(2.0) * T::PI()).sqrt();
    cdf + x * pdf
}

pub(crate) fn sigmoid<T: Scalar>(x: T) -> T {
    if x >= T::zero() {
        T::one() / (T::one() + (-x).exp())
    } else {
        let e = x.exp();
        e / (T::one() + e)
    }
}

impl<'t, T: Scalar> Var<'t, T> {
    fn binary(
        self,
        other: Var<'t, T>,
        op: &'static str,
        f: impl Fn(T, T) -> T,
        backward: impl Fn(&BackwardCtx<'_, T>) -> (Vec<T>, Vec<T>) + 'static,
    ) -> Result<Var<'t, T>> {
        let (shape, data) = {
            let (a, b) = (self.value(), other.value());
            let (shape, plan) = broadcast_plan(op, a.shape(), b.shape())?;
            (shape, binary_values(&a, &b, plan, f))
        };
        let out = Tensor::new(shape, data)?;
        self.tape.record(
            op,
            out,
            &[self, other],
            Box::new(move |ctx| {
                let (ga, gb) = backward(ctx);
                vec![
                    fold_repeats(&ga, ctx.inputs[0].numel()),
                    fold_repeats(&gb, ctx.inputs[1].numel()),
                ]
            }),
        )
    }

    pub fn add(self, other: Var<'t, T>) -> Result<Var<'t, T>> {
        self.binary(other, "add", |a, b| a + b, |ctx| {
            (ctx.grad.to_vec(), ctx.grad.to_vec())
        })
    }

    pub fn sub(self, other: Var<'t, T>) -> Result<Var<'t, T>> {
        self.binary(other, "sub", |a, b| a - b, |ctx| {
            (ctx.grad.to_vec(), ctx.grad.iter().map(|&g| -g).collect())
        })
    }

    /// Hadamard product.
    pub fn mul(self, other: Var<'t, T>) -> Result<Var<'t, T>> {
        self.binary(other, "mul", |a, b| a * b, |ctx| {
            let ga = ctx
                .grad
                .iter()
                .enumerate()
                .map(|(i, &g)| g * rhs_at(ctx, i))
                .collect();
            let gb = ctx
                .grad
                .iter()
                .enumerate()
                .map(|(i, &g)| g * lhs_at(ctx, i))
                .collect();
            (ga, gb)
        })
    }

    pub fn div(self, other: Var<'t, T>) -> Result<Var<'t, T>> {
        if other.value().data().iter().any(|v| v.is_zero()) {
            return Err(Error::domain("div", "division by zero"));
        }
        self.binary(other, "div", |a, b| a / b, |ctx| {
            let ga = ctx
                .grad
                .iter()
                .enumerate()
                .map(|(i, &g)| g / rhs_at(ctx, i))
                .collect();
            let gb = ctx
                .grad
                .iter()
                .enumerate()
                .map(|(i, &g)| {
                    let b = rhs_at(ctx, i);
                    -g * lhs_at(ctx, i) / (b * b)
                })
                .collect();
            (ga, gb)
        })
    }

    fn unary(
        self,
        op: &'static str,
        f: impl Fn(T) -> T,
        // (input, output) -> local derivative
        df: impl Fn(T, T) -> T + 'static,
    ) -> Result<Var<'t, T>> {
        let out = self.value().map(f);
        self.tape.record(
            op,
            out,
            &[self],
            Box::new(move |ctx| {
                let (x, y) = (ctx.inputs[0].data(), ctx.output.data());
                vec![ctx
                    .grad
                    .iter()
                    .enumerate()
                    .map(|(i, &g)| g * df(x[i], y[i]))
                    .collect()]
            }),
        )
    }

    pub fn neg(self) -> Result<Var<'t, T>> {
        self.unary("neg", |x| -x, |_, _| -T::one())
    }

    pub fn add_scalar(self, c: T) -> Result<Var<'t, T>> {
        self.unary("add_scalar", move |x| x + c, |_, _| T::one())
    }

    pub fn scale(self, c: T) -> Result<Var<'t, T>> {
        self.unary("scale", move |x| x * c, move |_, _| c)
    }

    pub fn square(self) -> Result<Var<'t, T>> {
        self.unary("square", |x| x * x, |x, _| T::of(2.0) * x)
    }

    pub fn exp(self) -> Result<Var<'t, T>> {
        self.unary("exp", T::exp, |_, y| y)
    }

    pub fn log(self) -> Result<Var<'t, T>> {
        if self.value().data().iter().any(|&v| v <= T::zero()) {
            return Err(Error::domain("log", "logarithm of a nonpositive value"));
        }
        self.unary("log", T::ln, |x, _| T::one() / x)
    }

    pub fn sin(self) -> Result<Var<'t, T>> {
        self.unary("sin", T::sin, |x, _| x.cos())
    }

    pub fn cos(self) -> Result<Var<'t, T>> {
        self.unary("cos", T::cos, |x, _| -x.sin())
    }

    pub fn relu(self) -> Result<Var<'t, T>> {
        self.unary(
            "relu",
            |x| x.max(T::zero()),
            |x, _| if x > T::zero() { T::one() } else { T::zero() },
        )
    }

    /// Exact GELU, `x·Φ(x)` with the Gaussian CDF.
    pub fn gelu(self) -> Result<Var<'t, T>> {
        self.unary("gelu", gelu, |x, _| gelu_grad(x))
    }

    pub fn sigmoid(self) -> Result<Var<'t, T>> {
        self.unary("sigmoid", sigmoid, |_, y| y * (T::one() - y))
    }

    pub fn clamp(self, lo: T, hi: T) -> Result<Var<'t, T>> {
        if lo > hi {
            return Err(Error::InvalidArgument(format!("clamp bounds {lo} > {hi}")));
        }
        self.unary(
            "clamp",
            move |x| x.max(lo).min(hi),
            move |x, _| if x >= lo && x <= hi { T::one() } else { T::zero() },
        )
    }

    /// Sum of all elements, as a rank-0 tensor.
    pub fn sum(self) -> Result<Var<'t, T>> {
        let s = self.value().sum();
        self.tape.record(
            "sum",
            Tensor::scalar(s),
            &[self],
            Box::new(|ctx| vec![vec![ctx.grad[0]; ctx.inputs[0].numel()]]),
        )
    }

    pub fn mean(self) -> Result<Var<'t, T>> {
        let n = self.numel();
        if n == 0 {
            return Err(Error::invalid_shape("mean", "mean of an empty tensor"));
        }
        self.sum()?.scale(T::one() / T::of_usize(n))
    }

    pub fn reshape(self, shape: impl Into<Vec<usize>>) -> Result<Var<'t, T>> {
        let out = self.to_tensor().reshape(shape)?;
        self.tape.record(
            "reshape",
            out,
            &[self],
            Box::new(|ctx| vec![ctx.grad.to_vec()]),
        )
    }

    /// Transpose of a matrix.
    pub fn t(self) -> Result<Var<'t, T>> {
        let (m, n, out) = {
            let v = self.value();
            let &[m, n] = v.shape() else {
                return Err(Error::invalid_shape(
                    "transpose",
                    format!("expected a matrix, got {:?}", v.shape()),
                ));
            };
            let d = v.data();
            let data = (0..n * m).map(|i| d[(i % m) * n + i / m]).collect();
            (m, n, Tensor::new([n, m], data)?)
        };
        self.tape.record(
            "transpose",
            out,
            &[self],
            Box::new(move |ctx| {
                // grad is n×m; result m×n
                vec![(0..m * n).map(|i| ctx.grad[(i % n) * m + i / n]).collect()]
            }),
        )
    }

    /// Matrix product `[M×K]·[K×N]`.
    pub fn matmul(self, other: Var<'t, T>) -> Result<Var<'t, T>> {
        let (m, k, n, out) = {
            let (a, b) = (self.value(), other.value());
            let (&[m, k], &[k2, n]) = (a.shape(), b.shape()) else {
                return Err(Error::shape("matmul", a.shape(), b.shape()));
            };
            if k != k2 {
                return Err(Error::shape("matmul", a.shape(), b.shape()));
            }
            (m, k, n, Tensor::new([m, n], matmul_raw(a.data(), b.data(), m, k, n))?)
        };
        self.tape.record(
            "matmul",
            out,
            &[self, other],
            Box::new(move |ctx| {
                let (a, b, g) = (ctx.inputs[0].data(), ctx.inputs[1].data(), ctx.grad);
                // dA = G·Bᵀ, dB = Aᵀ·G
                let mut ga = vec![T::zero(); m * k];
                for i in 0..m {
                    for j in 0..n {
                        let gij = g[i * n + j];
                        if gij.is_zero() {
                            continue;
                        }
                        let row = &b[..];
                        for p in 0..k {
                            ga[i * k + p] += gij * row[p * n + j];
                        }
                    }
                }
                let mut gb = vec![T::zero(); k * n];
                for i in 0..m {
                    for p in 0..k {
                        let aip = a[i * k + p];
                        if aip.is_zero() {
                            continue;
                        }
                        let dst = &mut gb[p * n..(p + 1) * n];
                        let src = &g[i * n..(i + 1) * n];
                        dst.iter_mut().zip(src).for_each(|(d, &s)| *d += aip * s);
                    }
                }
                vec![ga, gb]
            }),
        )
    }

    /// Softmax along `axis`, stabilized by subtracting the slice maximum.
    pub fn softmax(self, axis: usize) -> Result<Var<'t, T>> {
        let (dims, out) = {
            let v = self.value();
            let dims = check_axis("softmax", v.shape(), axis)?;
            (dims, Tensor::new(v.shape(), softmax_raw(v.data(), dims))?)
        };
        self.tape.record(
            "softmax",
            out,
            &[self],
            Box::new(move |ctx| {
                let (outer, len, inner) = dims;
                let (y, g) = (ctx.output.data(), ctx.grad);
                let mut gx = vec![T::zero(); y.len()];
                for o in 0..outer {
                    for i in 0..inner {
                        let at = |k: usize| o * len * inner + k * inner + i;
                        let dot: T = (0..len).map(|k| g[at(k)] * y[at(k)]).sum();
                        for k in 0..len {
                            gx[at(k)] = y[at(k)] * (g[at(k)] - dot);
                        }
                    }
                }
                vec![gx]
            }),
        )
    }

    pub fn log_softmax(self, axis: usize) -> Result<Var<'t, T>> {
        let (dims, out) = {
            let v = self.value();
            let dims @ (outer, len, inner) = check_axis("log_softmax", v.shape(), axis)?;
            let x = v.data();
            let mut y = vec![T::zero(); x.len()];
            for o in 0..outer {
                for i in 0..inner {
                    let at = |k: usize| o * len * inner + k * inner + i;
                    let max = (0..len).fold(T::neg_infinity(), |m, k| m.max(x[at(k)]));
                    let lse = max + (0..len).map(|k| (x[at(k)] - max).exp()).sum::<T>().ln();
                    for k in 0..len {
                        y[at(k)] = x[at(k)] - lse;
                    }
                }
            }
            (dims, Tensor::new(v.shape(), y)?)
        };
        self.tape.record(
            "log_softmax",
            out,
            &[self],
            Box::new(move |ctx| {
                let (outer, len, inner) = dims;
                let (y, g) = (ctx.output.data(), ctx.grad);
                let mut gx = vec![T::zero(); y.len()];
                for o in 0..outer {
                    for i in 0..inner {
                        let at = |k: usize| o * len * inner + k * inner + i;
                        let total: T = (0..len).map(|k| g[at(k)]).sum();
                        for k in 0..len {
                            gx[at(k)] = g[at(k)] - y[at(k)].exp() * total;
                        }
                    }
                }
                vec![gx]
            }),
        )
    }

    /// Slice `[start, start+len)` along the first axis.
    pub fn narrow(self, start: usize, len: usize) -> Result<Var<'t, T>> {
        let (stride, total, out) = {
            let v = self.value();
            let Some((&first, rest)) = v.shape().split_first() else {
                return Err(Error::invalid_shape("narrow", "cannot narrow a scalar"));
            };
            if start + len > first {
                return Err(Error::invalid_shape(
                    "narrow",
                    format!("range {start}..{} exceeds extent {first}", start + len),
                ));
            }
            let stride: usize = rest.iter().product();
            let mut shape = v.shape().to_vec();
            shape[0] = len;
            let data = v.data()[start * stride..(start + len) * stride].to_vec();
            (stride, v.numel(), Tensor::new(shape, data)?)
        };
        self.tape.record(
            "narrow",
            out,
            &[self],
            Box::new(move |ctx| {
                let mut g = vec![T::zero(); total];
                g[start * stride..start * stride + ctx.grad.len()].copy_from_slice(ctx.grad);
                vec![g]
            }),
        )
    }
}

/// Concatenation along the first axis.
pub fn concat<'t, T: Scalar>(parts: &[Var<'t, T>]) -> Result<Var<'t, T>> {
    let Some(first) = parts.first() else {
        return Err(Error::InvalidArgument("concat of nothing".into()));
    };
    let tape = first.tape;
    let (sizes, out) = {
        let values: Vec<_> = parts.iter().map(|p| p.value()).collect();
        let tail = values[0].shape().get(1..).unwrap_or(&[]).to_vec();
        if values[0].rank() == 0 {
            return Err(Error::invalid_shape("concat", "cannot concatenate scalars"));
        }
        let mut lead = 0;
        let mut data = Vec::new();
        let mut sizes = Vec::with_capacity(values.len());
        for v in &values {
            if v.rank() == 0 || v.shape()[1..] != tail[..] {
                return Err(Error::shape("concat", values[0].shape(), v.shape()));
            }
            lead += v.shape()[0];
            sizes.push(v.numel());
            data.extend_from_slice(v.data());
        }
        let mut shape = vec![lead];
        shape.extend(tail);
        (sizes, Tensor::new(shape, data)?)
    };
    tape.record(
        "concat",
        out,
        parts,
        Box::new(move |ctx| {
            let mut offset = 0;
            sizes
                .iter()
                .map(|&n| {
                    let g = ctx.grad[offset..offset + n].to_vec();
                    offset += n;
                    g
                })
                .collect()
        }),
    )
}

pub(crate) fn matmul_raw<T: Scalar>(a: &[T], b: &[T], m: usize, k: usize, n: usize) -> Vec<T> {
    let mut c = vec![T::zero(); m * n];
    for i in 0..m {
        let row = &mut c[i * n..(i + 1) * n];
        for p in 0..k {
            let aip = a[i * k + p];
            if aip.is_zero() {
                continue;
            }
            row.iter_mut()
                .zip(&b[p * n..(p + 1) * n])
                .for_each(|(c, &bv)| *c += aip * bv);
        }
    }
    c
}

pub(crate) fn softmax_raw<T: Scalar>(x: &[T], (outer, len, inner): (usize, usize, usize)) -> Vec<T> {
    let mut y = vec![T::zero(); x.len()];
    for o in 0..outer {
        for i in 0..inner {
            let at = |k: usize| o * len * inner + k * inner + i;
            let max = (0..len).fold(T::neg_infinity(), |m, k| m.max(x[at(k)]));
            let mut total = T::zero();
            for k in 0..len {
                let e = (x[at(k)] - max).exp();
                y[at(k)] = e;
                total += e;
            }
            for k in 0..len {
                y[at(k)] /= total;
            }
        }
    }
    y
}

/// Softmax of a plain tensor along `axis`.
pub fn softmax<T: Scalar>(x: &Tensor<T>, axis: usize) -> Result<Tensor<T>> {
    let dims = check_axis("softmax", x.shape(), axis)?;
    Tensor::new(x.shape(), softmax_raw(x.data(), dims))
}
