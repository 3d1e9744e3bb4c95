//! Differentiable operations.
//!
//! Shape-checked operations return [`Result`]; purely elementwise ones that
//! cannot fail on shape return a [`Value`] directly.

use ndarray::{Array2, Axis as NdAxis, Zip};

use super::{Tensor, Value};
use crate::error::{Error, Result};

/// Which direction a normalisation runs in.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Axis {
    /// Each row is normalised independently.
    Row,
    /// Each column is normalised independently.
    Col,
}

fn ensure_finite(op: &str, x: &Value) -> Result<()> {
    if x.data().iter().any(|v| v.is_nan()) {
        return Err(Error::Numeric(format!("{op}: NaN in input")));
    }
    Ok(())
}

pub fn matmul(a: &Value, b: &Value) -> Result<Value> {
    let (m, k) = a.shape();
    let (k2, n) = b.shape();
    if k != k2 {
        return Err(Error::shape("matmul", (m, k), (k2, n)));
    }
    let out = a.data().dot(&*b.data());
    Ok(Value::from_op(
        out,
        vec![a.clone(), b.clone()],
        Box::new(|g, parents, _| {
            let a = parents[0].data();
            let b = parents[1].data();
            vec![Some(g.dot(&b.t())), Some(a.t().dot(g))]
        }),
    ))
}

/// `x + bias` with `bias` of shape `1 × m` broadcast over the rows of `x`.
pub fn add_bias(x: &Value, bias: &Value) -> Result<Value> {
    let (n, m) = x.shape();
    if bias.shape() != (1, m) {
        return Err(Error::shape("add_bias", (n, m), bias.shape()));
    }
    let out = &*x.data() + &*bias.data();
    Ok(Value::from_op(
        out,
        vec![x.clone(), bias.clone()],
        Box::new(|g, _, _| vec![Some(g.clone()), Some(g.sum_axis(NdAxis(0)).insert_axis(NdAxis(0)))]),
    ))
}

pub fn add(a: &Value, b: &Value) -> Result<Value> {
    if a.shape() != b.shape() {
        return Err(Error::shape("add", a.shape(), b.shape()));
    }
    let out = &*a.data() + &*b.data();
    Ok(Value::from_op(
        out,
        vec![a.clone(), b.clone()],
        Box::new(|g, _, _| vec![Some(g.clone()), Some(g.clone())]),
    ))
}

/// Elementwise product.
pub fn mul(a: &Value, b: &Value) -> Result<Value> {
    if a.shape() != b.shape() {
        return Err(Error::shape("mul", a.shape(), b.shape()));
    }
    let out = &*a.data() * &*b.data();
    Ok(Value::from_op(
        out,
        vec![a.clone(), b.clone()],
        Box::new(|g, parents, _| {
            let a = parents[0].data();
            let b = parents[1].data();
            vec![Some(g * &*b), Some(g * &*a)]
        }),
    ))
}

pub fn scale(x: &Value, c: f64) -> Value {
    let out = x.data().mapv(|v| v * c);
    Value::from_op(out, vec![x.clone()], Box::new(move |g, _, _| vec![Some(g.mapv(|v| v * c))]))
}

pub fn transpose(x: &Value) -> Value {
    let out = x.data().t().to_owned();
    Value::from_op(out, vec![x.clone()], Box::new(|g, _, _| vec![Some(g.t().to_owned())]))
}

pub fn sum(x: &Value) -> Value {
    let out = Array2::from_elem((1, 1), x.data().sum());
    Value::from_op(
        out,
        vec![x.clone()],
        Box::new(|g, parents, _| vec![Some(Array2::from_elem(parents[0].shape(), g[[0, 0]]))]),
    )
}

pub fn mean(x: &Value) -> Value {
    let n = x.data().len() as f64;
    scale(&sum(x), 1.0 / n)
}

pub fn relu(x: &Value) -> Result<Value> {
    ensure_finite("relu", x)?;
    let out = x.data().mapv(|v| v.max(0.0));
    Ok(Value::from_op(
        out,
        vec![x.clone()],
        Box::new(|g, parents, _| {
            let x = parents[0].data();
            let mut dx = g.clone();
            Zip::from(&mut dx).and(&*x).for_each(|d, &v| {
                if v <= 0.0 {
                    *d = 0.0;
                }
            });
            vec![Some(dx)]
        }),
    ))
}

pub fn tanh(x: &Value) -> Value {
    let out = x.data().mapv(f64::tanh);
    Value::from_op(
        out,
        vec![x.clone()],
        Box::new(|g, _, y| vec![Some(g * &y.mapv(|t| 1.0 - t * t))]),
    )
}

fn sigmoid_scalar(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

pub fn sigmoid(x: &Value) -> Value {
    let out = x.data().mapv(sigmoid_scalar);
    Value::from_op(
        out,
        vec![x.clone()],
        Box::new(|g, _, y| vec![Some(g * &y.mapv(|s| s * (1.0 - s)))]),
    )
}

/// `ln σ(x)`, evaluated without overflow.
pub fn log_sigmoid(x: &Value) -> Value {
    let out = x.data().mapv(|z| z.min(0.0) - (-z.abs()).exp().ln_1p());
    Value::from_op(
        out,
        vec![x.clone()],
        Box::new(|g, parents, _| {
            let x = parents[0].data();
            vec![Some(g * &x.mapv(|z| sigmoid_scalar(-z)))]
        }),
    )
}

/// Elementwise entropy of Bernoulli(p) in nats, with `0 ln 0 = 0`.
pub fn bernoulli_entropy(p: &Value) -> Value {
    fn h(p: f64) -> f64 {
        let term = |q: f64| if q > 0.0 { -q * q.ln() } else { 0.0 };
        term(p) + term(1.0 - p)
    }
    let out = p.data().mapv(h);
    Value::from_op(
        out,
        vec![p.clone()],
        Box::new(|g, parents, _| {
            let p = parents[0].data();
            // dH/dp = ln((1-p)/p); taken as 0 at the saturated endpoints.
            let d = p.mapv(|q| if q > 0.0 && q < 1.0 { ((1.0 - q) / q).ln() } else { 0.0 });
            vec![Some(g * &d)]
        }),
    )
}

fn softmax_rows(x: &Tensor) -> Tensor {
    let mut out = x.clone();
    for mut row in out.rows_mut() {
        let m = row.fold(f64::NEG_INFINITY, |a, &b| a.max(b));
        row.mapv_inplace(|v| (v - m).exp());
        let s = row.sum();
        row.mapv_inplace(|v| v / s);
    }
    out
}

fn log_softmax_rows(x: &Tensor) -> Tensor {
    let mut out = x.clone();
    for mut row in out.rows_mut() {
        let (arg, m) = row
            .iter()
            .enumerate()
            .fold((0, f64::NEG_INFINITY), |(ai, am), (i, &v)| if v > am { (i, v) } else { (ai, am) });
        // The max term contributes exactly 1; ln_1p of the rest keeps tiny
        // losses accurate.
        let rest: f64 = row
            .iter()
            .enumerate()
            .filter(|&(i, _)| i != arg)
            .map(|(_, v)| (v - m).exp())
            .sum();
        let log_norm = rest.ln_1p();
        row.mapv_inplace(|v| (v - m) - log_norm);
    }
    out
}

pub fn softmax(x: &Value, axis: Axis) -> Result<Value> {
    ensure_finite("softmax", x)?;
    let out = match axis {
        Axis::Row => softmax_rows(&x.data()),
        Axis::Col => softmax_rows(&x.data().t().to_owned()).t().to_owned(),
    };
    Ok(Value::from_op(
        out,
        vec![x.clone()],
        Box::new(move |g, _, y| {
            // dx = y * (g - sum(g * y)) along the normalised direction.
            let dir = match axis {
                Axis::Row => NdAxis(1),
                Axis::Col => NdAxis(0),
            };
            let dot = (g * y).sum_axis(dir).insert_axis(dir);
            vec![Some(y * &(g - &dot))]
        }),
    ))
}

pub fn log_softmax(x: &Value, axis: Axis) -> Result<Value> {
    ensure_finite("log_softmax", x)?;
    let out = match axis {
        Axis::Row => log_softmax_rows(&x.data()),
        Axis::Col => log_softmax_rows(&x.data().t().to_owned()).t().to_owned(),
    };
    Ok(Value::from_op(
        out,
        vec![x.clone()],
        Box::new(move |g, _, y| {
            let dir = match axis {
                Axis::Row => NdAxis(1),
                Axis::Col => NdAxis(0),
            };
            let total = g.sum_axis(dir).insert_axis(dir);
            vec![Some(g - &(&y.mapv(f64::exp) * &total))]
        }),
    ))
}

/// Mean over rows of `-log_softmax(logits)[row, target]`.
pub fn cross_entropy(logits: &Value, targets: &[usize]) -> Result<Value> {
    let (n, c) = logits.shape();
    if targets.len() != n {
        return Err(Error::shape("cross_entropy targets", (n, c), (targets.len(), 1)));
    }
    if n == 0 {
        return Err(Error::EmptyBag("cross_entropy over zero rows".into()));
    }
    for (row, &t) in targets.iter().enumerate() {
        if t >= c {
            return Err(Error::Label {
                row,
                target: t as i64,
                classes: c,
            });
        }
    }
    ensure_finite("cross_entropy", logits)?;
    let logp = log_softmax_rows(&logits.data());
    let loss = -targets.iter().enumerate().map(|(r, &t)| logp[[r, t]]).sum::<f64>() / n as f64;
    let targets = targets.to_vec();
    Ok(Value::from_op(
        Array2::from_elem((1, 1), loss),
        vec![logits.clone()],
        Box::new(move |g, _, _| {
            let mut d = logp.mapv(f64::exp);
            for (r, &t) in targets.iter().enumerate() {
                d[[r, t]] -= 1.0;
            }
            let s = g[[0, 0]] / n as f64;
            d.mapv_inplace(|v| v * s);
            vec![Some(d)]
        }),
    ))
}

fn check_mask(op: &'static str, x: &Value, mask: &[bool]) -> Result<Vec<usize>> {
    let (n, d) = x.shape();
    if mask.len() != n {
        return Err(Error::shape(op, (n, d), (mask.len(), 1)));
    }
    let rows: Vec<usize> = (0..n).filter(|&i| mask[i]).collect();
    if rows.is_empty() {
        return Err(Error::EmptyBag(format!("{op}: mask has no active rows")));
    }
    Ok(rows)
}

/// Mean over the rows whose mask entry is set, as a `1 × d` row.
pub fn masked_mean(x: &Value, mask: &[bool]) -> Result<Value> {
    let rows = check_mask("masked_mean", x, mask)?;
    let (n, d) = x.shape();
    let k = rows.len() as f64;
    let mut acc = Array2::zeros((1, d));
    {
        let data = x.data();
        for &r in &rows {
            acc.row_mut(0).zip_mut_with(&data.row(r), |a, &b| *a += b);
        }
    }
    acc.mapv_inplace(|v| v / k);
    Ok(Value::from_op(
        acc,
        vec![x.clone()],
        Box::new(move |g, _, _| {
            let mut dx = Array2::zeros((n, d));
            for &r in &rows {
                dx.row_mut(r).zip_mut_with(&g.row(0), |a, &b| *a = b / k);
            }
            vec![Some(dx)]
        }),
    ))
}

/// Per-column maximum over unmasked rows. Gradient flows to the first
/// maximising row of each column.
pub fn masked_max(x: &Value, mask: &[bool]) -> Result<Value> {
    let rows = check_mask("masked_max", x, mask)?;
    let (n, d) = x.shape();
    let mut out = Array2::zeros((1, d));
    let mut argmax = vec![0usize; d];
    {
        let data = x.data();
        for j in 0..d {
            let mut best = rows[0];
            for &r in &rows[1..] {
                if data[[r, j]] > data[[best, j]] {
                    best = r;
                }
            }
            argmax[j] = best;
            out[[0, j]] = data[[best, j]];
        }
    }
    Ok(Value::from_op(
        out,
        vec![x.clone()],
        Box::new(move |g, _, _| {
            let mut dx = Array2::zeros((n, d));
            for (j, &r) in argmax.iter().enumerate() {
                dx[[r, j]] = g[[0, j]];
            }
            vec![Some(dx)]
        }),
    ))
}

/// Gradient reversal: identity forward, `-lambda * upstream` backward.
pub fn grl(x: &Value, lambda: f64) -> Result<Value> {
    if !lambda.is_finite() || lambda < 0.0 {
        return Err(Error::Parameter(format!("GRL lambda must be finite and >= 0, got {lambda}")));
    }
    let out = x.data().clone();
    Ok(Value::from_op(
        out,
        vec![x.clone()],
        Box::new(move |g, _, _| vec![Some(g.mapv(|v| -lambda * v))]),
    ))
}

/// Gathers the given rows (in the given order).
pub fn select_rows(x: &Value, indices: &[usize]) -> Result<Value> {
    let (n, d) = x.shape();
    if let Some(&bad) = indices.iter().find(|&&i| i >= n) {
        return Err(Error::shape("select_rows", (n, d), (bad, d)));
    }
    let out = x.data().select(NdAxis(0), indices);
    let indices = indices.to_vec();
    Ok(Value::from_op(
        out,
        vec![x.clone()],
        Box::new(move |g, _, _| {
            let mut dx = Array2::zeros((n, d));
            for (k, &i) in indices.iter().enumerate() {
                dx.row_mut(i).zip_mut_with(&g.row(k), |a, &b| *a += b);
            }
            vec![Some(dx)]
        }),
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autodiff::backward;
    use ndarray::array;

    #[test]
    fn matmul_identity_and_orthogonal() {
        let i = Value::constant(array![[1.0, 0.0], [0.0, 1.0]]);
        let m = Value::constant(array![[1.0, 2.0], [3.0, 4.0]]);
        assert_eq!(*matmul(&i, &m).unwrap().data(), array![[1.0, 2.0], [3.0, 4.0]]);
        let a = Value::constant(array![[1.0, 0.0]]);
        let b = Value::constant(array![[0.0], [1.0]]);
        assert_eq!(*matmul(&a, &b).unwrap().data(), array![[0.0]]);
    }

    #[test]
    fn matmul_shape_error_names_both_shapes() {
        let a = Value::constant(Array2::zeros((2, 3)));
        let b = Value::constant(Array2::zeros((2, 3)));
        let err = matmul(&a, &b).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("(2, 3)"), "{msg}");
        assert!(matches!(err, Error::Shape { lhs: (2, 3), rhs: (2, 3), .. }));
    }

    #[test]
    fn grl_is_identity_forward() {
        let x = Value::variable(array![[1.5, -2.0]]);
        let y = grl(&x, 0.7).unwrap();
        assert_eq!(*y.data(), *x.data());
    }

    #[test]
    fn grl_flips_and_scales() {
        let x = Value::variable(array![[1.5, -2.0]]);
        let y = grl(&x, 0.5).unwrap();
        // upstream gradient [2, -4] via a weighted sum.
        let w = Value::constant(array![[2.0], [-4.0]]);
        backward(&matmul(&y, &w).unwrap()).unwrap();
        assert_eq!(*x.grad(), array![[-1.0, 2.0]]);
    }

    #[test]
    fn grl_zero_lambda_blocks_gradient() {
        let x = Value::variable(array![[1.5, -2.0]]);
        let y = grl(&x, 0.0).unwrap();
        backward(&sum(&y)).unwrap();
        assert!(x.grad().iter().all(|&g| g == 0.0));
    }

    #[test]
    fn grl_negative_lambda_rejected() {
        let x = Value::variable(array![[1.0]]);
        assert!(matches!(grl(&x, -0.1), Err(Error::Parameter(_))));
    }

    #[test]
    fn relu_and_softmax_basics() {
        let x = Value::constant(array![[-1.0, 0.0, 2.0]]);
        assert_eq!(*relu(&x).unwrap().data(), array![[0.0, 0.0, 2.0]]);
        let s = softmax(&Value::constant(array![[0.0, 0.0]]), Axis::Row).unwrap();
        assert_eq!(*s.data(), array![[0.5, 0.5]]);
        let s = softmax(&Value::constant(array![[1000.0, 1000.0]]), Axis::Row).unwrap();
        assert_eq!(*s.data(), array![[0.5, 0.5]]);
        let ls = log_softmax(&Value::constant(array![[1000.0, 1000.0]]), Axis::Row).unwrap();
        assert!((ls.data()[[0, 0]] + std::f64::consts::LN_2).abs() < 1e-15);
    }

    #[test]
    fn softmax_along_columns() {
        let s = softmax(&Value::constant(array![[0.0, 1.0], [0.0, 1.0]]), Axis::Col).unwrap();
        assert_eq!(*s.data(), array![[0.5, 0.5], [0.5, 0.5]]);
    }

    #[test]
    fn nan_input_is_numeric_error() {
        let x = Value::constant(array![[f64::NAN, 1.0]]);
        assert!(matches!(relu(&x), Err(Error::Numeric(_))));
        assert!(matches!(softmax(&x, Axis::Row), Err(Error::Numeric(_))));
        assert!(matches!(log_softmax(&x, Axis::Row), Err(Error::Numeric(_))));
    }

    #[test]
    fn cross_entropy_values() {
        let l = cross_entropy(&Value::constant(array![[0.0, 0.0]]), &[0]).unwrap();
        assert!((l.item() - std::f64::consts::LN_2).abs() < 1e-15);
        let l = cross_entropy(&Value::constant(array![[10.0, -10.0]]), &[0]).unwrap();
        let expected = (-20.0f64).exp().ln_1p();
        assert!((l.item() - expected).abs() / expected < 1e-9, "{}", l.item());
        assert!((l.item() - 2.061e-9).abs() < 1e-12);
    }

    #[test]
    fn cross_entropy_label_error_names_row() {
        let err = cross_entropy(&Value::constant(array![[0.0, 0.0], [1.0, 2.0]]), &[1, 2]).unwrap_err();
        assert!(matches!(err, Error::Label { row: 1, target: 2, classes: 2 }));
    }

    #[test]
    fn masked_reductions() {
        let x = Value::constant(array![[1.0, 3.0], [3.0, 5.0]]);
        assert_eq!(*masked_mean(&x, &[true, true]).unwrap().data(), array![[2.0, 4.0]]);
        assert_eq!(*masked_max(&x, &[true, true]).unwrap().data(), array![[3.0, 5.0]]);
        let x = Value::constant(array![[1.0, 3.0], [9.0, 9.0]]);
        assert_eq!(*masked_mean(&x, &[true, false]).unwrap().data(), array![[1.0, 3.0]]);
        assert_eq!(*masked_max(&x, &[true, false]).unwrap().data(), array![[1.0, 3.0]]);
        assert!(matches!(masked_mean(&x, &[false, false]), Err(Error::EmptyBag(_))));
        assert!(matches!(masked_max(&x, &[false, false]), Err(Error::EmptyBag(_))));
    }

    #[test]
    fn masked_max_ties_route_to_first_row() {
        let x = Value::variable(array![[2.0, 1.0], [2.0, 4.0], [0.0, 4.0]]);
        let y = masked_max(&x, &[true, true, true]).unwrap();
        backward(&sum(&y)).unwrap();
        assert_eq!(*x.grad(), array![[1.0, 0.0], [0.0, 1.0], [0.0, 0.0]]);
    }

    #[test]
    fn bernoulli_entropy_endpoints() {
        let p = Value::variable(array![[0.0, 0.5, 1.0]]);
        let h = bernoulli_entropy(&p);
        assert_eq!(h.data()[[0, 0]], 0.0);
        assert!((h.data()[[0, 1]] - std::f64::consts::LN_2).abs() < 1e-15);
        assert_eq!(h.data()[[0, 2]], 0.0);
        backward(&sum(&h)).unwrap();
        assert!(p.grad().iter().all(|g| g.is_finite()));
    }

    #[test]
    fn log_sigmoid_is_stable() {
        let x = Value::constant(array![[-800.0, 0.0, 800.0]]);
        let y = log_sigmoid(&x);
        assert!((y.data()[[0, 0]] + 800.0).abs() < 1e-12);
        assert!((y.data()[[0, 1]] + std::f64::consts::LN_2).abs() < 1e-15);
        assert_eq!(y.data()[[0, 2]], 0.0);
    }
}
