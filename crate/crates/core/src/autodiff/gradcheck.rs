//! Central finite-difference gradient checking.
//!
//! The numeric side only ever evaluates the forward closure, so it stays
//! independent of every backward rule it is used to verify.

use super::{backward, Tensor, Value};
use crate::error::Result;

/// Denominator floor for relative errors; keeps vanishing gradients from
/// turning round-off into a failure.
pub const REL_ERR_FLOOR: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckReport {
    pub max_rel_err: f64,
    pub checked: usize,
    /// (input index, row, col, analytic, numeric) of the worst element.
    pub worst: Option<(usize, usize, usize, f64, f64)>,
}

impl GradCheckReport {
    pub fn passes(&self, tol: f64) -> bool {
        self.max_rel_err < tol
    }
}

pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(REL_ERR_FLOOR)
}

/// Numeric gradient of the scalar produced by `f` with respect to `input`.
pub fn numeric_gradient<F>(input: &Value, f: &F, eps: f64) -> Result<Tensor>
where
    F: Fn() -> Result<Value>,
{
    let base = input.data().clone();
    let mut out = Tensor::zeros(base.raw_dim());
    for ((r, c), slot) in out.indexed_iter_mut() {
        let mut plus = base.clone();
        plus[[r, c]] += eps;
        input.set_data(plus)?;
        let fp = f()?.item();
        let mut minus = base.clone();
        minus[[r, c]] -= eps;
        input.set_data(minus)?;
        let fm = f()?.item();
        *slot = (fp - fm) / (2.0 * eps);
    }
    input.set_data(base)?;
    Ok(out)
}

/// Compares the analytic gradient of `f` w.r.t. every input against central
/// differences with step `eps`. Input gradients are zeroed first and left
/// holding the analytic values.
pub fn check_gradients<F>(inputs: &[Value], f: F, eps: f64) -> Result<GradCheckReport>
where
    F: Fn() -> Result<Value>,
{
    for x in inputs {
        x.zero_grad();
    }
    let root = f()?;
    backward(&root)?;
    let analytic: Vec<Tensor> = inputs.iter().map(|x| x.grad().clone()).collect();

    let mut report = GradCheckReport {
        max_rel_err: 0.0,
        checked: 0,
        worst: None,
    };
    for (i, x) in inputs.iter().enumerate() {
        let numeric = numeric_gradient(x, &f, eps)?;
        for ((r, c), &n) in numeric.indexed_iter() {
            let a = analytic[i][[r, c]];
            let err = relative_error(a, n);
            report.checked += 1;
            if err > report.max_rel_err || report.worst.is_none() {
                report.max_rel_err = report.max_rel_err.max(err);
                report.worst = Some((i, r, c, a, n));
            }
        }
    }
    Ok(report)
}
