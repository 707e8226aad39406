//! The entropy balancing dual and its derivatives.
//!
//! With constraint matrix `C` (m×n), targets `M` and base weights `Q`, the dual
//! is `L(Z) = log(sum_i Q_i exp(-(C'Z)_i)) + M'Z`. Its minimizer gives the
//! primal weights `w = softmax(log Q - C'Z)`, with gradient `M - C w` and
//! Hessian `C (diag(w) - w w') C'`.

use nalgebra::{DMatrix, DVector};

use super::structure::SupportGroups;
use super::BalanceProblem;
use crate::error::{Error, Result};

/// `log Q_i - (C'Z)_i`
fn log_weights(z: &DVector<f64>, prob: &BalanceProblem) -> DVector<f64> {
    prob.log_base() - prob.constraints().tr_mul(z)
}

fn log_sum_exp(a: &DVector<f64>) -> f64 {
    let max = a.max();
    if !max.is_finite() {
        return max;
    }
    max + a.iter().map(|v| (v - max).exp()).sum::<f64>().ln()
}

pub fn dual_objective(z: &DVector<f64>, prob: &BalanceProblem) -> Result<f64> {
    check_len(z, prob)?;
    let value = log_sum_exp(&log_weights(z, prob)) + prob.targets().dot(z);
    if !value.is_finite() {
        return Err(Error::NumericalFailure("dual objective".into()));
    }
    Ok(value)
}

/// Normalized, strictly positive weights at multipliers `z`.
pub fn primal_weights(z: &DVector<f64>, prob: &BalanceProblem) -> DVector<f64> {
    let a = log_weights(z, prob);
    let max = a.max();
    let mut w = a.map(|v| (v - max).exp());
    let total = w.sum();
    w /= total;
    w
}

pub fn dual_gradient(z: &DVector<f64>, prob: &BalanceProblem) -> DVector<f64> {
    let w = primal_weights(z, prob);
    prob.targets() - prob.constraints() * w
}

/// `C (diag(w) - w w') C' + ridge I`.
pub fn dual_hessian(z: &DVector<f64>, prob: &BalanceProblem, ridge: f64) -> DMatrix<f64> {
    let w = primal_weights(z, prob);
    hessian_at_weights(&SupportGroups::new(prob.constraints()), prob.constraints(), &w, ridge)
}

pub(crate) fn hessian_at_weights(
    groups: &SupportGroups,
    c: &DMatrix<f64>,
    w: &DVector<f64>,
    ridge: f64,
) -> DMatrix<f64> {
    let cw = c * w;
    let mut h = groups.weighted_gram(w);
    h.ger(-1.0, &cw, &cw, 1.0);
    for i in 0..h.nrows() {
        h[(i, i)] += ridge;
    }
    h
}

fn check_len(z: &DVector<f64>, prob: &BalanceProblem) -> Result<()> {
    if z.len() != prob.n_constraints() {
        return Err(Error::LengthMismatch { what: "multipliers".into(), got: z.len(), expected: prob.n_constraints() });
    }
    Ok(())
}
