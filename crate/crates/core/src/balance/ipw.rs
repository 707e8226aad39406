use nalgebra::{Cholesky, DMatrix, DVector};

use super::WeightSolution;
use crate::data::ObservationTable;
use crate::error::{Error, Result};

const OLS_RIDGE: f64 = 1e-8;

/// Least squares coefficients of `y` on `[1, x]`.
fn ols(x: &DMatrix<f64>, y: &DVector<f64>) -> Result<DVector<f64>> {
    let (n, p) = x.shape();
    let design = DMatrix::from_fn(n, p + 1, |i, j| if j == 0 { 1.0 } else { x[(i, j - 1)] });
    let gram = design.tr_mul(&design);
    let rhs = design.tr_mul(y);
    if let Some(chol) = Cholesky::new(gram.clone()) {
        return Ok(chol.solve(&rhs));
    }
    let scale = gram.diagonal().amax().max(1.0);
    let mut reg = gram;
    for j in 0..=p {
        reg[(j, j)] += OLS_RIDGE * scale;
    }
    Cholesky::new(reg)
        .map(|chol| chol.solve(&rhs))
        .ok_or_else(|| Error::NumericalFailure("singular normal equations".into()))
}

/// Stabilized generalized-propensity weights under a normal residual model:
/// `w_i ∝ φ(T_i; mean(T), sd(T)) / φ(T_i; fitted_i, residual sd)`.
pub fn solve_ipw(table: &ObservationTable) -> Result<WeightSolution> {
    let n = table.n();
    let t = table.treatment();
    let x = table.features();
    let beta = ols(x, t)?;
    let fitted = x * beta.rows(1, x.ncols()) + DVector::from_element(n, beta[0]);
    let resid = t - &fitted;
    let dof = n.saturating_sub(x.ncols() + 1).max(1) as f64;
    let resid_sd = (resid.norm_squared() / dof).sqrt();
    let mean = t.mean();
    let marginal_sd = (t.map(|v| (v - mean).powi(2)).sum() / (n.max(2) - 1) as f64).sqrt();
    if !(marginal_sd > 0.0) {
        return Err(Error::Degenerate("treatment".into()));
    }
    if !(resid_sd > 1e-10 * marginal_sd && resid_sd.is_finite()) {
        return Err(Error::Degenerate("treatment residual".into()));
    }

    let log_w = DVector::from_fn(n, |i, _| {
        let num = -0.5 * ((t[i] - mean) / marginal_sd).powi(2) - marginal_sd.ln();
        let den = -0.5 * (resid[i] / resid_sd).powi(2) - resid_sd.ln();
        let base = table.base_weight().map_or(0.0, |q| q[i].ln());
        num - den + base
    });
    let max = log_w.max();
    let mut w = log_w.map(|v| (v - max).exp());
    w /= w.sum();
    if w.iter().any(|v| !v.is_finite()) {
        return Err(Error::NumericalFailure("propensity weights".into()));
    }
    Ok(WeightSolution {
        weights: w,
        multipliers: beta,
        loss_trace: Vec::new(),
        objective_trace: Vec::new(),
        converged: true,
        iterations: 0,
        dropped_rows: Vec::new(),
        residuals: None,
    })
}
