use log::{debug, warn};
use nalgebra::{Cholesky, DMatrix, DVector};

use super::dual::{dual_objective, hessian_at_weights, primal_weights};
use super::structure::SupportGroups;
use super::{BalanceProblem, SolverConfig, WeightSolution};
use crate::error::{Error, Result};

const MAX_RIDGE: f64 = 1e-2;
const ARMIJO: f64 = 1e-4;
const MAX_HALVINGS: usize = 40;

/// Max-norm constraint violation `||C w - M||_inf`.
pub fn constraint_violation(w: &DVector<f64>, prob: &BalanceProblem) -> f64 {
    (prob.constraints() * w - prob.targets()).amax()
}

/// Solves `H x = g`, escalating the ridge tenfold up to 1e-2 when the factorization fails.
fn ridge_solve(h: &DMatrix<f64>, g: &DVector<f64>, ridge: f64) -> Result<DVector<f64>> {
    let mut lambda = ridge;
    loop {
        let mut reg = h.clone();
        for i in 0..reg.nrows() {
            reg[(i, i)] += lambda;
        }
        if let Some(chol) = Cholesky::new(reg) {
            let x = chol.solve(g);
            if x.iter().all(|v| v.is_finite()) {
                return Ok(x);
            }
        }
        if lambda >= MAX_RIDGE {
            return Err(Error::HessianSolve { ridge: lambda });
        }
        debug!("hessian factorization failed at ridge {lambda:e}, escalating");
        lambda = (lambda * 10.0).clamp(f64::MIN_POSITIVE, MAX_RIDGE);
    }
}

/// Newton iteration on the dual starting from `Z = 0`.
///
/// `loss_trace[0]` is the violation at the start; entry `i` is the violation
/// after iteration `i`. Iteration stops once the violation drops below
/// `cfg.tolerance` or after `cfg.max_iterations` steps.
pub fn solve_newton(prob: &BalanceProblem, cfg: &SolverConfig) -> Result<WeightSolution> {
    cfg.validate()?;
    let m = prob.n_constraints();
    let mut z = DVector::zeros(m);
    let mut w = primal_weights(&z, prob);
    let mut objective = dual_objective(&z, prob)?;
    let mut loss = constraint_violation(&w, prob);
    let mut loss_trace = vec![loss];
    let mut objective_trace = vec![objective];
    let mut iterations = 0;
    let groups = SupportGroups::new(prob.constraints());

    while !(loss < cfg.tolerance) && iterations < cfg.max_iterations {
        let grad = prob.targets() - prob.constraints() * &w;
        let hess = hessian_at_weights(&groups, prob.constraints(), &w, 0.0);
        let direction = ridge_solve(&hess, &grad, cfg.hessian_ridge)?;

        let mut step = cfg.learning_rate;
        let mut z_next = &z - step * &direction;
        let mut next_objective = dual_objective(&z_next, prob);
        if cfg.backtracking {
            let slope = grad.dot(&direction);
            let mut halvings = 0;
            while halvings < MAX_HALVINGS
                && next_objective.as_ref().map_or(true, |&f| f > objective - ARMIJO * step * slope)
            {
                step *= 0.5;
                z_next = &z - step * &direction;
                next_objective = dual_objective(&z_next, prob);
                halvings += 1;
            }
        }
        objective = next_objective?;
        z = z_next;
        w = primal_weights(&z, prob);
        loss = constraint_violation(&w, prob);
        iterations += 1;
        loss_trace.push(loss);
        objective_trace.push(objective);
        debug!("newton iteration {iterations}: loss {loss:.3e}, objective {objective:.6e}, step {step}");
        if !loss.is_finite() || w.iter().any(|v| !v.is_finite()) {
            return Err(Error::NumericalFailure(format!("weights at iteration {iterations}")));
        }
    }
    let converged = loss < cfg.tolerance;
    if !converged {
        warn!("newton stopped after {iterations} iterations with violation {loss:.3e}");
    }
    Ok(WeightSolution {
        weights: w,
        multipliers: z,
        loss_trace,
        objective_trace,
        converged,
        iterations,
        dropped_rows: Vec::new(),
        residuals: None,
    })
}

/// Indices of rows that are (numerically) linear combinations of earlier rows.
///
/// Rows are visited in order and orthogonalized against the rows kept so far
/// (Gram-Schmidt, two passes); a row whose remainder has norm at most
/// `rel_tol * ||C||_F` is dropped. Earlier rows are always preferred, so the
/// weight-sum and treatment rows survive. The sweep runs on a compressed
/// factor with the same Gram matrix as `C`, so distances are unchanged.
pub fn dependent_rows(c: &DMatrix<f64>, rel_tol: f64) -> Vec<usize> {
    let a = SupportGroups::new(c).compressed();
    let (height, m) = a.shape();
    let tol = rel_tol * c.norm();
    let mut basis = DMatrix::<f64>::zeros(height, m.min(height));
    let mut kept = 0;
    let mut dropped = Vec::new();
    for r in 0..m {
        let mut v = a.column(r).into_owned();
        for _ in 0..2 {
            if kept > 0 {
                let q = basis.columns(0, kept);
                let coeffs = q.tr_mul(&v);
                v -= q * coeffs;
            }
        }
        let norm = v.norm();
        if norm > tol && norm > 0.0 && kept < height {
            basis.set_column(kept, &(v / norm));
            kept += 1;
        } else {
            dropped.push(r);
        }
    }
    dropped
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::balance::dual::{dual_gradient, dual_objective};

    #[test]
    fn weight_sum_only_converges_immediately() {
        let n = 9;
        let prob = BalanceProblem::from_parts(
            DMatrix::from_element(1, n, 1.0),
            DVector::from_element(1, 1.0),
            DVector::from_element(n, 1.0),
        )
        .unwrap();
        let sol = solve_newton(&prob, &SolverConfig::default()).unwrap();
        assert!(sol.converged);
        assert!(sol.iterations <= 1);
        assert!(sol.weights.iter().all(|&w| (w - 1.0 / n as f64).abs() < 1e-15));
    }

    #[test]
    fn converges_on_feasible_random_problem() {
        use rand::{Rng, SeedableRng};
        use rand_chacha::ChaCha8Rng;
        use rand_distr::StandardNormal;
        for seed in 0..10u64 {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let (n, m) = (20, 5);
            let mut c = DMatrix::from_fn(m, n, |_, _| rng.sample::<f64, _>(StandardNormal));
            c.row_mut(0).fill(1.0);
            // targets from a strictly positive reference weighting
            let w0 = DVector::from_fn(n, |_, _| 0.6 + 0.8 * rng.random::<f64>());
            let w0 = &w0 / w0.sum();
            let targets = &c * &w0;
            let prob = BalanceProblem::from_parts(c, targets, DVector::from_element(n, 1.0)).unwrap();
            let cfg = SolverConfig { tolerance: 1e-6, max_iterations: 50, ..SolverConfig::default() };
            let sol = solve_newton(&prob, &cfg).unwrap();
            assert!(sol.converged, "seed {seed}: {:?}", sol.loss_trace);
            assert!(constraint_violation(&sol.weights, &prob) < 1e-6);
            for pair in sol.loss_trace[1..].windows(2) {
                assert!(pair[1] <= pair[0], "seed {seed}: {:?}", sol.loss_trace);
            }
            for pair in sol.objective_trace[1..].windows(2) {
                assert!(pair[1] <= pair[0] + 1e-12, "seed {seed}: {:?}", sol.objective_trace);
            }
            let at_opt = dual_objective(&sol.multipliers, &prob).unwrap();
            assert!(at_opt <= dual_objective(&DVector::zeros(m), &prob).unwrap());
            assert!(dual_gradient(&sol.multipliers, &prob).amax() < 1e-6);
        }
    }

    #[test]
    fn infeasible_problem_reports_no_convergence() {
        // all constraint values positive but target zero: no positive weighting exists
        let prob = BalanceProblem::from_parts(
            DMatrix::from_row_slice(1, 3, &[1.0, 2.0, 3.0]),
            DVector::zeros(1),
            DVector::from_element(3, 1.0),
        )
        .unwrap();
        let cfg = SolverConfig { max_iterations: 30, ..SolverConfig::default() };
        let sol = solve_newton(&prob, &cfg).unwrap();
        assert!(!sol.converged);
        assert!(sol.weights.iter().all(|&w| w >= 0.0));
        assert!((sol.weights.sum() - 1.0).abs() < 1e-10);
    }

    #[test]
    fn backtracking_keeps_descent() {
        let prob = BalanceProblem::from_parts(
            DMatrix::from_row_slice(1, 4, &[-1.0, 0.1, 0.2, 5.0]),
            DVector::from_element(1, 3.0),
            DVector::from_element(4, 1.0),
        )
        .unwrap();
        let cfg = SolverConfig { backtracking: true, tolerance: 1e-9, ..SolverConfig::default() };
        let sol = solve_newton(&prob, &cfg).unwrap();
        assert!(sol.converged);
        for pair in sol.objective_trace.windows(2) {
            assert!(pair[1] <= pair[0] + 1e-12);
        }
    }

    #[test]
    fn duplicated_and_zero_rows_are_dropped() {
        let c = DMatrix::from_row_slice(
            5,
            4,
            &[
                1.0, 1.0, 1.0, 1.0, //
                1.0, 2.0, 3.0, 4.0, //
                2.0, 4.0, 6.0, 8.0, //
                0.0, 0.0, 0.0, 0.0, //
                0.0, 1.0, 2.0, 3.0, // row1 - row0
            ],
        );
        assert_eq!(dependent_rows(&c, 1e-10), vec![2, 3, 4]);
    }

    #[test]
    fn ridge_escalation_handles_singular_hessian() {
        let h = DMatrix::from_row_slice(2, 2, &[1.0, 1.0, 1.0, 1.0]);
        let g = DVector::from_vec(vec![1.0, 1.0]);
        let x = ridge_solve(&h, &g, 0.0).unwrap();
        assert!(x.iter().all(|v| v.is_finite()));
        let bad = DMatrix::from_row_slice(2, 2, &[-1.0, 0.0, 0.0, -1.0]);
        assert!(matches!(ridge_solve(&bad, &g, 1e-8), Err(Error::HessianSolve { .. })));
    }
}
