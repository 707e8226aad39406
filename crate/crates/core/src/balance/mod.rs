//! Balancing weights for a continuous treatment.
//!
//! Entropy balancing finds the weights closest (in KL divergence) to the base
//! weights that decorrelate the reduced features from the treatment. The
//! global variant balances over all rows at once; the stratified variant adds
//! one block of constraints per temporal-spatial stratum. Both are solved by
//! Newton's method on the dual; see [`dual`] and [`solve_newton`].

pub mod dual;
mod ipw;
mod newton;
mod structure;

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use log::warn;
use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::data::{ObservationTable, StratumIndex};
use crate::error::{Error, Result};
use crate::preprocess::{
    build_block_design, normalized_base_weights, pca_fit, pca_transform, standardize, treatment_moments, BlockDesign,
    ConstraintKind, ConstraintRow, DesignOptions, DEFAULT_PCA_THRESHOLD,
};

pub use dual::{dual_gradient, dual_hessian, dual_objective, primal_weights};
pub use ipw::solve_ipw;
pub use newton::{constraint_violation, dependent_rows, solve_newton};

pub const DEFAULT_RANK_TOLERANCE: f64 = 1e-10;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Method {
    Ipw,
    Ebct,
    Tsebct,
}

impl Method {
    pub const ALL: [Method; 3] = [Method::Ipw, Method::Ebct, Method::Tsebct];

    pub fn as_str(&self) -> &'static str {
        match self {
            Method::Ipw => "ipw",
            Method::Ebct => "ebct",
            Method::Tsebct => "tsebct",
        }
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "ipw" => Ok(Method::Ipw),
            "ebct" => Ok(Method::Ebct),
            "tsebct" | "ts-ebct" => Ok(Method::Tsebct),
            other => Err(Error::InvalidConfig(format!("unknown method `{other}`"))),
        }
    }
}

/// Constraint system `C w = M` with base weights `Q` (positive, summing to one).
#[derive(Debug, Clone)]
pub struct BalanceProblem {
    design: BlockDesign,
    method: Method,
    log_base: DVector<f64>,
}

impl BalanceProblem {
    pub fn new(design: BlockDesign, method: Method) -> Result<Self> {
        let (m, n) = design.matrix.shape();
        if n == 0 {
            return Err(Error::EmptyDataset);
        }
        if design.targets.len() != m {
            return Err(Error::LengthMismatch { what: "targets".into(), got: design.targets.len(), expected: m });
        }
        if !design.row_labels.is_empty() && design.row_labels.len() != m {
            return Err(Error::LengthMismatch { what: "row labels".into(), got: design.row_labels.len(), expected: m });
        }
        if design.matrix.iter().chain(design.targets.iter()).any(|v| !v.is_finite()) {
            return Err(Error::NumericalFailure("non-finite constraint entry".into()));
        }
        let q = normalized_base_weights(n, Some(&design.base_weights))?;
        let log_base = q.map(f64::ln);
        Ok(Self { design: BlockDesign { base_weights: q, ..design }, method, log_base })
    }

    /// Unlabelled problem from raw parts; `q` is normalized.
    pub fn from_parts(c: DMatrix<f64>, targets: DVector<f64>, q: DVector<f64>) -> Result<Self> {
        Self::new(BlockDesign { matrix: c, targets, base_weights: q, row_labels: Vec::new() }, Method::Ebct)
    }

    pub fn constraints(&self) -> &DMatrix<f64> {
        &self.design.matrix
    }

    pub fn targets(&self) -> &DVector<f64> {
        &self.design.targets
    }

    pub fn base_weights(&self) -> &DVector<f64> {
        &self.design.base_weights
    }

    pub(crate) fn log_base(&self) -> &DVector<f64> {
        &self.log_base
    }

    pub fn row_labels(&self) -> &[ConstraintRow] {
        &self.design.row_labels
    }

    pub fn design(&self) -> &BlockDesign {
        &self.design
    }

    pub fn method(&self) -> Method {
        self.method
    }

    pub fn n_constraints(&self) -> usize {
        self.design.matrix.nrows()
    }

    pub fn n_obs(&self) -> usize {
        self.design.matrix.ncols()
    }

    /// Copy without the listed rows (sorted, in range).
    pub fn without_rows(&self, drop: &[usize]) -> Self {
        if drop.is_empty() {
            return self.clone();
        }
        let keep: Vec<usize> = (0..self.n_constraints()).filter(|r| drop.binary_search(r).is_err()).collect();
        let labels = if self.design.row_labels.is_empty() {
            Vec::new()
        } else {
            keep.iter().map(|&r| self.design.row_labels[r]).collect()
        };
        Self {
            design: BlockDesign {
                matrix: self.design.matrix.select_rows(&keep),
                targets: self.design.targets.select_rows(&keep),
                base_weights: self.design.base_weights.clone(),
                row_labels: labels,
            },
            method: self.method,
            log_base: self.log_base.clone(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SolverConfig {
    pub learning_rate: f64,
    pub tolerance: f64,
    pub max_iterations: usize,
    pub hessian_ridge: f64,
    /// Armijo halving of the step; off reproduces the plain Newton update.
    pub backtracking: bool,
}

impl Default for SolverConfig {
    fn default() -> Self {
        Self { learning_rate: 1.0, tolerance: 0.01, max_iterations: 200, hessian_ridge: 1e-8, backtracking: false }
    }
}

impl SolverConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::InvalidConfig(format!("learning rate must be positive, got {}", self.learning_rate)));
        }
        if !(self.tolerance > 0.0) {
            return Err(Error::InvalidConfig(format!("tolerance must be positive, got {}", self.tolerance)));
        }
        if !(self.hessian_ridge >= 0.0 && self.hessian_ridge.is_finite()) {
            return Err(Error::InvalidConfig(format!(
                "hessian ridge must be non-negative, got {}",
                self.hessian_ridge
            )));
        }
        Ok(())
    }
}

/// Everything needed to go from a table to a balancing problem.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct BalanceConfig {
    /// Cumulative explained-variance ratio for the feature reduction.
    pub pca_threshold: f64,
    pub treatment_degree: usize,
    pub design: DesignOptions,
    pub solver: SolverConfig,
    /// Rows whose orthogonal remainder is below this fraction of `||C||_F` are dropped.
    pub rank_tolerance: f64,
}

impl Default for BalanceConfig {
    fn default() -> Self {
        Self {
            pca_threshold: DEFAULT_PCA_THRESHOLD,
            treatment_degree: 1,
            design: DesignOptions::default(),
            solver: SolverConfig::default(),
            rank_tolerance: DEFAULT_RANK_TOLERANCE,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StratumResidual {
    pub stratum: String,
    pub max_abs: f64,
}

/// Post-solve constraint residuals `|C w - M|` on the full (unfiltered) design.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResidualReport {
    pub max_abs: f64,
    pub by_kind: BTreeMap<String, f64>,
    pub by_stratum: Vec<StratumResidual>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct WeightSolution {
    pub weights: DVector<f64>,
    /// Dual multipliers of the rows actually solved (after rank filtering).
    pub multipliers: DVector<f64>,
    /// Constraint violation at the start and after each iteration.
    pub loss_trace: Vec<f64>,
    /// Dual objective at the same points as `loss_trace`.
    pub objective_trace: Vec<f64>,
    pub converged: bool,
    pub iterations: usize,
    /// Design rows removed as linearly dependent.
    pub dropped_rows: Vec<usize>,
    pub residuals: Option<ResidualReport>,
}

/// PCA scores of the features and standardized treatment moments.
pub fn reduce_inputs(table: &ObservationTable, cfg: &BalanceConfig) -> Result<(DMatrix<f64>, DMatrix<f64>)> {
    let model = pca_fit(table.features(), cfg.pca_threshold)?;
    let xk = pca_transform(&model, table.features())?;
    let tm = treatment_moments(table.treatment(), cfg.treatment_degree)?;
    Ok((xk, tm))
}

/// Design over all rows: weight sum, treatment moments, globally standardized
/// features and their interactions with the treatment.
pub fn global_design(
    xk: &DMatrix<f64>,
    tm: &DMatrix<f64>,
    base_weights: Option<&DVector<f64>>,
    opts: DesignOptions,
) -> Result<BlockDesign> {
    let (n, k) = xk.shape();
    let d = tm.ncols();
    if tm.nrows() != n {
        return Err(Error::LengthMismatch { what: "treatment moments".into(), got: tm.nrows(), expected: n });
    }
    if d == 0 {
        return Err(Error::InvalidConfig("at least one treatment moment is required".into()));
    }
    let inter = if opts.interact_all_moments { d } else { 1 };
    let mut rows: Vec<DVector<f64>> = Vec::with_capacity(1 + d + k * (1 + inter));
    let mut labels = Vec::with_capacity(rows.capacity());
    let label = |kind, feature, moment| ConstraintRow { kind, stratum: None, feature, moment };

    rows.push(DVector::from_element(n, 1.0));
    labels.push(label(ConstraintKind::WeightSum, None, None));
    for j in 0..d {
        rows.push(tm.column(j).into_owned());
        labels.push(label(ConstraintKind::TreatmentMoment, None, Some(j)));
    }
    let z: Vec<DVector<f64>> =
        (0..k).map(|f| standardize(xk.column(f), &format!("component {}", f + 1))).collect::<Result<_>>()?;
    for (f, col) in z.iter().enumerate() {
        rows.push(col.clone());
        labels.push(label(ConstraintKind::StratumFeature, Some(f), None));
    }
    for mom in 0..inter {
        for (f, col) in z.iter().enumerate() {
            rows.push(col.component_mul(&tm.column(mom)));
            labels.push(label(ConstraintKind::StratumInteraction, Some(f), Some(mom)));
        }
    }
    let m = rows.len();
    let matrix = DMatrix::from_fn(m, n, |r, i| rows[r][i]);
    let mut targets = DVector::zeros(m);
    targets[0] = 1.0;
    Ok(BlockDesign { matrix, targets, base_weights: normalized_base_weights(n, base_weights)?, row_labels: labels })
}

pub fn ebct_problem(table: &ObservationTable, cfg: &BalanceConfig) -> Result<BalanceProblem> {
    let (xk, tm) = reduce_inputs(table, cfg)?;
    BalanceProblem::new(global_design(&xk, &tm, table.base_weight(), cfg.design)?, Method::Ebct)
}

pub fn tsebct_problem(table: &ObservationTable, idx: &StratumIndex, cfg: &BalanceConfig) -> Result<BalanceProblem> {
    let (xk, tm) = reduce_inputs(table, cfg)?;
    BalanceProblem::new(build_block_design(&xk, &tm, idx, table.base_weight(), cfg.design)?, Method::Tsebct)
}

/// Drops dependent rows, runs Newton, and reports residuals on the full design.
pub fn solve_problem(prob: &BalanceProblem, cfg: &BalanceConfig, idx: Option<&StratumIndex>) -> Result<WeightSolution> {
    let dropped = dependent_rows(prob.constraints(), cfg.rank_tolerance);
    if !dropped.is_empty() {
        warn!("dropping {} linearly dependent constraint rows: {:?}", dropped.len(), dropped);
    }
    let reduced = prob.without_rows(&dropped);
    let mut sol = solve_newton(&reduced, &cfg.solver)?;
    sol.residuals = Some(residual_report(prob, &sol.weights, idx));
    sol.dropped_rows = dropped;
    Ok(sol)
}

/// Global entropy balancing on the reduced features.
pub fn solve_ebct(table: &ObservationTable, cfg: &BalanceConfig) -> Result<WeightSolution> {
    solve_problem(&ebct_problem(table, cfg)?, cfg, None)
}

/// Entropy balancing with one constraint block per stratum of `idx`.
pub fn solve_tsebct(table: &ObservationTable, idx: &StratumIndex, cfg: &BalanceConfig) -> Result<WeightSolution> {
    solve_problem(&tsebct_problem(table, idx, cfg)?, cfg, Some(idx))
}

pub fn residual_report(prob: &BalanceProblem, w: &DVector<f64>, idx: Option<&StratumIndex>) -> ResidualReport {
    let resid = (prob.constraints() * w - prob.targets()).abs();
    let mut by_kind: BTreeMap<String, f64> = BTreeMap::new();
    let mut by_stratum: BTreeMap<usize, f64> = BTreeMap::new();
    for (r, label) in prob.row_labels().iter().enumerate() {
        let slot = by_kind.entry(label.kind.as_str().to_string()).or_insert(0.0);
        *slot = slot.max(resid[r]);
        if let (Some(s), Some(_)) = (label.stratum, idx) {
            let slot = by_stratum.entry(s).or_insert(0.0);
            *slot = slot.max(resid[r]);
        }
    }
    let by_stratum = match idx {
        Some(idx) => by_stratum
            .into_iter()
            .map(|(s, max_abs)| StratumResidual { stratum: idx.strata()[s].to_string(), max_abs })
            .collect(),
        None => Vec::new(),
    };
    ResidualReport { max_abs: resid.max(), by_kind, by_stratum }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{build_stratum_index, Schema, TableParts};
    use crate::evaluate::weighted_pearson;
    use crate::synth::{gen_dataset, SynthConfig};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use rand_distr::StandardNormal;

    fn table(x: DMatrix<f64>, t: Vec<f64>, cells: Vec<String>) -> ObservationTable {
        let n = t.len();
        let p = x.ncols();
        ObservationTable::new(TableParts {
            schema: Schema::default(),
            feature_names: (1..=p).map(|j| format!("x{j}")).collect(),
            features: x,
            treatment: DVector::from_vec(t),
            outcome: DVector::zeros(n),
            cell_label: cells,
            time_label: None,
            binary_outcome: None,
            base_weight: None,
        })
        .unwrap()
    }

    fn small_synth(seed: u64, r_c: f64) -> ObservationTable {
        gen_dataset(&SynthConfig { n: 2000, p: 6, confounding_rate: r_c, seed, ..SynthConfig::default() }).unwrap()
    }

    fn full_pca() -> BalanceConfig {
        BalanceConfig { pca_threshold: 1.0, ..BalanceConfig::default() }
    }

    #[test]
    fn method_round_trips() {
        for m in Method::ALL {
            assert_eq!(m.as_str().parse::<Method>().unwrap(), m);
        }
        assert!("ols".parse::<Method>().is_err());
    }

    #[test]
    fn solver_config_rejects_bad_values() {
        assert!(SolverConfig { learning_rate: 0.0, ..SolverConfig::default() }.validate().is_err());
        assert!(SolverConfig { tolerance: -1.0, ..SolverConfig::default() }.validate().is_err());
        assert!(SolverConfig::default().validate().is_ok());
    }

    #[test]
    fn ebct_balances_confounded_data() {
        let t = small_synth(3, 0.5);
        let sol = solve_ebct(&t, &full_pca()).unwrap();
        assert!(sol.converged);
        assert!(sol.weights.iter().all(|&w| w > 0.0));
        assert!((sol.weights.sum() - 1.0).abs() < 1e-10);
        let res = sol.residuals.as_ref().unwrap();
        assert!(res.max_abs < 0.01);
        assert!(res.by_kind.contains_key("treatment_moment"));
        let ts = standardize(t.treatment().as_view(), "t").unwrap();
        assert!(sol.weights.dot(&ts).abs() < 0.01);
        for j in 0..3 {
            let x = t.features().column(j);
            let before = weighted_pearson(x.as_slice(), t.treatment().as_slice(), &vec![1.0 / 2000.0; 2000]).unwrap();
            let after = weighted_pearson(x.as_slice(), t.treatment().as_slice(), sol.weights.as_slice()).unwrap();
            assert!(after.abs() < before.abs(), "x{}: {before} -> {after}", j + 1);
        }
    }

    #[test]
    fn unconfounded_data_keeps_weights_near_uniform() {
        let t = small_synth(5, 0.0);
        let sol = solve_ebct(&t, &full_pca()).unwrap();
        let n = t.n() as f64;
        assert!(sol.weights.iter().all(|&w| (w - 1.0 / n).abs() < 10.0 / n));
    }

    #[test]
    fn single_stratum_matches_global() {
        let t = small_synth(7, 0.4);
        let idx = StratumIndex::single(t.n());
        let cfg = full_pca();
        let a = solve_ebct(&t, &cfg).unwrap();
        let b = solve_tsebct(&t, &idx, &cfg).unwrap();
        assert!((&a.weights - &b.weights).amax() < 1e-8);
    }

    #[test]
    fn opposite_strata_are_balanced_separately() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let n = 600;
        let mut xs = Vec::with_capacity(n);
        let mut ts = Vec::with_capacity(n);
        let mut cells = Vec::with_capacity(n);
        for i in 0..n {
            let x: f64 = rng.sample(StandardNormal);
            let sign = if i < n / 2 { 1.0 } else { -1.0 };
            let noise: f64 = rng.sample(StandardNormal);
            xs.push(x);
            ts.push(2.0 + sign * 0.8 * x + noise);
            cells.push(if i < n / 2 { "a" } else { "b" }.to_string());
        }
        let tab = table(DMatrix::from_vec(n, 1, xs), ts, cells);
        let idx = build_stratum_index(&tab).unwrap();
        let cfg = full_pca();
        let global = solve_ebct(&tab, &cfg).unwrap();
        let strat = solve_tsebct(&tab, &idx, &cfg).unwrap();
        assert!(strat.converged);
        let worst = |w: &DVector<f64>| {
            (0..2)
                .map(|s| {
                    let rows = idx.rows(s);
                    let x: Vec<f64> = rows.iter().map(|&i| tab.features()[(i, 0)]).collect();
                    let t: Vec<f64> = rows.iter().map(|&i| tab.treatment()[i]).collect();
                    let ws: Vec<f64> = rows.iter().map(|&i| w[i]).collect();
                    let total: f64 = ws.iter().sum();
                    let ws: Vec<f64> = ws.iter().map(|v| v / total).collect();
                    weighted_pearson(&x, &t, &ws).unwrap().abs()
                })
                .fold(0.0, f64::max)
        };
        assert!(worst(&strat.weights) < 0.05);
        assert!(worst(&global.weights) > 0.3);
        assert_eq!(strat.residuals.unwrap().by_stratum.len(), 2);
    }

    #[test]
    fn duplicate_feature_rows_are_dropped() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let n = 300;
        let x0: Vec<f64> = (0..n).map(|_| rng.sample(StandardNormal)).collect();
        let t: Vec<f64> = x0.iter().map(|v| 1.0 + 0.3 * v + rng.sample::<f64, _>(StandardNormal)).collect();
        let xk = DMatrix::from_fn(n, 2, |i, _| x0[i]);
        let tm = treatment_moments(&DVector::from_vec(t), 1).unwrap();
        let design = global_design(&xk, &tm, None, DesignOptions::default()).unwrap();
        let prob = BalanceProblem::new(design, Method::Ebct).unwrap();
        let sol = solve_problem(&prob, &BalanceConfig::default(), None).unwrap();
        assert_eq!(sol.dropped_rows, vec![3, 5]);
        assert!(sol.converged);
        assert!(sol.residuals.unwrap().max_abs < 0.01);
    }

    #[test]
    fn problem_rejects_bad_base_weights() {
        let c = DMatrix::from_element(1, 3, 1.0);
        let m = DVector::from_element(1, 1.0);
        assert!(BalanceProblem::from_parts(c.clone(), m.clone(), DVector::from_vec(vec![1.0, 0.0, 1.0])).is_err());
        assert!(BalanceProblem::from_parts(c, m, DVector::from_vec(vec![1.0, 1.0])).is_err());
    }
}
