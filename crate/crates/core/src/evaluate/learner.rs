//! S-learner: one outcome model over `[features, treatment, treatment × features]`,
//! scored by the difference between predictions at a dose and at zero.

use std::fmt::Debug;

use nalgebra::{Cholesky, DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::data::ObservationTable;
use crate::error::{Error, Result};

/// A weighted regression or classification model.
pub trait BaseLearner: Debug + Send + Sync {
    fn name(&self) -> &'static str;
    /// `weights` are non-negative; only their ratios matter.
    fn fit(&self, x: &DMatrix<f64>, y: &DVector<f64>, weights: &DVector<f64>) -> Result<Box<dyn FittedModel>>;
}

pub trait FittedModel: Debug + Send + Sync {
    fn predict(&self, x: &DMatrix<f64>) -> DVector<f64>;
}

/// Intercept followed by coefficients.
#[derive(Debug, Clone, PartialEq)]
pub struct LinearCoefficients(pub DVector<f64>);

impl LinearCoefficients {
    fn linear_predictor(&self, x: &DMatrix<f64>) -> DVector<f64> {
        let beta = &self.0;
        x * beta.rows(1, x.ncols()) + DVector::from_element(x.nrows(), beta[0])
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LinearFit(pub LinearCoefficients);

impl FittedModel for LinearFit {
    fn predict(&self, x: &DMatrix<f64>) -> DVector<f64> {
        self.0.linear_predictor(x)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LogisticFit(pub LinearCoefficients);

impl FittedModel for LogisticFit {
    fn predict(&self, x: &DMatrix<f64>) -> DVector<f64> {
        self.0.linear_predictor(x).map(sigmoid)
    }
}

fn sigmoid(v: f64) -> f64 {
    if v >= 0.0 {
        1.0 / (1.0 + (-v).exp())
    } else {
        let e = v.exp();
        e / (1.0 + e)
    }
}

fn check_inputs(x: &DMatrix<f64>, y: &DVector<f64>, w: &DVector<f64>) -> Result<DVector<f64>> {
    let n = x.nrows();
    if y.len() != n {
        return Err(Error::LengthMismatch { what: "outcome".into(), got: y.len(), expected: n });
    }
    if w.len() != n {
        return Err(Error::LengthMismatch { what: "sample weights".into(), got: w.len(), expected: n });
    }
    if w.iter().any(|v| !(v.is_finite() && *v >= 0.0)) {
        return Err(Error::InvalidConfig("sample weights must be finite and non-negative".into()));
    }
    let total = w.sum();
    if !(total > 0.0) {
        return Err(Error::InvalidConfig("sample weights sum to zero".into()));
    }
    Ok(w / total)
}

fn with_intercept(x: &DMatrix<f64>) -> DMatrix<f64> {
    let (n, p) = x.shape();
    let mut design = DMatrix::from_element(n, p + 1, 1.0);
    design.columns_mut(1, p).copy_from(x);
    design
}

/// `D' diag(w) D`, symmetric by construction.
fn weighted_gram(design: &DMatrix<f64>, w: &DVector<f64>) -> DMatrix<f64> {
    let root = w.map(f64::sqrt);
    let mut scaled = design.clone();
    for mut col in scaled.column_iter_mut() {
        col.component_mul_assign(&root);
    }
    let gram = scaled.transpose() * &scaled;
    (&gram + gram.transpose()) * 0.5
}

/// Solves with `penalty` on every coefficient but the intercept, escalating it on failure.
fn penalized_solve(gram: &DMatrix<f64>, rhs: &DVector<f64>, penalty: f64) -> Result<DVector<f64>> {
    let mut lambda = penalty;
    for _ in 0..8 {
        let mut reg = gram.clone();
        for j in 1..reg.nrows() {
            reg[(j, j)] += lambda;
        }
        if let Some(chol) = Cholesky::new(reg) {
            let x = chol.solve(rhs);
            if x.iter().all(|v| v.is_finite()) {
                return Ok(x);
            }
        }
        lambda = (lambda * 10.0).max(1e-12);
    }
    Err(Error::NumericalFailure("singular learner normal equations".into()))
}

/// Weighted least squares with an L2 penalty on the non-intercept coefficients.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RidgeLinear {
    pub penalty: f64,
}

impl Default for RidgeLinear {
    fn default() -> Self {
        Self { penalty: 1e-8 }
    }
}

impl BaseLearner for RidgeLinear {
    fn name(&self) -> &'static str {
        "ridge_linear"
    }

    fn fit(&self, x: &DMatrix<f64>, y: &DVector<f64>, weights: &DVector<f64>) -> Result<Box<dyn FittedModel>> {
        let w = check_inputs(x, y, weights)?;
        let design = with_intercept(x);
        let rhs = design.tr_mul(&w.component_mul(y));
        let beta = penalized_solve(&weighted_gram(&design, &w), &rhs, self.penalty)?;
        Ok(Box::new(LinearFit(LinearCoefficients(beta))))
    }
}

/// Weighted L2-penalized logistic regression fitted by iteratively reweighted least squares.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LogisticIrls {
    pub penalty: f64,
    pub max_iterations: usize,
    pub tolerance: f64,
}

impl Default for LogisticIrls {
    fn default() -> Self {
        Self { penalty: 1e-4, max_iterations: 100, tolerance: 1e-8 }
    }
}

impl LogisticIrls {
    fn penalized_loglik(&self, design: &DMatrix<f64>, y: &DVector<f64>, w: &DVector<f64>, beta: &DVector<f64>) -> f64 {
        let eta = design * beta;
        // log(1 + e^v) without overflow
        let softplus = |v: f64| v.max(0.0) + (-v.abs()).exp().ln_1p();
        let ll: f64 = (0..y.len()).map(|i| w[i] * (y[i] * eta[i] - softplus(eta[i]))).sum();
        ll - 0.5 * self.penalty * beta.rows(1, beta.len() - 1).norm_squared()
    }
}

impl BaseLearner for LogisticIrls {
    fn name(&self) -> &'static str {
        "logistic_irls"
    }

    fn fit(&self, x: &DMatrix<f64>, y: &DVector<f64>, weights: &DVector<f64>) -> Result<Box<dyn FittedModel>> {
        let w = check_inputs(x, y, weights)?;
        if y.iter().any(|&v| v != 0.0 && v != 1.0) {
            return Err(Error::InvalidConfig("logistic learner needs a 0/1 outcome".into()));
        }
        let design = with_intercept(x);
        let p = x.ncols();
        let mut beta = DVector::zeros(p + 1);
        let mut objective = self.penalized_loglik(&design, y, &w, &beta);
        for iteration in 1..=self.max_iterations {
            let mu = (&design * &beta).map(sigmoid);
            let curvature = mu.map(|m| (m * (1.0 - m)).max(1e-12));
            let gram = weighted_gram(&design, &w.component_mul(&curvature));
            let mut grad = design.tr_mul(&w.component_mul(&(y - &mu)));
            for j in 1..=p {
                grad[j] -= self.penalty * beta[j];
            }
            let step = penalized_solve(&gram, &grad, self.penalty)?;
            let mut scale = 1.0;
            let mut next = &beta + &step;
            let mut next_objective = self.penalized_loglik(&design, y, &w, &next);
            while next_objective < objective && scale > 1e-6 {
                scale *= 0.5;
                next = &beta + scale * &step;
                next_objective = self.penalized_loglik(&design, y, &w, &next);
            }
            let change = (scale * &step).amax();
            beta = next;
            objective = next_objective;
            if change < self.tolerance {
                log::debug!("logistic fit converged after {iteration} iterations");
                return Ok(Box::new(LogisticFit(LinearCoefficients(beta))));
            }
        }
        Err(Error::NoConvergence { learner: self.name(), iterations: self.max_iterations })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LearnerKind {
    RidgeLinear,
    LogisticIrls,
}

/// How the S-learner is built and which outcome it models.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SLearnerSpec {
    pub learner: LearnerKind,
    /// Model the binary outcome column instead of the continuous outcome.
    pub binary_outcome: bool,
    /// Add treatment × feature columns so the uplift varies by row.
    pub interactions: bool,
    pub penalty: f64,
}

impl Default for SLearnerSpec {
    fn default() -> Self {
        Self { learner: LearnerKind::LogisticIrls, binary_outcome: true, interactions: true, penalty: 1e-4 }
    }
}

impl SLearnerSpec {
    pub fn base_learner(&self) -> Box<dyn BaseLearner> {
        match self.learner {
            LearnerKind::RidgeLinear => Box::new(RidgeLinear { penalty: self.penalty }),
            LearnerKind::LogisticIrls => Box::new(LogisticIrls { penalty: self.penalty, ..LogisticIrls::default() }),
        }
    }
}

#[derive(Debug)]
pub struct UpliftModel {
    pub learner: &'static str,
    pub interactions: bool,
    fitted: Box<dyn FittedModel>,
}

impl UpliftModel {
    /// Predictions with every row's treatment replaced by `t`.
    pub fn predict_at(&self, features: &DMatrix<f64>, t: &DVector<f64>) -> DVector<f64> {
        self.fitted.predict(&learner_inputs(features, t, self.interactions))
    }
}

fn learner_inputs(features: &DMatrix<f64>, t: &DVector<f64>, interactions: bool) -> DMatrix<f64> {
    let (n, p) = features.shape();
    let cols = if interactions { 2 * p + 1 } else { p + 1 };
    DMatrix::from_fn(n, cols, |i, j| match j {
        j if j < p => features[(i, j)],
        j if j == p => t[i],
        j => t[i] * features[(i, j - p - 1)],
    })
}

pub fn fit_s_learner(table: &ObservationTable, weights: &DVector<f64>, spec: &SLearnerSpec) -> Result<UpliftModel> {
    let y = if spec.binary_outcome {
        table.binary_outcome().ok_or_else(|| Error::MissingColumn("binary outcome".into()))?
    } else {
        table.outcome()
    };
    let learner = spec.base_learner();
    let x = learner_inputs(table.features(), table.treatment(), spec.interactions);
    let fitted = learner.fit(&x, y, weights)?;
    Ok(UpliftModel { learner: learner.name(), interactions: spec.interactions, fitted })
}

/// `prediction(dose) - prediction(0)` for each row.
pub fn predict_uplift(model: &UpliftModel, table: &ObservationTable, dose: f64) -> DVector<f64> {
    let n = table.n();
    let at_dose = model.predict_at(table.features(), &DVector::from_element(n, dose));
    let at_zero = model.predict_at(table.features(), &DVector::zeros(n));
    at_dose - at_zero
}

/// Mean of the strictly positive treatments; 1 when there are none.
pub fn default_dose(t: &DVector<f64>) -> f64 {
    let (sum, count) = t.iter().filter(|&&v| v > 0.0).fold((0.0, 0usize), |(s, c), &v| (s + v, c + 1));
    if count == 0 {
        1.0
    } else {
        sum / count as f64
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use rand_distr::StandardNormal;

    fn linear_data(seed: u64, n: usize) -> (DMatrix<f64>, DVector<f64>) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let x = DMatrix::from_fn(n, 3, |_, _| rng.sample::<f64, _>(StandardNormal));
        let y = DVector::from_fn(n, |i, _| 1.5 + 2.0 * x[(i, 0)] - x[(i, 1)] + 0.25 * x[(i, 2)]);
        (x, y)
    }

    #[test]
    fn ridge_recovers_exact_linear_truth() {
        let (x, y) = linear_data(1, 50);
        let w = DVector::from_fn(50, |i, _| 1.0 + (i % 3) as f64);
        let fit = RidgeLinear::default().fit(&x, &y, &w).unwrap();
        assert!((fit.predict(&x) - &y).amax() < 1e-6);
        let probe = DMatrix::from_row_slice(1, 3, &[0.0, 0.0, 0.0]);
        assert!((fit.predict(&probe)[0] - 1.5).abs() < 1e-6);
    }

    #[test]
    fn doubling_weights_changes_nothing() {
        let (x, mut y) = linear_data(2, 40);
        y.iter_mut().enumerate().for_each(|(i, v)| *v += (i as f64).sin());
        let w = DVector::from_fn(40, |i, _| 0.5 + (i % 5) as f64);
        let ridge = RidgeLinear { penalty: 1e-3 };
        let a = ridge.fit(&x, &y, &w).unwrap().predict(&x);
        let b = ridge.fit(&x, &y, &(&w * 2.0)).unwrap().predict(&x);
        assert!((a - b).amax() < 1e-10);
        let yb = y.map(|v| if v > 1.5 { 1.0 } else { 0.0 });
        let lr = LogisticIrls::default();
        let a = lr.fit(&x, &yb, &w).unwrap().predict(&x);
        let b = lr.fit(&x, &yb, &(&w * 2.0)).unwrap().predict(&x);
        assert!((a - b).amax() < 1e-8);
    }

    #[test]
    fn zero_weights_equal_subset_fit() {
        let (x, mut y) = linear_data(3, 30);
        y.iter_mut().enumerate().for_each(|(i, v)| *v += 0.3 * (i as f64).cos());
        let keep = [4usize, 17, 21, 8, 11, 2];
        let mut w = DVector::zeros(30);
        for &i in &keep {
            w[i] = 1.0;
        }
        let learner = RidgeLinear { penalty: 1e-6 };
        let full = learner.fit(&x, &y, &w).unwrap();
        let sub =
            learner.fit(&x.select_rows(&keep), &y.select_rows(&keep), &DVector::from_element(keep.len(), 1.0)).unwrap();
        assert!((full.predict(&x) - sub.predict(&x)).amax() < 1e-9);
    }

    #[test]
    fn logistic_matches_known_probabilities() {
        // one binary feature: fitted probability per group equals the group rate
        let x = DMatrix::from_fn(10, 1, |i, _| if i < 4 { 0.0 } else { 1.0 });
        let y = DVector::from_vec(vec![1.0, 0.0, 0.0, 0.0, 1.0, 1.0, 1.0, 0.0, 1.0, 1.0]);
        let lr = LogisticIrls { penalty: 0.0, ..LogisticIrls::default() };
        let p = lr.fit(&x, &y, &DVector::from_element(10, 1.0)).unwrap().predict(&x);
        assert!((p[0] - 0.25).abs() < 1e-8);
        assert!((p[9] - 5.0 / 6.0).abs() < 1e-8);
    }

    #[test]
    fn logistic_reports_non_convergence() {
        let (x, y) = linear_data(4, 60);
        let yb = y.map(|v| if v > 1.5 { 1.0 } else { 0.0 });
        let lr = LogisticIrls { penalty: 0.0, max_iterations: 3, tolerance: 1e-14 };
        assert!(matches!(
            lr.fit(&x, &yb, &DVector::from_element(60, 1.0)),
            Err(Error::NoConvergence { iterations: 3, .. })
        ));
    }

    #[test]
    fn rejects_non_binary_or_bad_weights() {
        let (x, y) = linear_data(5, 10);
        let ones = DVector::from_element(10, 1.0);
        assert!(LogisticIrls::default().fit(&x, &y, &ones).is_err());
        assert!(RidgeLinear::default().fit(&x, &y, &DVector::zeros(10)).is_err());
        assert!(RidgeLinear::default().fit(&x, &y, &DVector::from_element(9, 1.0)).is_err());
    }

    #[test]
    fn default_dose_is_mean_positive_treatment() {
        assert_eq!(default_dose(&DVector::from_vec(vec![0.0, 0.2, 0.0, 0.4])), 0.30000000000000004);
        assert_eq!(default_dose(&DVector::zeros(3)), 1.0);
    }
}
