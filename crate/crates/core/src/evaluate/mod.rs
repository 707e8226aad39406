//! Balance diagnostics and downstream uplift metrics.

mod learner;
mod metrics;

use nalgebra::DVector;
use serde::{Deserialize, Serialize};

use crate::data::{ObservationTable, StratumIndex};
use crate::error::{Error, Result};

pub use learner::{
    default_dose, fit_s_learner, predict_uplift, BaseLearner, FittedModel, LearnerKind, LinearCoefficients, LinearFit,
    LogisticFit, LogisticIrls, RidgeLinear, SLearnerSpec, UpliftModel,
};
pub use metrics::{auc, auuc};

/// Ordinary Pearson correlation; NaN when either input is constant.
pub fn pearson(x: &[f64], y: &[f64]) -> f64 {
    let n = x.len().min(y.len());
    let w = vec![1.0 / n as f64; n];
    weighted_pearson(&x[..n], &y[..n], &w).unwrap_or(f64::NAN)
}

/// Weighted covariance over the product of weighted standard deviations.
/// Weights are normalized internally.
pub fn weighted_pearson(x: &[f64], y: &[f64], w: &[f64]) -> Result<f64> {
    let n = x.len();
    if y.len() != n || w.len() != n {
        return Err(Error::LengthMismatch {
            what: "correlation inputs".into(),
            got: y.len().min(w.len()),
            expected: n,
        });
    }
    if w.iter().any(|v| !(v.is_finite() && *v >= 0.0)) {
        return Err(Error::Metric("weights must be finite and non-negative".into()));
    }
    let total: f64 = w.iter().sum();
    if !(total > 0.0) {
        return Err(Error::Metric("weights sum to zero".into()));
    }
    let mx = x.iter().zip(w).map(|(a, b)| a * b).sum::<f64>() / total;
    let my = y.iter().zip(w).map(|(a, b)| a * b).sum::<f64>() / total;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for i in 0..n {
        let dx = x[i] - mx;
        let dy = y[i] - my;
        sxy += w[i] * dx * dy;
        sxx += w[i] * dx * dx;
        syy += w[i] * dy * dy;
    }
    let scale = x.iter().chain(y).fold(0.0f64, |m, v| m.max(v.abs())).max(f64::MIN_POSITIVE);
    let floor = (1e-14 * scale).powi(2) * total;
    if !(sxx > floor && syy > floor) {
        return Err(Error::Metric("zero weighted variance".into()));
    }
    Ok((sxy / (sxx.sqrt() * syy.sqrt())).clamp(-1.0, 1.0))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureCorrelation {
    pub feature: String,
    /// `None` when the feature or treatment is constant over the rows considered.
    pub unweighted: Option<f64>,
    pub weighted: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorrelationSummary {
    pub rows: usize,
    pub per_feature: Vec<FeatureCorrelation>,
    /// Mean |corr| over features with a defined value.
    pub average_absolute_unweighted: f64,
    pub average_absolute_weighted: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StratumCorrelation {
    pub stratum: String,
    #[serde(flatten)]
    pub summary: CorrelationSummary,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorrelationReport {
    #[serde(flatten)]
    pub global: CorrelationSummary,
    pub per_stratum: Vec<StratumCorrelation>,
}

fn mean_abs(values: impl Iterator<Item = Option<f64>>) -> f64 {
    let (sum, count) = values.flatten().fold((0.0, 0usize), |(s, c), v| (s + v.abs(), c + 1));
    if count == 0 {
        f64::NAN
    } else {
        sum / count as f64
    }
}

fn summarize_rows(table: &ObservationTable, weights: &DVector<f64>, rows: Option<&[usize]>) -> CorrelationSummary {
    let pick = |v: &[f64]| -> Vec<f64> {
        match rows {
            Some(r) => r.iter().map(|&i| v[i]).collect(),
            None => v.to_vec(),
        }
    };
    let t = pick(table.treatment().as_slice());
    let w = pick(weights.as_slice());
    let uniform = vec![1.0 / t.len() as f64; t.len()];
    let per_feature: Vec<FeatureCorrelation> = table
        .feature_names()
        .iter()
        .enumerate()
        .map(|(j, name)| {
            let x = pick(table.features().column(j).as_slice());
            FeatureCorrelation {
                feature: name.clone(),
                unweighted: weighted_pearson(&x, &t, &uniform).ok(),
                weighted: weighted_pearson(&x, &t, &w).ok(),
            }
        })
        .collect();
    CorrelationSummary {
        rows: t.len(),
        average_absolute_unweighted: mean_abs(per_feature.iter().map(|f| f.unweighted)),
        average_absolute_weighted: mean_abs(per_feature.iter().map(|f| f.weighted)),
        per_feature,
    }
}

/// Feature-treatment correlations with and without `weights`, overall and
/// within each stratum (weights renormalized per stratum).
pub fn correlation_report(
    table: &ObservationTable,
    weights: &DVector<f64>,
    idx: Option<&StratumIndex>,
) -> Result<CorrelationReport> {
    if weights.len() != table.n() {
        return Err(Error::LengthMismatch { what: "weights".into(), got: weights.len(), expected: table.n() });
    }
    if weights.iter().any(|v| !(v.is_finite() && *v >= 0.0)) {
        return Err(Error::Metric("weights must be finite and non-negative".into()));
    }
    let global = summarize_rows(table, weights, None);
    let per_stratum = match idx {
        Some(idx) => {
            if idx.n_rows() != table.n() {
                return Err(Error::LengthMismatch {
                    what: "stratum index".into(),
                    got: idx.n_rows(),
                    expected: table.n(),
                });
            }
            (0..idx.len())
                .map(|s| StratumCorrelation {
                    stratum: idx.strata()[s].to_string(),
                    summary: summarize_rows(table, weights, Some(idx.rows(s))),
                })
                .collect()
        }
        None => Vec::new(),
    };
    Ok(CorrelationReport { global, per_stratum })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub method: String,
    pub auuc: f64,
    pub auc: f64,
    pub dose: f64,
}

/// Fits the S-learner with `weights`, scores uplift at the default dose and
/// reports AUUC (treated means `T > 0`) and the AUC of the fitted outcome at
/// the observed treatment against the binary outcome.
pub fn uplift_metrics(
    table: &ObservationTable,
    weights: &DVector<f64>,
    spec: &SLearnerSpec,
    method: &str,
) -> Result<MetricsReport> {
    let labels = table.binary_outcome().ok_or_else(|| Error::MissingColumn("binary outcome".into()))?;
    let model = fit_s_learner(table, weights, spec)?;
    let dose = default_dose(table.treatment());
    let uplift = predict_uplift(&model, table, dose);
    let treated: Vec<bool> = table.treatment().iter().map(|&t| t > 0.0).collect();
    let fitted = model.predict_at(table.features(), table.treatment());
    Ok(MetricsReport {
        method: method.to_string(),
        auuc: auuc(uplift.as_slice(), labels.as_slice(), &treated)?,
        auc: auc(fitted.as_slice(), labels.as_slice())?,
        dose,
    })
}
