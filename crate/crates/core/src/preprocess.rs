//! Numerical inputs for the balancing solvers.
//!
//! The constraint matrix has one row per balance condition and one column per
//! observation. Rows come in four kinds: the weight-sum row, one row per
//! standardized treatment moment, one row per (stratum, component) holding the
//! within-stratum standardized component, and one interaction row per
//! (stratum, component) multiplying that column with the first treatment
//! moment. Stratum rows are exactly zero outside their stratum.

use nalgebra::{DMatrix, DVector, DVectorView, SymmetricEigen};
use serde::{Deserialize, Serialize};

use crate::data::StratumIndex;
use crate::error::{Error, Result};

/// Standard deviations below this are treated as zero.
pub const MIN_STD: f64 = 1e-8;

pub const DEFAULT_PCA_THRESHOLD: f64 = 0.95;

fn mean_std(v: &DVectorView<'_, f64>) -> (f64, f64) {
    let n = v.len() as f64;
    let mean = v.sum() / n;
    let var = v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n;
    (mean, var.sqrt())
}

/// Zero mean, unit population standard deviation.
pub fn standardize(v: DVectorView<'_, f64>, what: &str) -> Result<DVector<f64>> {
    if v.len() < 2 {
        return Err(Error::Degenerate(format!("{what} (fewer than 2 values)")));
    }
    let (mean, sd) = mean_std(&v);
    if !(sd >= MIN_STD) {
        return Err(Error::Degenerate(what.to_string()));
    }
    Ok(v.map(|x| (x - mean) / sd))
}

/// Principal components of the sample covariance (divisor n - 1).
#[derive(Debug, Clone, PartialEq)]
pub struct PcaModel {
    mean: DVector<f64>,
    /// p×p, one orthonormal direction per row, by decreasing eigenvalue.
    directions: DMatrix<f64>,
    eigenvalues: DVector<f64>,
    retained_k: usize,
}

impl PcaModel {
    pub fn retained_k(&self) -> usize {
        self.retained_k
    }

    /// k×p retained directions.
    pub fn components(&self) -> DMatrix<f64> {
        self.directions.rows(0, self.retained_k).into_owned()
    }

    pub fn explained_variance(&self) -> DVector<f64> {
        self.eigenvalues.rows(0, self.retained_k).into_owned()
    }

    pub fn explained_ratio(&self) -> DVector<f64> {
        let total = self.eigenvalues.sum();
        self.explained_variance() / total
    }

    pub fn mean(&self) -> &DVector<f64> {
        &self.mean
    }

    pub fn n_features(&self) -> usize {
        self.mean.len()
    }
}

/// Keeps the smallest k whose cumulative explained-variance ratio reaches `explained_threshold`.
pub fn pca_fit(x: &DMatrix<f64>, explained_threshold: f64) -> Result<PcaModel> {
    if !(explained_threshold > 0.0 && explained_threshold <= 1.0) {
        return Err(Error::InvalidConfig(format!(
            "explained variance threshold must lie in (0, 1], got {explained_threshold}"
        )));
    }
    let (n, p) = x.shape();
    if n < 2 {
        return Err(Error::Degenerate("PCA input (fewer than 2 rows)".into()));
    }
    if x.iter().any(|v| !v.is_finite()) {
        return Err(Error::NumericalFailure("PCA input".into()));
    }
    let mean = x.row_mean().transpose();
    let mut centered = x.clone();
    for j in 0..p {
        centered.column_mut(j).add_scalar_mut(-mean[j]);
    }
    let cov = centered.tr_mul(&centered) / (n as f64 - 1.0);
    let eig = SymmetricEigen::new(cov);
    let mut order: Vec<usize> = (0..p).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]));
    let eigenvalues = DVector::from_iterator(p, order.iter().map(|&i| eig.eigenvalues[i].max(0.0)));
    let mut directions = DMatrix::zeros(p, p);
    for (row, &i) in order.iter().enumerate() {
        let mut v = eig.eigenvectors.column(i).into_owned();
        // sign convention: largest-magnitude entry positive
        let imax = v.iamax();
        if v[imax] < 0.0 {
            v.neg_mut();
        }
        directions.row_mut(row).copy_from(&v.transpose());
    }
    let total = eigenvalues.sum();
    if !(total > 0.0) {
        return Err(Error::Degenerate("PCA input (zero total variance)".into()));
    }
    let mut cumulative = 0.0;
    let mut retained_k = p;
    for (k, ev) in eigenvalues.iter().enumerate() {
        cumulative += ev / total;
        if cumulative >= explained_threshold - 1e-12 {
            retained_k = k + 1;
            break;
        }
    }
    Ok(PcaModel { mean, directions, eigenvalues, retained_k })
}

/// Centered input projected on the retained directions: n×k.
pub fn pca_transform(model: &PcaModel, x: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    if x.ncols() != model.n_features() {
        return Err(Error::LengthMismatch {
            what: "PCA input columns".into(),
            got: x.ncols(),
            expected: model.n_features(),
        });
    }
    let mut centered = x.clone();
    for j in 0..x.ncols() {
        centered.column_mut(j).add_scalar_mut(-model.mean[j]);
    }
    Ok(centered * model.components().transpose())
}

/// Columns `T, T^2, ..., T^degree`, each standardized.
pub fn treatment_moments(t: &DVector<f64>, degree: usize) -> Result<DMatrix<f64>> {
    if degree == 0 {
        return Err(Error::InvalidConfig("treatment degree must be at least 1".into()));
    }
    let mut out = DMatrix::zeros(t.len(), degree);
    for d in 1..=degree {
        let raw = t.map(|v| v.powi(d as i32));
        let col = standardize(raw.as_view(), &format!("treatment moment {d}"))?;
        out.set_column(d - 1, &col);
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ConstraintKind {
    WeightSum,
    TreatmentMoment,
    StratumFeature,
    StratumInteraction,
}

impl ConstraintKind {
    pub fn as_str(&self) -> &'static str {
        match self {
            ConstraintKind::WeightSum => "weight_sum",
            ConstraintKind::TreatmentMoment => "treatment_moment",
            ConstraintKind::StratumFeature => "stratum_feature",
            ConstraintKind::StratumInteraction => "stratum_interaction",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConstraintRow {
    pub kind: ConstraintKind,
    pub stratum: Option<usize>,
    pub feature: Option<usize>,
    /// Treatment moment (0-based) for moment and interaction rows.
    pub moment: Option<usize>,
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct DesignOptions {
    /// Interact features with every treatment moment instead of only the first.
    pub interact_all_moments: bool,
}

/// The assembled constraint system: `matrix * w = targets`, closest to `base_weights`.
#[derive(Debug, Clone, PartialEq)]
pub struct BlockDesign {
    pub matrix: DMatrix<f64>,
    pub targets: DVector<f64>,
    pub base_weights: DVector<f64>,
    pub row_labels: Vec<ConstraintRow>,
}

impl BlockDesign {
    pub fn n_constraints(&self) -> usize {
        self.matrix.nrows()
    }

    pub fn n_obs(&self) -> usize {
        self.matrix.ncols()
    }
}

/// Normalizes optional base weights to sum to one; `None` gives uniform `1/n`.
pub fn normalized_base_weights(n: usize, base: Option<&DVector<f64>>) -> Result<DVector<f64>> {
    match base {
        None => Ok(DVector::from_element(n, 1.0 / n as f64)),
        Some(q) => {
            if q.len() != n {
                return Err(Error::LengthMismatch { what: "base weights".into(), got: q.len(), expected: n });
            }
            if q.iter().any(|v| !(v.is_finite() && *v > 0.0)) {
                return Err(Error::InvalidConfig("base weights must be positive and finite".into()));
            }
            Ok(q / q.sum())
        }
    }
}

/// Builds the per-stratum block design from PCA scores `xk` (n×k) and
/// standardized treatment moments `tm` (n×d).
pub fn build_block_design(
    xk: &DMatrix<f64>,
    tm: &DMatrix<f64>,
    idx: &StratumIndex,
    base_weights: Option<&DVector<f64>>,
    opts: DesignOptions,
) -> Result<BlockDesign> {
    let (n, k) = xk.shape();
    let d = tm.ncols();
    if tm.nrows() != n {
        return Err(Error::LengthMismatch { what: "treatment moments".into(), got: tm.nrows(), expected: n });
    }
    if idx.n_rows() != n {
        return Err(Error::LengthMismatch { what: "stratum index".into(), got: idx.n_rows(), expected: n });
    }
    if d == 0 {
        return Err(Error::InvalidConfig("at least one treatment moment is required".into()));
    }
    let s_count = idx.len();
    let inter_moments = if opts.interact_all_moments { d } else { 1 };
    let m = 1 + d + s_count * k * (1 + inter_moments);

    let mut matrix = DMatrix::zeros(m, n);
    let mut row_labels = Vec::with_capacity(m);
    let mut targets = DVector::zeros(m);

    matrix.row_mut(0).fill(1.0);
    targets[0] = 1.0;
    row_labels.push(ConstraintRow { kind: ConstraintKind::WeightSum, stratum: None, feature: None, moment: None });

    for j in 0..d {
        matrix.row_mut(1 + j).copy_from(&tm.column(j).transpose());
        row_labels.push(ConstraintRow {
            kind: ConstraintKind::TreatmentMoment,
            stratum: None,
            feature: None,
            moment: Some(j),
        });
    }

    // within-stratum standardized scores, n×k per stratum block
    let mut blocks: Vec<DMatrix<f64>> = Vec::with_capacity(s_count);
    for s in 0..s_count {
        let rows = idx.rows(s);
        let sub = xk.select_rows(rows);
        let mut z = DMatrix::zeros(rows.len(), k);
        for f in 0..k {
            let label = format!("component {} in stratum {}", f + 1, idx.strata()[s]);
            z.set_column(f, &standardize(sub.column(f), &label)?);
        }
        blocks.push(z);
    }

    let mut r = 1 + d;
    for (s, z) in blocks.iter().enumerate() {
        for f in 0..k {
            for (local, &i) in idx.rows(s).iter().enumerate() {
                matrix[(r, i)] = z[(local, f)];
            }
            row_labels.push(ConstraintRow {
                kind: ConstraintKind::StratumFeature,
                stratum: Some(s),
                feature: Some(f),
                moment: None,
            });
            r += 1;
        }
    }
    for mom in 0..inter_moments {
        for (s, z) in blocks.iter().enumerate() {
            for f in 0..k {
                for (local, &i) in idx.rows(s).iter().enumerate() {
                    matrix[(r, i)] = z[(local, f)] * tm[(i, mom)];
                }
                row_labels.push(ConstraintRow {
                    kind: ConstraintKind::StratumInteraction,
                    stratum: Some(s),
                    feature: Some(f),
                    moment: Some(mom),
                });
                r += 1;
            }
        }
    }
    debug_assert_eq!(r, m);

    Ok(BlockDesign { matrix, targets, base_weights: normalized_base_weights(n, base_weights)?, row_labels })
}
