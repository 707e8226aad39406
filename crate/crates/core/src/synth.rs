//! Seeded generator of confounded benchmark data with a continuous treatment.
//!
//! Features are iid standard normal. The first `floor(p * r_c)` features drive
//! the treatment, the cell label is a binomial draw, and the outcome is linear
//! in the treatment with treatment-feature interactions on even columns.

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Binomial, Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::data::{ObservationTable, Schema, TableParts};
use crate::error::{Error, Result};

/// Standard deviation of the additive outcome noise.
pub const OUTCOME_NOISE_SD: f64 = 3.0;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthConfig {
    pub n: usize,
    pub p: usize,
    pub confounding_rate: f64,
    pub confounding_strength: f64,
    pub od_trials: u64,
    pub od_prob: f64,
    pub treatment_shift: f64,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            n: 100_000,
            p: 100,
            confounding_rate: 0.4,
            confounding_strength: 0.5,
            od_trials: 100,
            od_prob: 0.9,
            treatment_shift: 0.4,
            seed: 0,
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        let unit = |name: &str, v: f64| {
            if (0.0..=1.0).contains(&v) {
                Ok(())
            } else {
                Err(Error::InvalidConfig(format!("{name} must lie in [0, 1], got {v}")))
            }
        };
        unit("confounding_rate", self.confounding_rate)?;
        unit("confounding_strength", self.confounding_strength)?;
        unit("od_prob", self.od_prob)?;
        if self.n == 0 {
            return Err(Error::InvalidConfig("n must be positive".into()));
        }
        if self.p == 0 {
            return Err(Error::InvalidConfig("p must be positive".into()));
        }
        if !self.treatment_shift.is_finite() {
            return Err(Error::InvalidConfig("treatment_shift must be finite".into()));
        }
        if self.confounding_rate > 0.0 && self.n_confounders() == 0 {
            return Err(Error::InvalidConfig(format!(
                "p * confounding_rate = {} selects no confounder",
                self.p as f64 * self.confounding_rate
            )));
        }
        Ok(())
    }

    /// `floor(p * r_c)`, tolerant of representation error (0.29 * 100 is 28.999...).
    pub fn n_confounders(&self) -> usize {
        (self.p as f64 * self.confounding_rate + 1e-9).floor() as usize
    }

    pub fn rng(&self) -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(self.seed)
    }
}

/// n×p standard normal draws, filled row by row.
pub fn gen_features<R: Rng>(cfg: &SynthConfig, rng: &mut R) -> DMatrix<f64> {
    let data: Vec<f64> = (0..cfg.n * cfg.p).map(|_| rng.sample(StandardNormal)).collect();
    DMatrix::from_row_slice(cfg.n, cfg.p, &data)
}

pub fn gen_cells<R: Rng>(cfg: &SynthConfig, rng: &mut R) -> Result<Vec<u64>> {
    let dist = Binomial::new(cfg.od_trials, cfg.od_prob)
        .map_err(|e| Error::InvalidConfig(format!("binomial cell distribution: {e}")))?;
    Ok((0..cfg.n).map(|_| dist.sample(rng)).collect())
}

/// Returns `(t_raw, T)`: the min-max normalized assignment score and the shifted treatment.
pub fn gen_treatment<R: Rng>(x: &DMatrix<f64>, cfg: &SynthConfig, rng: &mut R) -> Result<(DVector<f64>, DVector<f64>)> {
    let k = cfg.n_confounders();
    if x.ncols() < k {
        return Err(Error::InvalidConfig(format!(
            "{} confounders requested but only {} feature columns",
            k,
            x.ncols()
        )));
    }
    let score = DVector::from_fn(x.nrows(), |i, _| {
        let drive: f64 = (0..k).map(|j| cfg.confounding_strength * x[(i, j)]).sum();
        drive + rng.sample::<f64, _>(StandardNormal)
    });
    let t_raw = min_max(&score)?;
    let t = shift_treatment(&t_raw, cfg.treatment_shift);
    Ok((t_raw, t))
}

fn min_max(v: &DVector<f64>) -> Result<DVector<f64>> {
    let lo = v.min();
    let hi = v.max();
    if !(hi > lo) {
        return Err(Error::Degenerate("treatment score normalization (max equals min)".into()));
    }
    let span = hi - lo;
    Ok(v.map(|s| (s - lo) / span))
}

/// `t - shift` where `t > shift`, zero elsewhere.
pub fn shift_treatment(t_raw: &DVector<f64>, shift: f64) -> DVector<f64> {
    t_raw.map(|t| if t > shift { t - shift } else { 0.0 })
}

/// Noise-free outcome for one row; feature index `j` is 1-based, only even `j` contribute.
pub fn linear_outcome(row: &[f64], t: f64) -> f64 {
    let mut y = t;
    for (idx, &x) in row.iter().enumerate() {
        let j = idx + 1;
        if j % 2 == 0 {
            y += (j as f64 / 2.0 + t) * x;
        }
    }
    y
}

pub fn gen_outcome<R: Rng>(x: &DMatrix<f64>, t: &DVector<f64>, noise_sd: f64, rng: &mut R) -> Result<DVector<f64>> {
    if x.nrows() != t.len() {
        return Err(Error::LengthMismatch { what: "treatment".into(), got: t.len(), expected: x.nrows() });
    }
    let mut row = vec![0.0; x.ncols()];
    Ok(DVector::from_fn(x.nrows(), |i, _| {
        for (j, slot) in row.iter_mut().enumerate() {
            *slot = x[(i, j)];
        }
        let noise: f64 = rng.sample(StandardNormal);
        linear_outcome(&row, t[i]) + noise_sd * noise
    }))
}

/// 1 for the upper half of `y` by rank, 0 for the lower half (ties by row order).
pub fn median_split(y: &DVector<f64>) -> DVector<f64> {
    let n = y.len();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| y[a].total_cmp(&y[b]).then(a.cmp(&b)));
    let mut out = DVector::zeros(n);
    for &i in &order[n - n / 2..] {
        out[i] = 1.0;
    }
    out
}

/// Column name used for the median-split companion of the outcome.
pub const BINARY_OUTCOME_COLUMN: &str = "Y_bin";

/// Draws features, cells, treatment and outcome from one seeded stream.
pub fn gen_dataset(cfg: &SynthConfig) -> Result<ObservationTable> {
    cfg.validate()?;
    let mut rng = cfg.rng();
    let x = gen_features(cfg, &mut rng);
    let cells = gen_cells(cfg, &mut rng)?;
    let (_, t) = gen_treatment(&x, cfg, &mut rng)?;
    let y = gen_outcome(&x, &t, OUTCOME_NOISE_SD, &mut rng)?;
    let y_bin = median_split(&y);
    ObservationTable::new(TableParts {
        schema: Schema { binary_outcome: Some(BINARY_OUTCOME_COLUMN.into()), ..Schema::default() },
        feature_names: (1..=cfg.p).map(|j| format!("x{j}")).collect(),
        features: x,
        treatment: t,
        outcome: y,
        cell_label: cells.iter().map(u64::to_string).collect(),
        time_label: None,
        binary_outcome: Some(y_bin),
        base_weight: None,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::collections::BTreeSet;

    fn pearson(a: &[f64], b: &[f64]) -> f64 {
        let n = a.len() as f64;
        let ma = a.iter().sum::<f64>() / n;
        let mb = b.iter().sum::<f64>() / n;
        let (mut sab, mut saa, mut sbb) = (0.0, 0.0, 0.0);
        for (x, y) in a.iter().zip(b) {
            sab += (x - ma) * (y - mb);
            saa += (x - ma).powi(2);
            sbb += (y - mb).powi(2);
        }
        sab / (saa * sbb).sqrt()
    }

    fn cfg(n: usize, p: usize) -> SynthConfig {
        SynthConfig { n, p, seed: 11, ..SynthConfig::default() }
    }

    #[test]
    fn feature_moments() {
        let c = cfg(100_000, 1);
        let x = gen_features(&c, &mut c.rng());
        let mean = x.mean();
        let var = x.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (c.n as f64 - 1.0);
        assert!(mean.abs() < 0.02, "mean {mean}");
        assert!((var - 1.0).abs() < 0.03, "var {var}");
    }

    #[test]
    fn single_row_features() {
        let c = cfg(1, 5);
        let x = gen_features(&c, &mut c.rng());
        assert_eq!(x.shape(), (1, 5));
        assert!(x.iter().all(|v| v.is_finite()));
    }

    #[test]
    fn same_seed_same_features() {
        let c = cfg(50, 4);
        assert_eq!(gen_features(&c, &mut c.rng()), gen_features(&c, &mut c.rng()));
    }

    #[test]
    fn cell_support_and_mean() {
        let c = cfg(100_000, 1);
        let cells = gen_cells(&c, &mut c.rng()).unwrap();
        let distinct: BTreeSet<u64> = cells.iter().copied().collect();
        assert!((20..=32).contains(&distinct.len()), "{} labels", distinct.len());
        let mean = cells.iter().sum::<u64>() as f64 / c.n as f64;
        assert!((mean - 90.0).abs() < 0.1, "mean {mean}");
    }

    #[test]
    fn certain_cells() {
        let c = SynthConfig { od_prob: 1.0, ..cfg(100, 1) };
        let cells = gen_cells(&c, &mut c.rng()).unwrap();
        assert!(cells.iter().all(|&l| l == 100));
    }

    #[test]
    fn shift_examples() {
        let t_raw = DVector::from_vec(vec![0.0, 0.4, 0.41, 1.0]);
        let t = shift_treatment(&t_raw, 0.4);
        let expected = [0.0, 0.0, 0.01, 0.6];
        for (a, b) in t.iter().zip(expected) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn treatment_is_normalized_and_nonnegative() {
        let c = cfg(2_000, 10);
        let mut rng = c.rng();
        let x = gen_features(&c, &mut rng);
        let (t_raw, t) = gen_treatment(&x, &c, &mut rng).unwrap();
        assert_eq!(t_raw.min(), 0.0);
        assert_eq!(t_raw.max(), 1.0);
        for (r, v) in t_raw.iter().zip(t.iter()) {
            assert!(*v >= 0.0);
            assert_eq!(*v == 0.0, *r <= 0.4);
        }
    }

    #[test]
    fn no_confounding_means_no_correlation() {
        let c = SynthConfig { confounding_rate: 0.0, ..cfg(100_000, 3) };
        let mut rng = c.rng();
        let x = gen_features(&c, &mut rng);
        let (_, t) = gen_treatment(&x, &c, &mut rng).unwrap();
        for j in 0..3 {
            let r = pearson(x.column(j).as_slice(), t.as_slice());
            assert!(r.abs() < 0.02, "corr {r}");
        }
    }

    #[test]
    fn degenerate_normalization() {
        let c = cfg(1, 2);
        let mut rng = c.rng();
        let x = gen_features(&c, &mut rng);
        assert!(matches!(gen_treatment(&x, &c, &mut rng), Err(Error::Degenerate(_))));
    }

    #[test]
    fn outcome_hand_examples() {
        assert_eq!(linear_outcome(&[5.0, 2.0], 1.0), 5.0);
        assert_eq!(linear_outcome(&[5.0], 1.7), 1.7);
        let x = DMatrix::from_row_slice(1, 2, &[5.0, 2.0]);
        let y = gen_outcome(&x, &DVector::from_element(1, 1.0), 0.0, &mut cfg(1, 1).rng()).unwrap();
        assert_eq!(y[0], 5.0);
    }

    #[test]
    fn zero_treatment_outcome_matches_row_oracle() {
        let c = cfg(40, 7);
        let mut rng = c.rng();
        let x = gen_features(&c, &mut rng);
        let y = gen_outcome(&x, &DVector::zeros(40), 0.0, &mut rng).unwrap();
        for i in 0..40 {
            // x2 * 1 + x4 * 2 + x6 * 3
            let expected = x[(i, 1)] + 2.0 * x[(i, 3)] + 3.0 * x[(i, 5)];
            assert!((y[i] - expected).abs() < 1e-12);
        }
    }

    #[test]
    fn median_split_is_balanced() {
        let y = DVector::from_vec(vec![3.0, -1.0, 2.0, 8.0, 0.5, 0.1]);
        let b = median_split(&y);
        assert_eq!(b.sum(), 3.0);
        assert_eq!(b.as_slice(), &[1.0, 0.0, 1.0, 1.0, 0.0, 0.0]);
    }

    #[test]
    fn rejects_out_of_range_rates() {
        let c = SynthConfig { confounding_rate: 1.5, ..SynthConfig::default() };
        assert!(c.validate().is_err());
        let c = SynthConfig { confounding_rate: 0.005, p: 100, ..SynthConfig::default() };
        assert!(c.validate().is_err());
    }

    #[test]
    fn dataset_is_deterministic() {
        let c = cfg(500, 6);
        let a = gen_dataset(&c).unwrap();
        let b = gen_dataset(&c).unwrap();
        assert_eq!(a, b);
        let bin = a.binary_outcome().unwrap();
        assert_eq!(bin.sum(), 250.0);
    }
}
