//! Sample weights for causal effect estimation with a continuous treatment.
//!
//! The crate computes entropy balancing weights that decorrelate covariates
//! from a continuous treatment, either over the whole sample or jointly inside
//! every temporal-spatial stratum. Around the solver it provides:
//!
//! - [`data`]: the observation table, stratum index and CSV ingestion;
//! - [`synth`]: a seeded generator of confounded benchmark data;
//! - [`hexgrid`]: volume-driven aggregation of hexagonal cells into connected groups;
//! - [`preprocess`]: standardization, PCA, treatment moments and the block constraint design;
//! - [`balance`]: the dual Newton solver plus the global and inverse-propensity baselines;
//! - [`evaluate`]: weighted correlations, an S-learner, AUUC and AUC.

// `!(x > 0.0)` style guards are deliberate: they reject NaN along with the out-of-range values.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod balance;
pub mod data;
pub mod error;
pub mod evaluate;
pub mod hexgrid;
pub mod preprocess;
pub mod synth;

pub use error::{Error, Result};
