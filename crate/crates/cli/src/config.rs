//! Run configuration: one TOML file, every field optional, flags applied on top.

use std::path::Path;

use anyhow::Context;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use tsebct::balance::{BalanceConfig, SolverConfig};
use tsebct::data::Schema;
use tsebct::evaluate::SLearnerSpec;
use tsebct::hexgrid::DEFAULT_THRESHOLD_FRACTION;
use tsebct::preprocess::{DesignOptions, DEFAULT_PCA_THRESHOLD};
use tsebct::synth::{SynthConfig, BINARY_OUTCOME_COLUMN};

use crate::UsageError;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SchemaSection {
    pub treatment: String,
    pub outcome: String,
    pub cell: String,
    pub time: Option<String>,
    /// Dropped silently when the column is absent from the file.
    pub binary_outcome: Option<String>,
    pub base_weight: Option<String>,
}

impl Default for SchemaSection {
    fn default() -> Self {
        let base = Schema::default();
        Self {
            treatment: base.treatment,
            outcome: base.outcome,
            cell: base.cell,
            time: None,
            binary_outcome: Some(BINARY_OUTCOME_COLUMN.into()),
            base_weight: None,
        }
    }
}

impl SchemaSection {
    pub fn to_schema(&self) -> Schema {
        Schema {
            treatment: self.treatment.clone(),
            outcome: self.outcome.clone(),
            cell: self.cell.clone(),
            time: self.time.clone(),
            binary_outcome: self.binary_outcome.clone(),
            base_weight: self.base_weight.clone(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct StrataSection {
    /// Cells with fewer rows than this fraction of the dataset are merged with
    /// neighbouring cell labels; 0 disables merging.
    pub min_fraction: f64,
}

impl Default for StrataSection {
    fn default() -> Self {
        Self { min_fraction: 0.10 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PartitionSection {
    pub threshold_fraction: f64,
}

impl Default for PartitionSection {
    fn default() -> Self {
        Self { threshold_fraction: DEFAULT_THRESHOLD_FRACTION }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BalanceSection {
    pub pca_threshold: f64,
    pub treatment_degree: usize,
    pub interact_all_moments: bool,
    pub rank_tolerance: f64,
    pub solver: SolverConfig,
}

impl Default for BalanceSection {
    fn default() -> Self {
        let base = BalanceConfig::default();
        Self {
            pca_threshold: DEFAULT_PCA_THRESHOLD,
            treatment_degree: base.treatment_degree,
            interact_all_moments: base.design.interact_all_moments,
            rank_tolerance: base.rank_tolerance,
            solver: base.solver,
        }
    }
}

impl BalanceSection {
    pub fn to_config(&self) -> BalanceConfig {
        BalanceConfig {
            pca_threshold: self.pca_threshold,
            treatment_degree: self.treatment_degree,
            design: DesignOptions { interact_all_moments: self.interact_all_moments },
            solver: self.solver,
            rank_tolerance: self.rank_tolerance,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub seed: u64,
    pub schema: SchemaSection,
    pub strata: StrataSection,
    pub generate: SynthConfig,
    pub partition: PartitionSection,
    pub balance: BalanceSection,
    pub evaluate: SLearnerSpec,
}

impl RunConfig {
    pub fn load(path: Option<&Path>) -> anyhow::Result<Self> {
        let Some(path) = path else {
            return Ok(Self::default());
        };
        let text = std::fs::read_to_string(path).with_context(|| format!("reading config {}", path.display()))?;
        toml::from_str(&text).map_err(|e| UsageError(format!("config {}: {e}", path.display())).into())
    }

    /// Hex SHA-256 of the effective configuration.
    pub fn hash(&self) -> String {
        let bytes = serde_json::to_vec(self).expect("config serializes");
        hex::encode(Sha256::digest(&bytes))
    }

    pub fn validate(&self) -> anyhow::Result<()> {
        let frac = self.strata.min_fraction;
        if !(0.0..1.0).contains(&frac) {
            return Err(UsageError(format!("strata.min_fraction must lie in [0, 1), got {frac}")).into());
        }
        if !(self.balance.pca_threshold > 0.0 && self.balance.pca_threshold <= 1.0) {
            return Err(
                UsageError(format!("pca threshold must lie in (0, 1], got {}", self.balance.pca_threshold)).into()
            );
        }
        self.balance.solver.validate()?;
        Ok(())
    }
}
