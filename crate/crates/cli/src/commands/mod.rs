pub mod balance;
pub mod evaluate;
pub mod generate;
pub mod partition;

use std::path::Path;

use anyhow::Context;
use tsebct::data::{build_stratum_index, load_table, merge_sparse_cells, ObservationTable, StratumIndex};

use crate::artifact::Provenance;
use crate::config::RunConfig;

pub(crate) fn provenance(cfg: &RunConfig) -> Provenance {
    Provenance { config_hash: cfg.hash(), seed: cfg.seed }
}

fn header(path: &Path) -> anyhow::Result<Vec<String>> {
    let mut reader = csv::ReaderBuilder::new()
        .comment(Some(b'#'))
        .trim(csv::Trim::All)
        .from_path(path)
        .map_err(tsebct::Error::from)
        .with_context(|| format!("reading {}", path.display()))?;
    Ok(reader.headers().map_err(tsebct::Error::from)?.iter().map(str::to_string).collect())
}

/// Loads a dataset, ignoring a configured binary outcome column the file lacks.
pub(crate) fn load_dataset(path: &Path, cfg: &RunConfig) -> anyhow::Result<ObservationTable> {
    let mut schema = cfg.schema.to_schema();
    let columns = header(path)?;
    if schema.binary_outcome.as_ref().is_some_and(|b| !columns.contains(b)) {
        schema.binary_outcome = None;
    }
    load_table(path, &schema).with_context(|| format!("loading {}", path.display()))
}

/// Merges sparse cells (when configured) and indexes the strata.
pub(crate) fn stratify(table: ObservationTable, cfg: &RunConfig) -> anyhow::Result<(ObservationTable, StratumIndex)> {
    let table = if cfg.strata.min_fraction > 0.0 {
        let min_rows = (cfg.strata.min_fraction * table.n() as f64).ceil() as usize;
        let merged = merge_sparse_cells(table.cell_label(), min_rows.max(2));
        table.with_cell_labels(merged)?
    } else {
        table
    };
    let idx = build_stratum_index(&table).context("indexing strata (see --min-stratum-fraction)")?;
    Ok((table, idx))
}
