use std::path::{Path, PathBuf};

use anyhow::Context;
use clap::Args;
use serde::{Deserialize, Serialize};
use tsebct::hexgrid::{
    flexible_partition, validate_partition, FlexiblePartition, GridInventory, HexCell, ValidationReport,
    FINEST_RESOLUTION,
};

use super::provenance;
use crate::artifact::{in_dir, write_csv, write_json};
use crate::config::RunConfig;
use crate::UsageError;

#[derive(Debug, Args)]
pub struct PartitionArgs {
    /// CSV with columns `q`, `r`, `volume` and optionally `resolution`.
    #[arg(long)]
    inventory: PathBuf,
    #[arg(long)]
    out_dir: PathBuf,
    /// Minimum share of total volume per grid.
    #[arg(long)]
    threshold: Option<f64>,
}

#[derive(Debug, Deserialize)]
struct InventoryRow {
    q: i32,
    r: i32,
    volume: u64,
    resolution: Option<u8>,
}

fn read_inventory(path: &Path) -> anyhow::Result<GridInventory> {
    let mut reader = csv::ReaderBuilder::new()
        .comment(Some(b'#'))
        .trim(csv::Trim::All)
        .from_path(path)
        .map_err(tsebct::Error::from)
        .with_context(|| format!("reading {}", path.display()))?;
    let mut cells = Vec::new();
    for (i, row) in reader.deserialize::<InventoryRow>().enumerate() {
        let row = row.map_err(tsebct::Error::from).with_context(|| format!("inventory row {}", i + 1))?;
        let cell = HexCell::at_resolution(row.q, row.r, row.resolution.unwrap_or(FINEST_RESOLUTION))?;
        cells.push((cell, row.volume));
    }
    if cells.is_empty() {
        return Err(tsebct::Error::EmptyDataset).context("inventory has no cells");
    }
    Ok(GridInventory::new(cells)?)
}

#[derive(Serialize)]
struct GridSummary {
    grid_id: usize,
    cells: usize,
    aggregate_volume: u64,
    effective_resolution: u8,
    meets_threshold: bool,
}

#[derive(Serialize)]
struct PartitionReport<'a> {
    total_volume: u64,
    #[serde(flatten)]
    validation: &'a ValidationReport,
    grids: Vec<GridSummary>,
}

fn partition_rows(part: &FlexiblePartition) -> Vec<Vec<String>> {
    let mut rows = Vec::new();
    for (id, grid) in part.grids.iter().enumerate() {
        for cell in &grid.cells {
            rows.push(vec![cell.q.to_string(), cell.r.to_string(), cell.resolution.to_string(), id.to_string()]);
        }
    }
    rows
}

pub fn run(args: PartitionArgs, mut cfg: RunConfig) -> anyhow::Result<()> {
    if let Some(t) = args.threshold {
        cfg.partition.threshold_fraction = t;
    }
    let threshold = cfg.partition.threshold_fraction;
    if !(threshold > 0.0 && threshold <= 1.0) {
        return Err(UsageError(format!("threshold must lie in (0, 1], got {threshold}")).into());
    }
    let inventory = read_inventory(&args.inventory)?;
    let part = flexible_partition(&inventory, threshold, cfg.seed)?;
    let validation = validate_partition(&part, &inventory, threshold);
    let prov = provenance(&cfg);

    write_csv(
        &in_dir(&args.out_dir, "partition.csv"),
        &prov,
        &["q", "r", "resolution", "grid_id"],
        partition_rows(&part),
    )?;
    let report = PartitionReport {
        total_volume: inventory.total_orders(),
        validation: &validation,
        grids: part
            .grids
            .iter()
            .enumerate()
            .map(|(grid_id, g)| GridSummary {
                grid_id,
                cells: g.cells.len(),
                aggregate_volume: g.aggregate_volume,
                effective_resolution: g.effective_resolution,
                meets_threshold: g.meets_threshold,
            })
            .collect(),
    };
    write_json(&in_dir(&args.out_dir, "partition_validation.json"), &prov, &report)?;
    if !validation.valid {
        anyhow::bail!("partition failed validation with {} violations", validation.violations.len());
    }
    Ok(())
}
