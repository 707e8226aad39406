use std::io::Write;
use std::path::PathBuf;

use anyhow::Context;
use clap::Args;
use serde::Serialize;
use tsebct::data::write_table;
use tsebct::evaluate::pearson;
use tsebct::synth::{gen_dataset, SynthConfig};

use super::provenance;
use crate::artifact::{create, sidecar, write_json};
use crate::config::RunConfig;
use crate::UsageError;

#[derive(Debug, Args)]
pub struct GenerateArgs {
    /// Dataset CSV to write; a `.json` summary is written next to it.
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    n: Option<usize>,
    #[arg(long)]
    p: Option<usize>,
    /// Fraction of features that drive the treatment.
    #[arg(long)]
    rc: Option<f64>,
    /// Coefficient of each confounder in the treatment.
    #[arg(long)]
    sc: Option<f64>,
}

#[derive(Debug, Serialize)]
struct GenerateSummary<'a> {
    config: &'a SynthConfig,
    n: usize,
    p: usize,
    cells: usize,
    treatment_nonzero_fraction: f64,
    confounders: usize,
    /// Mean |corr(x_j, T)| over the confounders and over the remaining features.
    mean_abs_corr_confounders: Option<f64>,
    mean_abs_corr_others: Option<f64>,
}

fn mean_abs(values: &[f64]) -> Option<f64> {
    let finite: Vec<f64> = values.iter().copied().filter(|v| v.is_finite()).collect();
    (!finite.is_empty()).then(|| finite.iter().map(|v| v.abs()).sum::<f64>() / finite.len() as f64)
}

pub fn run(args: GenerateArgs, mut cfg: RunConfig) -> anyhow::Result<()> {
    let g = &mut cfg.generate;
    g.n = args.n.unwrap_or(g.n);
    g.p = args.p.unwrap_or(g.p);
    g.confounding_rate = args.rc.unwrap_or(g.confounding_rate);
    g.confounding_strength = args.sc.unwrap_or(g.confounding_strength);
    g.seed = cfg.seed;
    g.validate().map_err(|e| UsageError(e.to_string()))?;

    let synth = cfg.generate.clone();
    let table = gen_dataset(&synth)?;
    let prov = provenance(&cfg);

    let mut out = create(&args.out)?;
    out.write_all(prov.comment_line().as_bytes())?;
    write_table(&table, &mut out).with_context(|| format!("writing {}", args.out.display()))?;
    out.flush()?;

    let t = table.treatment().as_slice();
    let corrs: Vec<f64> = (0..table.p()).map(|j| pearson(table.features().column(j).as_slice(), t)).collect();
    let k = synth.n_confounders();
    let mut cells: Vec<&String> = table.cell_label().iter().collect();
    cells.sort();
    cells.dedup();
    let summary = GenerateSummary {
        config: &synth,
        n: table.n(),
        p: table.p(),
        cells: cells.len(),
        treatment_nonzero_fraction: t.iter().filter(|&&v| v != 0.0).count() as f64 / table.n() as f64,
        confounders: k,
        mean_abs_corr_confounders: mean_abs(&corrs[..k]),
        mean_abs_corr_others: mean_abs(&corrs[k..]),
    };
    write_json(&sidecar(&args.out), &prov, &summary)?;
    log::info!("wrote {} rows to {}", table.n(), args.out.display());
    Ok(())
}
