use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use anyhow::Context;
use clap::{Args, ValueEnum};
use nalgebra::DVector;
use serde::{Deserialize, Serialize};
use tsebct::evaluate::{correlation_report, uplift_metrics, CorrelationReport, LearnerKind, MetricsReport};

use super::{load_dataset, provenance, stratify};
use crate::artifact::{in_dir, write_csv, write_json};
use crate::config::RunConfig;
use crate::{SchemaArgs, UsageError};

/// Column order used by every comparison table; unknown labels follow in input order.
const CANONICAL_ORDER: [&str; 4] = ["unweighted", "ipw", "ebct", "tsebct"];
const UNWEIGHTED: &str = "unweighted";

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum LearnerArg {
    Linear,
    Logistic,
}

#[derive(Debug, Args)]
pub struct EvaluateArgs {
    #[arg(long)]
    data: PathBuf,
    /// `label=path`, a `weights_<label>.csv` path, or `unweighted`. Repeatable.
    #[arg(long = "weights", required = true)]
    weights: Vec<String>,
    #[arg(long)]
    out_dir: PathBuf,
    /// Row label in the comparison tables; defaults to the data file stem.
    #[arg(long)]
    dataset_label: Option<String>,
    #[arg(long, value_enum)]
    learner: Option<LearnerArg>,
    /// Fit the continuous outcome instead of the binary one.
    #[arg(long)]
    continuous_outcome: bool,
    #[arg(long)]
    no_interactions: bool,
    #[arg(long)]
    penalty: Option<f64>,
    #[command(flatten)]
    schema: SchemaArgs,
}

#[derive(Debug, Args)]
pub struct ReportArgs {
    /// `evaluation.json` files written by `evaluate`.
    #[arg(long, required = true, num_args = 1..)]
    inputs: Vec<PathBuf>,
    #[arg(long)]
    out_dir: PathBuf,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct MethodEvaluation {
    method: String,
    correlation: CorrelationReport,
    metrics: Option<MetricsReport>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct Evaluation {
    dataset: String,
    rows: usize,
    strata: usize,
    methods: Vec<MethodEvaluation>,
}

#[derive(Debug, Clone, PartialEq)]
struct WeightSource {
    label: String,
    path: Option<PathBuf>,
}

fn parse_source(spec: &str) -> anyhow::Result<WeightSource> {
    if spec == UNWEIGHTED {
        return Ok(WeightSource { label: UNWEIGHTED.into(), path: None });
    }
    if let Some((label, path)) = spec.split_once('=') {
        if label.is_empty() || path.is_empty() {
            return Err(UsageError(format!("--weights {spec:?}: expected label=path")).into());
        }
        return Ok(WeightSource { label: label.into(), path: Some(path.into()) });
    }
    let path = PathBuf::from(spec);
    let stem = path.file_stem().and_then(|s| s.to_str()).unwrap_or(spec);
    let label = stem.strip_prefix("weights_").unwrap_or(stem).to_string();
    Ok(WeightSource { label, path: Some(path) })
}

#[derive(Deserialize)]
struct WeightRow {
    #[allow(dead_code)]
    row_id: usize,
    weight: f64,
}

fn read_weights(path: &Path, expected: usize) -> anyhow::Result<DVector<f64>> {
    let mut reader = csv::ReaderBuilder::new()
        .comment(Some(b'#'))
        .trim(csv::Trim::All)
        .from_path(path)
        .map_err(tsebct::Error::from)
        .with_context(|| format!("reading {}", path.display()))?;
    let mut values = Vec::new();
    for (line, row) in reader.deserialize::<WeightRow>().enumerate() {
        let row =
            row.map_err(tsebct::Error::from).with_context(|| format!("{} record {}", path.display(), line + 1))?;
        values.push(row.weight);
    }
    if values.len() != expected {
        return Err(tsebct::Error::LengthMismatch { what: "weights".into(), got: values.len(), expected })
            .with_context(|| {
                format!("{} has {} weights but the dataset has {} rows", path.display(), values.len(), expected)
            });
    }
    Ok(DVector::from_vec(values))
}

fn canonical_rank(label: &str) -> usize {
    CANONICAL_ORDER.iter().position(|m| *m == label).unwrap_or(CANONICAL_ORDER.len())
}

/// Canonical methods first, then the rest in order of first appearance.
fn method_columns<'a>(labels: impl IntoIterator<Item = &'a str>) -> Vec<String> {
    let mut seen: Vec<String> = Vec::new();
    for label in labels {
        if !seen.iter().any(|s| s == label) {
            seen.push(label.to_string());
        }
    }
    let mut indexed: Vec<(usize, String)> = seen.into_iter().enumerate().collect();
    indexed.sort_by_key(|(i, l)| (canonical_rank(l), *i));
    indexed.into_iter().map(|(_, l)| l).collect()
}

fn fmt_value(v: Option<f64>) -> String {
    v.map(|x| format!("{x:.6}")).unwrap_or_default()
}

fn lookup<'a>(e: &'a Evaluation, method: &str) -> Option<&'a MethodEvaluation> {
    e.methods.iter().find(|m| m.method == method)
}

fn write_tables(out_dir: &Path, prov: &crate::artifact::Provenance, evaluations: &[Evaluation]) -> anyhow::Result<()> {
    let columns = method_columns(evaluations.iter().flat_map(|e| e.methods.iter().map(|m| m.method.as_str())));

    let mut header = vec!["dataset"];
    header.extend(columns.iter().map(String::as_str));
    let corr_rows: Vec<Vec<String>> = evaluations
        .iter()
        .map(|e| {
            let mut row = vec![e.dataset.clone()];
            row.extend(
                columns.iter().map(|c| fmt_value(lookup(e, c).map(|m| m.correlation.global.average_absolute_weighted))),
            );
            row
        })
        .collect();
    write_csv(&in_dir(out_dir, "table3.csv"), prov, &header, corr_rows)?;

    let mut header = vec!["dataset", "metric"];
    header.extend(columns.iter().map(String::as_str));
    let mut metric_rows = Vec::new();
    for e in evaluations {
        for (metric, pick) in [("auuc", (|m: &MetricsReport| m.auuc) as fn(&MetricsReport) -> f64), ("auc", |m| m.auc)]
        {
            let mut row = vec![e.dataset.clone(), metric.to_string()];
            row.extend(columns.iter().map(|c| fmt_value(lookup(e, c).and_then(|m| m.metrics.as_ref()).map(pick))));
            metric_rows.push(row);
        }
    }
    write_csv(&in_dir(out_dir, "table4.csv"), prov, &header, metric_rows)
}

pub fn run(args: EvaluateArgs, mut cfg: RunConfig) -> anyhow::Result<()> {
    args.schema.apply(&mut cfg);
    let spec = &mut cfg.evaluate;
    if let Some(learner) = args.learner {
        spec.learner = match learner {
            LearnerArg::Linear => LearnerKind::RidgeLinear,
            LearnerArg::Logistic => LearnerKind::LogisticIrls,
        };
    }
    spec.binary_outcome &= !args.continuous_outcome;
    spec.interactions &= !args.no_interactions;
    spec.penalty = args.penalty.unwrap_or(spec.penalty);
    cfg.validate()?;
    if !(cfg.evaluate.penalty >= 0.0 && cfg.evaluate.penalty.is_finite()) {
        return Err(UsageError(format!("penalty must be finite and non-negative, got {}", cfg.evaluate.penalty)).into());
    }

    let prov = provenance(&cfg);
    let sources = args.weights.iter().map(|s| parse_source(s)).collect::<anyhow::Result<Vec<_>>>()?;
    let table = load_dataset(&args.data, &cfg)?;
    let (table, idx) = stratify(table, &cfg)?;
    let n = table.n();
    let has_labels = table.binary_outcome().is_some() || !cfg.evaluate.binary_outcome;
    if !has_labels {
        log::warn!("no binary outcome column; skipping AUUC and AUC");
    }

    let mut methods = Vec::with_capacity(sources.len());
    for source in &sources {
        let weights = match &source.path {
            Some(path) => read_weights(path, n)?,
            None => DVector::from_element(n, 1.0 / n as f64),
        };
        let correlation = correlation_report(&table, &weights, Some(&idx))?;
        let metrics = if has_labels {
            Some(
                uplift_metrics(&table, &weights, &cfg.evaluate, &source.label)
                    .with_context(|| format!("{} uplift model", source.label))?,
            )
        } else {
            None
        };
        methods.push(MethodEvaluation { method: source.label.clone(), correlation, metrics });
    }

    let dataset = args
        .dataset_label
        .clone()
        .or_else(|| args.data.file_stem().and_then(|s| s.to_str()).map(str::to_string))
        .unwrap_or_else(|| "dataset".into());
    let evaluation = Evaluation { dataset, rows: n, strata: idx.len(), methods };
    write_json(&in_dir(&args.out_dir, "evaluation.json"), &prov, &evaluation)?;
    write_tables(&args.out_dir, &prov, std::slice::from_ref(&evaluation))
}

pub fn report(args: ReportArgs, cfg: RunConfig) -> anyhow::Result<()> {
    let prov = provenance(&cfg);
    let mut evaluations = Vec::with_capacity(args.inputs.len());
    for path in &args.inputs {
        let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
        let evaluation: Evaluation =
            serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))?;
        evaluations.push(evaluation);
    }
    let columns = method_columns(evaluations.iter().flat_map(|e| e.methods.iter().map(|m| m.method.as_str())));
    let summary: BTreeMap<&str, Vec<&str>> = evaluations
        .iter()
        .map(|e| (e.dataset.as_str(), e.methods.iter().map(|m| m.method.as_str()).collect()))
        .collect();
    #[derive(Serialize)]
    struct Summary<'a> {
        methods: &'a [String],
        datasets: BTreeMap<&'a str, Vec<&'a str>>,
    }
    write_json(&in_dir(&args.out_dir, "report.json"), &prov, &Summary { methods: &columns, datasets: summary })?;
    write_tables(&args.out_dir, &prov, &evaluations)
}
