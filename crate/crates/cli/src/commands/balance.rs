use std::path::{Path, PathBuf};

use anyhow::Context;
use clap::{Args, ValueEnum};
use serde::Serialize;
use tsebct::balance::{solve_ebct, solve_ipw, solve_tsebct, BalanceConfig, Method, ResidualReport, WeightSolution};
use tsebct::data::{ObservationTable, StratumIndex};

use super::{load_dataset, provenance, stratify};
use crate::artifact::{in_dir, write_csv, write_json, Provenance};
use crate::config::RunConfig;
use crate::{SchemaArgs, SolverFailure};

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum MethodArg {
    Ipw,
    Ebct,
    Tsebct,
    All,
}

impl MethodArg {
    fn methods(self) -> Vec<Method> {
        match self {
            MethodArg::Ipw => vec![Method::Ipw],
            MethodArg::Ebct => vec![Method::Ebct],
            MethodArg::Tsebct => vec![Method::Tsebct],
            MethodArg::All => Method::ALL.to_vec(),
        }
    }
}

#[derive(Debug, Args)]
pub struct BalanceArgs {
    #[arg(long)]
    data: PathBuf,
    #[arg(long, value_enum, default_value = "all")]
    method: MethodArg,
    #[arg(long)]
    out_dir: PathBuf,
    /// Cumulative explained-variance ratio kept by PCA.
    #[arg(long)]
    pca_threshold: Option<f64>,
    /// Number of treatment moments to balance.
    #[arg(long)]
    degree: Option<usize>,
    #[arg(long)]
    learning_rate: Option<f64>,
    #[arg(long)]
    tolerance: Option<f64>,
    #[arg(long)]
    max_iter: Option<usize>,
    /// Halve the Newton step until the dual objective decreases.
    #[arg(long)]
    backtracking: bool,
    #[command(flatten)]
    schema: SchemaArgs,
}

#[derive(Debug, Serialize)]
struct SolveReport<'a> {
    method: Method,
    converged: bool,
    iterations: usize,
    final_loss: Option<f64>,
    strata: usize,
    dropped_rows: &'a [usize],
    residuals: Option<&'a ResidualReport>,
    weight_sum: f64,
    min_weight: f64,
    effective_sample_size: f64,
}

fn apply_flags(args: &BalanceArgs, cfg: &mut RunConfig) {
    args.schema.apply(cfg);
    let b = &mut cfg.balance;
    b.pca_threshold = args.pca_threshold.unwrap_or(b.pca_threshold);
    b.treatment_degree = args.degree.unwrap_or(b.treatment_degree);
    b.solver.learning_rate = args.learning_rate.unwrap_or(b.solver.learning_rate);
    b.solver.tolerance = args.tolerance.unwrap_or(b.solver.tolerance);
    b.solver.max_iterations = args.max_iter.unwrap_or(b.solver.max_iterations);
    b.solver.backtracking |= args.backtracking;
}

fn solve(
    method: Method,
    table: &ObservationTable,
    idx: &StratumIndex,
    cfg: &BalanceConfig,
) -> tsebct::Result<WeightSolution> {
    match method {
        Method::Ipw => solve_ipw(table),
        Method::Ebct => solve_ebct(table, cfg),
        Method::Tsebct => solve_tsebct(table, idx, cfg),
    }
}

fn write_solution(
    dir: &Path,
    prov: &Provenance,
    method: Method,
    sol: &WeightSolution,
    strata: usize,
) -> anyhow::Result<()> {
    let weights = sol.weights.iter().enumerate().map(|(i, w)| vec![i.to_string(), w.to_string()]);
    write_csv(&in_dir(dir, &format!("weights_{method}.csv")), prov, &["row_id", "weight"], weights)?;
    let trace = sol
        .loss_trace
        .iter()
        .zip(&sol.objective_trace)
        .enumerate()
        .map(|(i, (loss, obj))| vec![i.to_string(), loss.to_string(), obj.to_string()]);
    write_csv(&in_dir(dir, &format!("trace_{method}.csv")), prov, &["iteration", "loss", "objective"], trace)?;
    let report = SolveReport {
        method,
        converged: sol.converged,
        iterations: sol.iterations,
        final_loss: sol.loss_trace.last().copied(),
        strata,
        dropped_rows: &sol.dropped_rows,
        residuals: sol.residuals.as_ref(),
        weight_sum: sol.weights.sum(),
        min_weight: sol.weights.min(),
        effective_sample_size: 1.0 / sol.weights.norm_squared(),
    };
    write_json(&in_dir(dir, &format!("report_{method}.json")), prov, &report)
}

pub fn run(args: BalanceArgs, mut cfg: RunConfig) -> anyhow::Result<()> {
    apply_flags(&args, &mut cfg);
    cfg.validate()?;
    let prov = provenance(&cfg);
    let table = load_dataset(&args.data, &cfg)?;
    let (table, idx) = stratify(table, &cfg)?;
    let balance_cfg = cfg.balance.to_config();
    let methods = args.method.methods();

    // independent solves over the shared table
    let results: Vec<(Method, tsebct::Result<WeightSolution>)> = std::thread::scope(|scope| {
        let handles: Vec<_> = methods
            .iter()
            .map(|&m| {
                let (table, idx, balance_cfg) = (&table, &idx, &balance_cfg);
                (m, scope.spawn(move || solve(m, table, idx, balance_cfg)))
            })
            .collect();
        handles.into_iter().map(|(m, h)| (m, h.join().expect("solver thread panicked"))).collect()
    });

    let mut unconverged = Vec::new();
    for (method, result) in results {
        let sol = result.with_context(|| format!("{method} solve"))?;
        write_solution(&args.out_dir, &prov, method, &sol, idx.len())?;
        if !sol.converged {
            unconverged.push(method.to_string());
        }
    }
    if !unconverged.is_empty() {
        return Err(SolverFailure(format!("did not converge: {}", unconverged.join(", "))).into());
    }
    Ok(())
}
