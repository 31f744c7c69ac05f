//! Command-line front end: config parsing, result tables and the
//! `run`, `solve` and `bootstrap` commands.

// `!(x > 0)` style checks are deliberate: they also reject NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod config;
pub mod report;

use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::Instant;

use rmn_core::bootstrap::{bootstrap_model_variance, UncertaintyEstimate};
use rmn_core::harness::run_experiment;
use rmn_core::riccati::design_with_bisection;
use rmn_core::sysid::least_squares_estimate;
use rmn_core::{Error, Matrix64, RegretRecord64, TrajectoryData64};
use serde::Deserialize;
use thiserror::Error as ThisError;

use crate::config::{parse_config, render_config};
use crate::report::{arm_counts, emit_results, write_manifest, RunManifest};

#[derive(Debug, ThisError)]
pub enum CliError {
    #[error("config error: {0}")]
    Config(String),
    #[error("numerical failure: {0}")]
    Numerical(String),
    #[error("i/o error: {0}")]
    Io(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => 1,
            CliError::Numerical(_) => 2,
            CliError::Io(_) => 3,
        }
    }

    pub fn from_core(e: Error) -> Self {
        match e {
            Error::Dimension(_)
            | Error::InvalidParameter(_)
            | Error::NotSymmetric { .. }
            | Error::NotPositiveSemidefinite { .. } => CliError::Config(e.to_string()),
            _ => CliError::Numerical(e.to_string()),
        }
    }
}

/// Result of [`run`]: the raw record plus the manifest that was written.
#[derive(Debug, Clone)]
pub struct RunOutput {
    pub record: RegretRecord64,
    pub manifest: RunManifest,
}

pub fn run(
    config: &Path,
    seed: u64,
    out: &Path,
    workers: Option<usize>,
) -> Result<RunOutput, CliError> {
    let mut cfg = parse_config(config)?.experiment;
    cfg.master_seed = seed;
    let workers = workers.unwrap_or_else(rayon::current_num_threads);
    if workers == 0 {
        return Err(CliError::Config("--workers must be at least 1".into()));
    }
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(workers)
        .build()
        .map_err(|e| CliError::Io(format!("thread pool: {e}")))?;

    let start = Instant::now();
    let record = pool
        .install(|| run_experiment(&cfg))
        .map_err(CliError::from_core)?;
    let outputs = emit_results(&record, &cfg.quantiles, out)?;
    let manifest = RunManifest {
        config_toml: render_config(&cfg, seed),
        code_version: env!("CARGO_PKG_VERSION").to_string(),
        master_seed: seed,
        workers,
        wall_clock_seconds: start.elapsed().as_secs_f64(),
        arms: arm_counts(&record),
        outputs,
    };
    write_manifest(&manifest, out)?;
    Ok(RunOutput { record, manifest })
}

fn format_matrix(m: &Matrix64) -> String {
    let rows: Vec<String> = m
        .row_iter()
        .map(|r| {
            let cells: Vec<String> = r.iter().map(|v| format!("{v:.12e}")).collect();
            format!("[{}]", cells.join(", "))
        })
        .collect();
    format!("[{}]", rows.join(", "))
}

/// Solves the robust design for the config's plant and `[uncertainty]`
/// section (zero uncertainty when absent) and writes `P`, `K`, `c_gamma`.
pub fn solve(config: &Path, out: &mut dyn Write) -> Result<(), CliError> {
    let parsed = parse_config(config)?;
    let cfg = &parsed.experiment;
    let (n, m) = (cfg.plant.state_dim(), cfg.plant.input_dim());
    let uncertainty = parsed
        .uncertainty
        .unwrap_or_else(|| UncertaintyEstimate::zeros(n, m));
    let c = &cfg.controller;
    let design = design_with_bisection(
        &cfg.plant.a,
        &cfg.plant.b,
        &c.q,
        &c.r,
        &uncertainty,
        c.gamma,
        c.epsilon,
    )
    .map_err(CliError::from_core)?;
    let io = |e: std::io::Error| CliError::Io(e.to_string());
    writeln!(out, "P = {}", format_matrix(&design.solution.p)).map_err(io)?;
    writeln!(out, "K = {}", format_matrix(&design.solution.k)).map_err(io)?;
    writeln!(out, "c_gamma = {}", design.c_gamma).map_err(io)?;
    Ok(())
}

/// A recorded trajectory: `states` has one more row than `inputs`.
#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrajectoryFile {
    pub states: Vec<Vec<f64>>,
    pub inputs: Vec<Vec<f64>>,
}

pub fn read_trajectory(path: &Path) -> Result<TrajectoryData64, CliError> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| CliError::Io(format!("reading {}: {e}", path.display())))?;
    let file: TrajectoryFile = serde_json::from_str(&text)
        .map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
    TrajectoryData64::from_rows(&file.states, &file.inputs).map_err(CliError::from_core)
}

/// Fits the trajectory, bootstraps the estimate and writes both traces.
pub fn bootstrap(
    trajectory: &Path,
    resamples: usize,
    seed: u64,
    out: &mut dyn Write,
) -> Result<(), CliError> {
    let data = read_trajectory(trajectory)?;
    if resamples < 2 {
        return Err(CliError::Config(format!(
            "--resamples must be at least 2, got {resamples}"
        )));
    }
    let model = least_squares_estimate(&data).map_err(CliError::from_core)?;
    let sigma =
        bootstrap_model_variance(&data, &model, resamples, seed).map_err(CliError::from_core)?;
    let io = |e: std::io::Error| CliError::Io(e.to_string());
    writeln!(out, "A_hat = {}", format_matrix(&model.a)).map_err(io)?;
    writeln!(out, "B_hat = {}", format_matrix(&model.b)).map_err(io)?;
    writeln!(out, "trace_sigma_a = {:.12e}", sigma.trace_a()).map_err(io)?;
    writeln!(out, "trace_sigma_b = {:.12e}", sigma.trace_b()).map_err(io)?;
    Ok(())
}

/// Output paths in a run directory, in the order they are written.
pub fn table_paths(out: &Path) -> Vec<PathBuf> {
    report::TABLE_FILES.iter().map(|f| out.join(f)).collect()
}
