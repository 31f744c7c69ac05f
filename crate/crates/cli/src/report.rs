//! CSV tables and the run manifest.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use rmn_core::harness::{summarize, SummaryRow, SummaryTables};
use rmn_core::{Arm, RegretRecord64};
use serde::{Deserialize, Serialize};

use crate::CliError;

pub const REGRET_FILE: &str = "regret.csv";
pub const MODEL_ERROR_FILE: &str = "model_error.csv";
pub const NOISE_VARIANCE_FILE: &str = "noise_variance.csv";
pub const C_GAMMA_FILE: &str = "c_gamma.csv";
pub const BASELINE_FILE: &str = "baseline.csv";
pub const MANIFEST_FILE: &str = "manifest.json";

pub const TABLE_FILES: [&str; 5] = [
    REGRET_FILE,
    MODEL_ERROR_FILE,
    NOISE_VARIANCE_FILE,
    C_GAMMA_FILE,
    BASELINE_FILE,
];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ArmCounts {
    pub arm: String,
    pub completed: usize,
    pub aborted: usize,
    pub fallbacks: usize,
}

/// Everything needed to reproduce a run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    /// The full configuration, rendered with the seed that was used.
    pub config_toml: String,
    pub code_version: String,
    pub master_seed: u64,
    pub workers: usize,
    pub wall_clock_seconds: f64,
    pub arms: Vec<ArmCounts>,
    pub outputs: Vec<PathBuf>,
}

impl RunManifest {
    pub fn read(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Io(format!("reading {}: {e}", path.display())))?;
        serde_json::from_str(&text)
            .map_err(|e| CliError::Config(format!("{}: {e}", path.display())))
    }
}

/// `0.95 -> "q95"`, `0.999 -> "q999"`, `0.5 -> "q50"`.
pub fn quantile_label(p: f64) -> String {
    let s = format!("{p}");
    let mut digits = s.trim_start_matches("0.").replace('.', "_");
    if digits.len() == 1 {
        digits.push('0');
    }
    format!("q{digits}")
}

fn fmt(v: f64) -> String {
    if v.is_nan() {
        "nan".to_string()
    } else {
        format!("{v:.17e}")
    }
}

fn header(key: &str, levels: &[f64]) -> String {
    let mut h = format!("{key},t,count,mean,median");
    for &p in levels {
        h.push(',');
        h.push_str(&quantile_label(p));
    }
    h.push('\n');
    h
}

fn push_rows(out: &mut String, key: &str, rows: &[SummaryRow]) {
    for row in rows {
        let s = &row.summary;
        let _ = write!(
            out,
            "{key},{},{},{},{}",
            row.t,
            s.count,
            fmt(s.mean),
            fmt(s.median)
        );
        for (_, v) in &s.quantiles {
            out.push(',');
            out.push_str(&fmt(*v));
        }
        out.push('\n');
    }
}

fn arm_table(key: &str, levels: &[f64], rows: &[(Arm, Vec<SummaryRow>)]) -> String {
    let mut out = header(key, levels);
    for (arm, rows) in rows {
        push_rows(&mut out, arm.label(), rows);
    }
    out
}

fn named_table(key: &str, levels: &[f64], rows: &[(&str, Vec<SummaryRow>)]) -> String {
    let mut out = header(key, levels);
    for (name, rows) in rows {
        push_rows(&mut out, name, rows);
    }
    out
}

/// Renders every table as `(file name, CSV text)`.
pub fn render_tables(
    record: &RegretRecord64,
    tables: &SummaryTables,
) -> Vec<(&'static str, String)> {
    let levels = &tables.levels;
    let mut baseline = String::from("t,optimal_cost\n");
    for (t, c) in record.baseline.iter().enumerate() {
        let _ = writeln!(baseline, "{t},{}", fmt(*c));
    }
    vec![
        (REGRET_FILE, arm_table("arm", levels, &tables.regret)),
        (
            MODEL_ERROR_FILE,
            named_table("quantity", levels, &tables.model_error),
        ),
        (
            NOISE_VARIANCE_FILE,
            named_table("quantity", levels, &tables.noise_variance),
        ),
        (C_GAMMA_FILE, arm_table("arm", levels, &tables.c_gamma)),
        (BASELINE_FILE, baseline),
    ]
}

pub fn arm_counts(record: &RegretRecord64) -> Vec<ArmCounts> {
    record
        .arms
        .iter()
        .map(|a| ArmCounts {
            arm: a.arm.label().to_string(),
            completed: a.sample_ids.len(),
            aborted: a.aborts.len(),
            fallbacks: a.fallbacks,
        })
        .collect()
}

/// Writes the tables and returns their paths.
pub fn emit_results(
    record: &RegretRecord64,
    levels: &[f64],
    out_dir: &Path,
) -> Result<Vec<PathBuf>, CliError> {
    let tables = summarize(record, levels).map_err(CliError::from_core)?;
    std::fs::create_dir_all(out_dir)
        .map_err(|e| CliError::Io(format!("creating {}: {e}", out_dir.display())))?;
    let mut paths = Vec::new();
    for (name, text) in render_tables(record, &tables) {
        let path = out_dir.join(name);
        std::fs::write(&path, text)
            .map_err(|e| CliError::Io(format!("writing {}: {e}", path.display())))?;
        paths.push(path);
    }
    Ok(paths)
}

pub fn write_manifest(manifest: &RunManifest, out_dir: &Path) -> Result<PathBuf, CliError> {
    let path = out_dir.join(MANIFEST_FILE);
    let text = serde_json::to_string_pretty(manifest).expect("manifest serializes");
    std::fs::write(&path, text)
        .map_err(|e| CliError::Io(format!("writing {}: {e}", path.display())))?;
    Ok(path)
}
