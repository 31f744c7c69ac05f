//! Experiment configuration files.
//!
//! A config is a single TOML document. Matrices are written as nested arrays
//! of rows, e.g. `a = [[1.0, 0.1], [0.0, 1.0]]`.
//!
//! ```toml
//! samples = 2000
//! quantiles = [0.5, 0.95, 0.99, 0.999]
//! arms = ["ce", "rmn"]
//!
//! [plant]
//! a = [[1.0]]
//! b = [[1.0]]
//! w = [[1.0]]
//!
//! [controller]
//! q = [[1.0]]
//! r = [[0.0]]
//! t_explore = 5
//! horizon = 200
//! bootstrap_resamples = 100
//! gamma = 1.0
//! epsilon = 0.01
//! ```

use rmn_core::adaptive::NoiseScaleRule;
use rmn_core::harness::DEFAULT_QUANTILES;
use rmn_core::linalg::check_symmetric_psd;
use rmn_core::{
    Arm, ControllerConfig64, ExperimentConfig64, LinearSystemModel64, Matrix64,
    UncertaintyEstimate64,
};
use serde::{Deserialize, Serialize};

use crate::CliError;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RawConfig {
    pub samples: Option<i64>,
    pub quantiles: Option<Vec<f64>>,
    pub arms: Option<Vec<String>>,
    pub seed: Option<u64>,
    pub plant: RawPlant,
    pub controller: RawController,
    pub uncertainty: Option<RawUncertainty>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RawPlant {
    pub a: Vec<Vec<f64>>,
    pub b: Vec<Vec<f64>>,
    pub w: Vec<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RawController {
    pub q: Vec<Vec<f64>>,
    pub r: Vec<Vec<f64>>,
    pub t_explore: i64,
    pub horizon: i64,
    pub bootstrap_resamples: i64,
    pub gamma: f64,
    pub epsilon: f64,
    pub input_cov: Option<Vec<Vec<f64>>>,
    pub x0_cov: Option<Vec<Vec<f64>>>,
    pub noise_scale: Option<String>,
    pub center_residuals: Option<bool>,
}

/// Optional `Σ_A`, `Σ_B` for the one-shot `solve` command.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RawUncertainty {
    pub sigma_a: Vec<Vec<f64>>,
    pub sigma_b: Vec<Vec<f64>>,
}

/// A validated config plus the optional `solve` uncertainty and file seed.
#[derive(Debug, Clone, PartialEq)]
pub struct ParsedConfig {
    pub experiment: ExperimentConfig64,
    pub uncertainty: Option<UncertaintyEstimate64>,
    pub seed: Option<u64>,
}

fn field_err(field: &str, reason: impl std::fmt::Display) -> CliError {
    CliError::Config(format!("field `{field}`: {reason}"))
}

fn matrix(rows: &[Vec<f64>], field: &str) -> Result<Matrix64, CliError> {
    let r = rows.len();
    let c = rows.first().map_or(0, Vec::len);
    if r == 0 || c == 0 {
        return Err(field_err(field, "matrix must be non-empty"));
    }
    if rows.iter().any(|row| row.len() != c) {
        return Err(field_err(field, "rows have different lengths"));
    }
    if rows.iter().flatten().any(|v| !v.is_finite()) {
        return Err(field_err(field, "entries must be finite"));
    }
    let flat: Vec<f64> = rows.iter().flatten().copied().collect();
    Ok(Matrix64::from_row_slice(r, c, &flat))
}

fn covariance(rows: &[Vec<f64>], field: &str, dim: usize) -> Result<Matrix64, CliError> {
    let m = matrix(rows, field)?;
    if m.shape() != (dim, dim) {
        return Err(field_err(
            field,
            format!("expected {dim}x{dim}, got {}x{}", m.nrows(), m.ncols()),
        ));
    }
    check_symmetric_psd(&m, field, 1e-10, 1e-10).map_err(|e| field_err(field, e))?;
    Ok(m)
}

fn positive(value: i64, field: &str) -> Result<usize, CliError> {
    if value < 1 {
        return Err(field_err(
            field,
            format!("must be a positive integer, got {value}"),
        ));
    }
    Ok(value as usize)
}

fn to_matrix_rows(m: &Matrix64) -> Vec<Vec<f64>> {
    m.row_iter().map(|r| r.iter().copied().collect()).collect()
}

impl RawConfig {
    pub fn validate(&self) -> Result<ParsedConfig, CliError> {
        let a = matrix(&self.plant.a, "plant.a")?;
        if !a.is_square() {
            return Err(field_err("plant.a", "must be square"));
        }
        let n = a.nrows();
        let b = matrix(&self.plant.b, "plant.b")?;
        if b.nrows() != n {
            return Err(field_err("plant.b", format!("must have {n} rows")));
        }
        let m = b.ncols();
        let w = covariance(&self.plant.w, "plant.w", n)?;
        let plant = LinearSystemModel64::new(a, b, w).map_err(|e| field_err("plant", e))?;

        let c = &self.controller;
        let q = covariance(&c.q, "controller.q", n)?;
        let r = covariance(&c.r, "controller.r", m)?;
        let mut ctrl = ControllerConfig64::new(q, r);
        ctrl.t_explore = positive(c.t_explore, "controller.t_explore")?;
        if ctrl.t_explore <= n + m {
            return Err(field_err(
                "controller.t_explore",
                format!("must exceed n + m = {}, got {}", n + m, ctrl.t_explore),
            ));
        }
        ctrl.horizon = positive(c.horizon, "controller.horizon")?;
        if ctrl.horizon <= ctrl.t_explore {
            return Err(field_err("controller.horizon", "must exceed t_explore"));
        }
        ctrl.bootstrap_resamples =
            positive(c.bootstrap_resamples, "controller.bootstrap_resamples")?;
        if ctrl.bootstrap_resamples < 2 {
            return Err(field_err(
                "controller.bootstrap_resamples",
                "must be at least 2",
            ));
        }
        if !(c.gamma >= 0.0) || !c.gamma.is_finite() {
            return Err(field_err(
                "controller.gamma",
                "must be finite and nonnegative",
            ));
        }
        ctrl.gamma = c.gamma;
        if !(c.epsilon > 0.0 && c.epsilon < 1.0) {
            return Err(field_err("controller.epsilon", "must lie in (0, 1)"));
        }
        ctrl.epsilon = c.epsilon;
        if let Some(u) = &c.input_cov {
            ctrl.input_cov = covariance(u, "controller.input_cov", m)?;
        }
        if let Some(x0) = &c.x0_cov {
            ctrl.x0_cov = covariance(x0, "controller.x0_cov", n)?;
        }
        ctrl.noise_scale = match c.noise_scale.as_deref() {
            None | Some("max_spectral_norm") => NoiseScaleRule::MaxSpectralNorm,
            Some("trace_sum") => NoiseScaleRule::TraceSum,
            Some(other) => {
                return Err(field_err(
                    "controller.noise_scale",
                    format!("unknown rule `{other}` (expected max_spectral_norm or trace_sum)"),
                ))
            }
        };
        ctrl.center_residuals = c.center_residuals.unwrap_or(false);

        let samples = positive(self.samples.unwrap_or(2000), "samples")?;
        let quantiles = self
            .quantiles
            .clone()
            .unwrap_or_else(|| DEFAULT_QUANTILES.to_vec());
        if quantiles.is_empty() || quantiles.iter().any(|p| !(*p > 0.0 && *p < 1.0)) {
            return Err(field_err("quantiles", "levels must lie in (0, 1)"));
        }
        let arms = match &self.arms {
            None => vec![Arm::CertaintyEquivalent, Arm::Robust],
            Some(list) => list
                .iter()
                .map(|s| {
                    Arm::parse(s).ok_or_else(|| field_err("arms", format!("unknown arm `{s}`")))
                })
                .collect::<Result<Vec<_>, _>>()?,
        };

        let mut experiment = ExperimentConfig64::new(plant, ctrl, samples, self.seed.unwrap_or(0));
        experiment.quantiles = quantiles;
        experiment.arms = arms;
        experiment
            .validate()
            .map_err(|e| CliError::Config(e.to_string()))?;

        let uncertainty = match &self.uncertainty {
            None => None,
            Some(u) => {
                let sa = covariance(&u.sigma_a, "uncertainty.sigma_a", n * n)?;
                let sb = covariance(&u.sigma_b, "uncertainty.sigma_b", n * m)?;
                Some(UncertaintyEstimate64::new(sa, sb).map_err(|e| field_err("uncertainty", e))?)
            }
        };
        Ok(ParsedConfig {
            experiment,
            uncertainty,
            seed: self.seed,
        })
    }
}

pub fn parse_config_str(text: &str) -> Result<ParsedConfig, CliError> {
    let raw: RawConfig = toml::from_str(text).map_err(|e| CliError::Config(e.to_string()))?;
    raw.validate()
}

pub fn parse_config(path: &std::path::Path) -> Result<ParsedConfig, CliError> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| CliError::Io(format!("reading {}: {e}", path.display())))?;
    parse_config_str(&text)
}

/// Renders a validated experiment back to TOML (used to echo configs).
pub fn render_config(cfg: &ExperimentConfig64, seed: u64) -> String {
    let c = &cfg.controller;
    let raw = RawConfig {
        samples: Some(cfg.samples as i64),
        quantiles: Some(cfg.quantiles.clone()),
        arms: Some(cfg.arms.iter().map(|a| a.label().to_string()).collect()),
        seed: Some(seed),
        plant: RawPlant {
            a: to_matrix_rows(&cfg.plant.a),
            b: to_matrix_rows(&cfg.plant.b),
            w: to_matrix_rows(&cfg.plant.w),
        },
        controller: RawController {
            q: to_matrix_rows(&c.q),
            r: to_matrix_rows(&c.r),
            t_explore: c.t_explore as i64,
            horizon: c.horizon as i64,
            bootstrap_resamples: c.bootstrap_resamples as i64,
            gamma: c.gamma,
            epsilon: c.epsilon,
            input_cov: Some(to_matrix_rows(&c.input_cov)),
            x0_cov: Some(to_matrix_rows(&c.x0_cov)),
            noise_scale: Some(
                match c.noise_scale {
                    NoiseScaleRule::MaxSpectralNorm => "max_spectral_norm",
                    NoiseScaleRule::TraceSum => "trace_sum",
                }
                .to_string(),
            ),
            center_residuals: Some(c.center_residuals),
        },
        uncertainty: None,
    };
    toml::to_string(&raw).expect("config serializes")
}

/// The scalar benchmark: `A = B = Q = W = 1`, `R = 0`, `T = 200`,
/// `t_explore = 5`, `γ = 1`, `ε = 0.01`, `N_b = 100`.
pub const BENCHMARK_CONFIG: &str = r#"samples = 2000
quantiles = [0.5, 0.95, 0.99, 0.999]
arms = ["ce", "rmn"]

[plant]
a = [[1.0]]
b = [[1.0]]
w = [[1.0]]

[controller]
q = [[1.0]]
r = [[0.0]]
t_explore = 5
horizon = 200
bootstrap_resamples = 100
gamma = 1.0
epsilon = 0.01
input_cov = [[1.0]]
x0_cov = [[1.0]]
"#;
