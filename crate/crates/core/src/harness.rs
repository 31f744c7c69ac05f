//! Monte Carlo comparison of certainty-equivalent and robust adaptive control.
//!
//! Every sample draws one offline training trajectory (standard Gaussian
//! inputs from the origin), one initial state and one plant-noise sequence.
//! All enabled arms share those draws and the estimates computed from the
//! training data, so they differ only through their gains. Regret at time `t`
//! is the stage cost minus `c*_t`, the cross-sample mean stage cost of the
//! true optimal controller under the same noise.

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;

use crate::adaptive::{
    fixed_gain_costs, offline_estimates, run_with_estimates, ControllerConfig, EpisodeAbort,
    EpisodeSeeds, Estimate, NoiseRealization,
};
use crate::error::{Error, Result};
use crate::linalg::GaussianSampler;
use crate::riccati::solve_dare;
use crate::scalar::Real;
use crate::seeds::{derive, stream_rng};
use crate::sysid::{LinearSystemModel, TrajectoryData};

pub const DEFAULT_QUANTILES: [f64; 4] = [0.5, 0.95, 0.99, 0.999];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Arm {
    /// Certainty equivalence: `γ = 0` regardless of the configured value.
    CertaintyEquivalent,
    /// Robustness via multiplicative noise at the configured `γ`.
    Robust,
}

impl Arm {
    pub fn label(self) -> &'static str {
        match self {
            Arm::CertaintyEquivalent => "ce",
            Arm::Robust => "rmn",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s.to_ascii_lowercase().as_str() {
            "ce" => Some(Arm::CertaintyEquivalent),
            "rmn" => Some(Arm::Robust),
            _ => None,
        }
    }

    fn controller<T: Real>(self, base: &ControllerConfig<T>) -> ControllerConfig<T> {
        let mut cfg = base.clone();
        if self == Arm::CertaintyEquivalent {
            cfg.gamma = T::zero();
        }
        cfg
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig<T: Real> {
    pub plant: LinearSystemModel<T>,
    pub controller: ControllerConfig<T>,
    pub samples: usize,
    pub quantiles: Vec<f64>,
    pub master_seed: u64,
    pub arms: Vec<Arm>,
}

impl<T: Real> ExperimentConfig<T> {
    pub fn new(
        plant: LinearSystemModel<T>,
        controller: ControllerConfig<T>,
        samples: usize,
        master_seed: u64,
    ) -> Self {
        Self {
            plant,
            controller,
            samples,
            quantiles: DEFAULT_QUANTILES.to_vec(),
            master_seed,
            arms: vec![Arm::CertaintyEquivalent, Arm::Robust],
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.samples == 0 {
            return Err(Error::param("samples must be at least 1"));
        }
        if let Some(p) = self.quantiles.iter().find(|p| !(**p > 0.0 && **p < 1.0)) {
            return Err(Error::param(format!(
                "quantile level {p} is outside (0, 1)"
            )));
        }
        if self.arms.is_empty() {
            return Err(Error::param("at least one arm must be enabled"));
        }
        let mut sorted = self.arms.clone();
        sorted.sort();
        sorted.dedup();
        if sorted.len() != self.arms.len() {
            return Err(Error::param("arms must not repeat"));
        }
        self.controller
            .validate(self.plant.state_dim(), self.plant.input_dim())
    }
}

/// Seeds for sample `k`: its training data stream and its episode streams.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SampleSeeds {
    pub training: u64,
    pub episode: EpisodeSeeds,
}

pub fn sample_seeds(master: u64, sample: usize) -> SampleSeeds {
    let base = derive(master, sample as u64);
    SampleSeeds {
        training: derive(base, 0),
        episode: EpisodeSeeds::from_master(base),
    }
}

/// Offline training data: `x_0 = 0`, `u_τ ~ N(0, I)`, plant noise from `W`.
pub fn generate_training_data<T: Real>(
    plant: &LinearSystemModel<T>,
    transitions: usize,
    seed: u64,
) -> Result<TrajectoryData<T>> {
    let (n, m) = (plant.state_dim(), plant.input_dim());
    let inputs = GaussianSampler::new(&DMatrix::identity(m, m))?;
    let noise = GaussianSampler::new(&plant.w)?;
    let mut u_rng = stream_rng(seed, 0);
    let mut w_rng = stream_rng(seed, 1);
    let mut x = DVector::zeros(n);
    let mut data = TrajectoryData::starting_at(&x, m);
    for _ in 0..transitions {
        let u = inputs.sample(&mut u_rng);
        let w = noise.sample(&mut w_rng);
        x = plant.step(&x, &u, &w);
        data.push(&u, &x)?;
    }
    Ok(data)
}

/// `c*_t`: the mean stage cost of `K* = DARE(A, B, Q, R)` across realizations.
pub fn optimal_baseline<T: Real>(
    plant: &LinearSystemModel<T>,
    q: &DMatrix<T>,
    r: &DMatrix<T>,
    horizon: usize,
    noises: &[NoiseRealization<T>],
) -> Result<Vec<T>> {
    if noises.is_empty() {
        return Err(Error::param("baseline needs at least one realization"));
    }
    let gain = solve_dare(&plant.a, &plant.b, q, r)?.k;
    let per_sample: Vec<Vec<T>> = noises
        .iter()
        .map(|nz| fixed_gain_costs(plant, &gain, q, r, nz, horizon))
        .collect();
    Ok(column_means(&per_sample, horizon))
}

fn column_means<T: Real>(rows: &[Vec<T>], horizon: usize) -> Vec<T> {
    let inv = T::one() / T::from_usize(rows.len()).unwrap();
    (0..horizon)
        .map(|t| rows.iter().fold(T::zero(), |acc, row| acc + row[t]) * inv)
        .collect()
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AbortInfo {
    pub sample: usize,
    pub t: usize,
    pub message: String,
}

/// Per-sample outcomes of one arm. Rows are indexed like `sample_ids`.
#[derive(Debug, Clone, PartialEq)]
pub struct ArmRecord<T: Real> {
    pub arm: Arm,
    pub sample_ids: Vec<usize>,
    /// `regret[i][t] = c_t − c*_t` for `t = 0 .. T-1`.
    pub regret: Vec<Vec<T>>,
    /// `c_γ` used at each step (`None` during exploration or on fallback).
    pub c_gamma: Vec<Vec<Option<T>>>,
    pub fallbacks: usize,
    /// Digest of the noise realization each completed sample consumed.
    pub noise_digests: Vec<u64>,
    pub aborts: Vec<AbortInfo>,
}

/// Model-error and uncertainty statistics at `t_explore < t < T`; shared by
/// all arms because estimation runs on the offline training data.
#[derive(Debug, Clone, PartialEq)]
pub struct EstimationRecord<T: Real> {
    pub sample_ids: Vec<usize>,
    /// `‖Â_t − A‖_F`.
    pub a_error: Vec<Vec<T>>,
    /// `‖B̂_t − B‖_F`.
    pub b_error: Vec<Vec<T>>,
    pub sigma_a_trace: Vec<Vec<T>>,
    pub sigma_b_trace: Vec<Vec<T>>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RegretRecord<T: Real> {
    pub horizon: usize,
    pub t_explore: usize,
    pub samples: usize,
    pub baseline: Vec<T>,
    pub arms: Vec<ArmRecord<T>>,
    pub estimation: EstimationRecord<T>,
}

impl<T: Real> RegretRecord<T> {
    pub fn arm(&self, arm: Arm) -> Option<&ArmRecord<T>> {
        self.arms.iter().find(|a| a.arm == arm)
    }

    pub fn abort_count(&self, arm: Arm) -> usize {
        self.arm(arm).map_or(0, |a| a.aborts.len())
    }
}

struct ArmTrace<T: Real> {
    costs: Vec<T>,
    c_gamma: Vec<Option<T>>,
    fallbacks: usize,
    digest: u64,
}

struct SampleOutcome<T: Real> {
    optimal: Vec<T>,
    estimates: std::result::Result<Vec<Estimate<T>>, EpisodeAbort>,
    arms: Vec<std::result::Result<ArmTrace<T>, EpisodeAbort>>,
}

fn run_sample<T: Real>(
    cfg: &ExperimentConfig<T>,
    k: usize,
    optimal_gain: &DMatrix<T>,
) -> Result<SampleOutcome<T>> {
    let ctrl = &cfg.controller;
    let seeds = sample_seeds(cfg.master_seed, k);
    let training = generate_training_data(&cfg.plant, ctrl.horizon, seeds.training)?;
    let noise = NoiseRealization::draw(&cfg.plant, &ctrl.x0_cov, ctrl.horizon, &seeds.episode)?;
    let optimal = fixed_gain_costs(
        &cfg.plant,
        optimal_gain,
        &ctrl.q,
        &ctrl.r,
        &noise,
        ctrl.horizon,
    );
    let digest = noise.digest();

    let estimates = offline_estimates(&training, ctrl, seeds.episode.bootstrap);
    let arms = cfg
        .arms
        .iter()
        .map(|arm| {
            let est = estimates.as_ref().map_err(Clone::clone)?;
            let recs = run_with_estimates(
                &cfg.plant,
                &arm.controller(ctrl),
                est,
                &noise,
                seeds.episode.exploration,
            )?;
            Ok(ArmTrace {
                costs: recs.iter().map(|r| r.stage_cost).collect(),
                c_gamma: recs.iter().map(|r| r.c_gamma).collect(),
                fallbacks: recs.iter().filter(|r| r.fallback).count(),
                digest,
            })
        })
        .collect();
    Ok(SampleOutcome {
        optimal,
        estimates,
        arms,
    })
}

/// Runs every sample (in parallel on the current rayon pool) and assembles
/// the per-sample regret record. Output does not depend on the worker count.
pub fn run_experiment<T: Real>(cfg: &ExperimentConfig<T>) -> Result<RegretRecord<T>> {
    cfg.validate()?;
    let ctrl = &cfg.controller;
    let optimal_gain = solve_dare(&cfg.plant.a, &cfg.plant.b, &ctrl.q, &ctrl.r)?.k;

    let outcomes: Vec<SampleOutcome<T>> = (0..cfg.samples)
        .into_par_iter()
        .map(|k| run_sample(cfg, k, &optimal_gain))
        .collect::<Result<_>>()?;

    let optimal: Vec<Vec<T>> = outcomes.iter().map(|o| o.optimal.clone()).collect();
    let baseline = column_means(&optimal, ctrl.horizon);

    let mut arms: Vec<ArmRecord<T>> = cfg
        .arms
        .iter()
        .map(|&arm| ArmRecord {
            arm,
            sample_ids: Vec::new(),
            regret: Vec::new(),
            c_gamma: Vec::new(),
            fallbacks: 0,
            noise_digests: Vec::new(),
            aborts: Vec::new(),
        })
        .collect();
    let mut estimation = EstimationRecord {
        sample_ids: Vec::new(),
        a_error: Vec::new(),
        b_error: Vec::new(),
        sigma_a_trace: Vec::new(),
        sigma_b_trace: Vec::new(),
    };

    for (k, outcome) in outcomes.into_iter().enumerate() {
        if let Ok(est) = &outcome.estimates {
            estimation.sample_ids.push(k);
            estimation.a_error.push(
                est.iter()
                    .map(|e| (&e.model.a - &cfg.plant.a).norm())
                    .collect(),
            );
            estimation.b_error.push(
                est.iter()
                    .map(|e| (&e.model.b - &cfg.plant.b).norm())
                    .collect(),
            );
            estimation
                .sigma_a_trace
                .push(est.iter().map(|e| e.uncertainty.trace_a()).collect());
            estimation
                .sigma_b_trace
                .push(est.iter().map(|e| e.uncertainty.trace_b()).collect());
        }
        for (rec, trace) in arms.iter_mut().zip(outcome.arms) {
            match trace {
                Ok(tr) => {
                    rec.sample_ids.push(k);
                    rec.regret.push(
                        tr.costs
                            .iter()
                            .zip(&baseline)
                            .map(|(c, b)| *c - *b)
                            .collect(),
                    );
                    rec.c_gamma.push(tr.c_gamma);
                    rec.fallbacks += tr.fallbacks;
                    rec.noise_digests.push(tr.digest);
                }
                Err(abort) => rec.aborts.push(AbortInfo {
                    sample: k,
                    t: abort.t,
                    message: abort.error.to_string(),
                }),
            }
        }
    }

    Ok(RegretRecord {
        horizon: ctrl.horizon,
        t_explore: ctrl.t_explore,
        samples: cfg.samples,
        baseline,
        arms,
        estimation,
    })
}

/// Mean, median and requested quantiles of one column of samples.
#[derive(Debug, Clone, PartialEq)]
pub struct Summary {
    pub count: usize,
    pub mean: f64,
    pub median: f64,
    /// `(level, value)` in the order requested.
    pub quantiles: Vec<(f64, f64)>,
}

/// Empirical quantile of sorted data with linear interpolation between
/// order statistics at position `(N − 1) p`.
pub fn quantile_sorted(sorted: &[f64], p: f64) -> f64 {
    let n = sorted.len();
    if n == 1 {
        return sorted[0];
    }
    let h = (n - 1) as f64 * p;
    let lo = h.floor() as usize;
    let hi = (lo + 1).min(n - 1);
    sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
}

pub fn summarize_values<T: Real>(values: &[T], levels: &[f64]) -> Result<Summary> {
    if values.is_empty() {
        return Err(Error::param("cannot summarize an empty set of samples"));
    }
    let mut sorted: Vec<f64> = values.iter().map(|v| v.as_f64()).collect();
    let mean = sorted.iter().sum::<f64>() / sorted.len() as f64;
    sorted.sort_by(|a, b| a.total_cmp(b));
    Ok(Summary {
        count: sorted.len(),
        mean,
        median: quantile_sorted(&sorted, 0.5),
        quantiles: levels
            .iter()
            .map(|&p| (p, quantile_sorted(&sorted, p)))
            .collect(),
    })
}

/// A statistic over samples at one time step.
#[derive(Debug, Clone, PartialEq)]
pub struct SummaryRow {
    pub t: usize,
    pub summary: Summary,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SummaryTables {
    pub levels: Vec<f64>,
    /// Per arm, `t ∈ [t_explore, T)`.
    pub regret: Vec<(Arm, Vec<SummaryRow>)>,
    /// `(quantity, rows)` for `a_error`, `b_error`; `t ∈ (t_explore, T)`.
    pub model_error: Vec<(&'static str, Vec<SummaryRow>)>,
    /// `(quantity, rows)` for `sigma_a_trace`, `sigma_b_trace`.
    pub noise_variance: Vec<(&'static str, Vec<SummaryRow>)>,
    /// Per arm `c_γ` statistics over samples that did not fall back.
    pub c_gamma: Vec<(Arm, Vec<SummaryRow>)>,
}

fn empty_summary(levels: &[f64]) -> Summary {
    Summary {
        count: 0,
        mean: f64::NAN,
        median: f64::NAN,
        quantiles: levels.iter().map(|&p| (p, f64::NAN)).collect(),
    }
}

fn column_rows<T: Real>(
    rows: &[Vec<T>],
    offset: usize,
    ts: std::ops::Range<usize>,
    levels: &[f64],
) -> Result<Vec<SummaryRow>> {
    ts.map(|t| {
        let column: Vec<T> = rows.iter().map(|r| r[t - offset]).collect();
        Ok(SummaryRow {
            t,
            summary: summarize_values(&column, levels)?,
        })
    })
    .collect()
}

/// Per-timestep quantile tables for every arm and estimation statistic.
pub fn summarize<T: Real>(record: &RegretRecord<T>, levels: &[f64]) -> Result<SummaryTables> {
    if record.arms.is_empty() {
        return Err(Error::param("record has no arms"));
    }
    let first = record.t_explore + 1;
    let mut regret = Vec::new();
    let mut c_gamma = Vec::new();
    for arm in &record.arms {
        if arm.regret.is_empty() {
            return Err(Error::param(format!(
                "arm {} has no completed samples ({} aborted)",
                arm.arm.label(),
                arm.aborts.len()
            )));
        }
        regret.push((
            arm.arm,
            column_rows(&arm.regret, 0, record.t_explore..record.horizon, levels)?,
        ));
        let rows = (first..record.horizon)
            .map(|t| {
                let column: Vec<T> = arm.c_gamma.iter().filter_map(|r| r[t]).collect();
                let summary = if column.is_empty() {
                    empty_summary(levels)
                } else {
                    summarize_values(&column, levels)?
                };
                Ok(SummaryRow { t, summary })
            })
            .collect::<Result<Vec<_>>>()?;
        c_gamma.push((arm.arm, rows));
    }

    let est = &record.estimation;
    let range = || first..record.horizon;
    let stat = |rows: &Vec<Vec<T>>| -> Result<Vec<SummaryRow>> {
        if rows.is_empty() {
            Ok(range()
                .map(|t| SummaryRow {
                    t,
                    summary: empty_summary(levels),
                })
                .collect())
        } else {
            column_rows(rows, first, range(), levels)
        }
    };
    Ok(SummaryTables {
        levels: levels.to_vec(),
        regret,
        model_error: vec![
            ("a_error", stat(&est.a_error)?),
            ("b_error", stat(&est.b_error)?),
        ],
        noise_variance: vec![
            ("sigma_a_trace", stat(&est.sigma_a_trace)?),
            ("sigma_b_trace", stat(&est.sigma_b_trace)?),
        ],
        c_gamma,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn quantile_interpolation_convention() {
        let s = summarize_values(&[4.0, 1.0, 3.0, 2.0], &[0.5, 0.25]).unwrap();
        assert_eq!(s.median, 2.5);
        assert_eq!(s.mean, 2.5);
        assert_eq!(s.quantiles[1], (0.25, 1.75));
    }

    #[test]
    fn constant_samples() {
        let s = summarize_values(&[3.0; 17], &[0.5, 0.95, 0.99, 0.999]).unwrap();
        assert!(s.quantiles.iter().all(|(_, v)| *v == 3.0));
        assert_eq!(s.median, 3.0);
    }

    #[test]
    fn empty_summary_is_error() {
        assert!(summarize_values::<f64>(&[], &[0.5]).is_err());
    }

    #[test]
    fn config_validation() {
        let s = |v: f64| DMatrix::from_element(1, 1, v);
        let plant = LinearSystemModel::new(s(1.0), s(1.0), s(1.0)).unwrap();
        let mut cfg = ExperimentConfig::new(plant, ControllerConfig::new(s(1.0), s(0.0)), 3, 0);
        assert!(cfg.validate().is_ok());
        cfg.quantiles = vec![1.0];
        assert!(cfg.validate().is_err());
        cfg.quantiles = vec![0.5];
        cfg.arms = vec![Arm::Robust, Arm::Robust];
        assert!(cfg.validate().is_err());
        cfg.arms = vec![Arm::Robust];
        cfg.samples = 0;
        assert!(cfg.validate().is_err());
    }

    #[test]
    fn arm_labels_round_trip() {
        for arm in [Arm::CertaintyEquivalent, Arm::Robust] {
            assert_eq!(Arm::parse(arm.label()), Some(arm));
        }
        assert_eq!(Arm::parse("lqr"), None);
    }

    #[test]
    fn training_data_starts_at_origin() {
        let s = |v: f64| DMatrix::from_element(1, 1, v);
        let plant = LinearSystemModel::new(s(1.0), s(1.0), s(1.0)).unwrap();
        let data = generate_training_data(&plant, 10, 3).unwrap();
        assert_eq!(data.len(), 10);
        assert_eq!(data.state(0), &[0.0]);
        assert_eq!(data, generate_training_data(&plant, 10, 3).unwrap());
    }
}
