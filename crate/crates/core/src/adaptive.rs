//! The adaptive control loop: pure Gaussian exploration up to `t_explore`,
//! then at every step a least-squares fit, a bootstrap uncertainty estimate,
//! a bisection-scaled multiplicative-noise LQR gain, and an input of the form
//! `u = K̂ x + e` where the excitation `e` fades with the estimated uncertainty.
//!
//! Certainty equivalence is the `gamma = 0` case.

use nalgebra::{DMatrix, DVector};
use thiserror::Error;

use crate::bootstrap::{bootstrap_model_variance_with, BootstrapOptions, UncertaintyEstimate};
use crate::error::{Error, Result};
use crate::linalg::{check_symmetric_psd, require_shape, symmetric_spectral_norm, GaussianSampler};
use crate::riccati::{decompose_uncertainty, design_with_spectrum, RiccatiOptions};
use crate::scalar::Real;
use crate::seeds::{derive, stream_rng};
use crate::sysid::{least_squares_estimate, LinearSystemModel, NominalModel, TrajectoryData};

/// How the excitation covariance scale `s` in `e ~ N(0, s U)` is read off
/// the uncertainty estimate.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum NoiseScaleRule {
    /// `max(‖Σ_A‖₂, ‖Σ_B‖₂)`.
    #[default]
    MaxSpectralNorm,
    /// `tr Σ_A + tr Σ_B`.
    TraceSum,
}

impl NoiseScaleRule {
    pub fn magnitude<T: Real>(self, u: &UncertaintyEstimate<T>) -> T {
        match self {
            NoiseScaleRule::MaxSpectralNorm => {
                symmetric_spectral_norm(&u.sigma_a).max(symmetric_spectral_norm(&u.sigma_b))
            }
            NoiseScaleRule::TraceSum => u.trace_a() + u.trace_b(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ControllerConfig<T: Real> {
    pub t_explore: usize,
    pub horizon: usize,
    /// Input excitation covariance `U`.
    pub input_cov: DMatrix<T>,
    pub bootstrap_resamples: usize,
    pub gamma: T,
    pub q: DMatrix<T>,
    pub r: DMatrix<T>,
    /// Bisection tolerance on `c_γ`.
    pub epsilon: T,
    /// Initial-state covariance `X_0`.
    pub x0_cov: DMatrix<T>,
    pub noise_scale: NoiseScaleRule,
    pub center_residuals: bool,
    pub riccati: RiccatiOptions<T>,
}

impl<T: Real> ControllerConfig<T> {
    /// Defaults matching the scalar benchmark: `U = I`, `X_0 = I`, `N_b = 100`,
    /// `γ = 1`, `ε = 0.01`, `t_explore = 5`, `T = 200`.
    pub fn new(q: DMatrix<T>, r: DMatrix<T>) -> Self {
        let (n, m) = (q.nrows(), r.nrows());
        Self {
            t_explore: 5,
            horizon: 200,
            input_cov: DMatrix::identity(m, m),
            bootstrap_resamples: 100,
            gamma: T::one(),
            q,
            r,
            epsilon: T::lit(0.01),
            x0_cov: DMatrix::identity(n, n),
            noise_scale: NoiseScaleRule::default(),
            center_residuals: false,
            riccati: RiccatiOptions::default(),
        }
    }

    pub fn validate(&self, n: usize, m: usize) -> Result<()> {
        if self.t_explore <= n + m {
            return Err(Error::param(format!(
                "t_explore = {} must exceed n + m = {}",
                self.t_explore,
                n + m
            )));
        }
        if self.horizon == 0 {
            return Err(Error::param("horizon must be positive"));
        }
        if self.bootstrap_resamples < 2 {
            return Err(Error::param("bootstrap_resamples must be at least 2"));
        }
        if !(self.gamma >= T::zero()) || !self.gamma.is_finite() {
            return Err(Error::param("gamma must be finite and nonnegative"));
        }
        if !(self.epsilon > T::zero()) {
            return Err(Error::param("epsilon must be positive"));
        }
        for (mat, rows, name) in [
            (&self.q, n, "Q"),
            (&self.r, m, "R"),
            (&self.input_cov, m, "U"),
            (&self.x0_cov, n, "X0"),
        ] {
            require_shape(mat, rows, rows, name)?;
            check_symmetric_psd(mat, name, 1e-10, 1e-10)?;
        }
        Ok(())
    }
}

/// Model and uncertainty available to the controller at one time step.
#[derive(Debug, Clone, PartialEq)]
pub struct Estimate<T: Real> {
    pub t: usize,
    pub model: NominalModel<T>,
    pub uncertainty: UncertaintyEstimate<T>,
}

/// Everything that happened at time `t`.
#[derive(Debug, Clone, PartialEq)]
pub struct StepRecord<T: Real> {
    pub t: usize,
    pub x: DVector<T>,
    pub u: DVector<T>,
    pub model: Option<NominalModel<T>>,
    pub uncertainty: Option<UncertaintyEstimate<T>>,
    pub gain: Option<DMatrix<T>>,
    pub c_gamma: Option<T>,
    /// The design was infeasible and the previous gain was held.
    pub fallback: bool,
    pub stage_cost: T,
}

/// An episode stopped early.
#[derive(Debug, Clone, PartialEq, Error)]
#[error("episode aborted at t = {t}: {error}")]
pub struct EpisodeAbort {
    pub t: usize,
    #[source]
    pub error: Error,
}

/// Seeds of the independent random streams of one episode.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct EpisodeSeeds {
    pub initial_state: u64,
    pub plant_noise: u64,
    pub exploration: u64,
    pub bootstrap: u64,
}

impl EpisodeSeeds {
    pub fn from_master(seed: u64) -> Self {
        Self {
            initial_state: derive(seed, 1),
            plant_noise: derive(seed, 2),
            exploration: derive(seed, 3),
            bootstrap: derive(seed, 4),
        }
    }
}

/// Initial state and additive plant noise `w_0 .. w_{T-1}` of one episode.
#[derive(Debug, Clone, PartialEq)]
pub struct NoiseRealization<T: Real> {
    pub x0: DVector<T>,
    pub w: Vec<DVector<T>>,
}

impl<T: Real> NoiseRealization<T> {
    pub fn draw(
        plant: &LinearSystemModel<T>,
        x0_cov: &DMatrix<T>,
        horizon: usize,
        seeds: &EpisodeSeeds,
    ) -> Result<Self> {
        let x0 = GaussianSampler::new(x0_cov)?.sample(&mut stream_rng(seeds.initial_state, 0));
        let noise = GaussianSampler::new(&plant.w)?;
        let mut rng = stream_rng(seeds.plant_noise, 0);
        let w = (0..horizon).map(|_| noise.sample(&mut rng)).collect();
        Ok(Self { x0, w })
    }

    /// FNV-1a over the bit patterns; equal digests mean equal realizations.
    pub fn digest(&self) -> u64 {
        let mut h: u64 = 0xcbf2_9ce4_8422_2325;
        for v in self.x0.iter().chain(self.w.iter().flat_map(|w| w.iter())) {
            for byte in v.as_f64().to_bits().to_le_bytes() {
                h ^= byte as u64;
                h = h.wrapping_mul(0x0000_0100_0000_01b3);
            }
        }
        h
    }
}

/// One exploration input `u ~ N(0, U)`.
pub fn exploration_input<T: Real, R: rand::Rng + ?Sized>(
    input_cov: &DMatrix<T>,
    rng: &mut R,
) -> Result<DVector<T>> {
    Ok(GaussianSampler::new(input_cov)?.sample(rng))
}

/// `u = K̂ x + e` with `e ~ N(0, s U)`, `s` from `rule`.
pub fn exploitation_input<T: Real, R: rand::Rng + ?Sized>(
    gain: &DMatrix<T>,
    x: &DVector<T>,
    uncertainty: &UncertaintyEstimate<T>,
    excitation: &GaussianSampler<T>,
    rule: NoiseScaleRule,
    rng: &mut R,
) -> Result<DVector<T>> {
    if gain.ncols() != x.len() || gain.nrows() != excitation.dim() {
        return Err(Error::dim(format!(
            "gain is {}x{}, state has {} entries, excitation has {}",
            gain.nrows(),
            gain.ncols(),
            x.len(),
            excitation.dim()
        )));
    }
    let scale = rule.magnitude(uncertainty);
    let e = excitation.sample_scaled(scale, rng);
    Ok(gain * x + e)
}

/// Least squares and bootstrap on the first `t` transitions of `data`.
/// The bootstrap seed for step `t` is derived from `bootstrap_seed` and `t`.
pub fn estimate_at<T: Real>(
    data: &TrajectoryData<T>,
    t: usize,
    cfg: &ControllerConfig<T>,
    bootstrap_seed: u64,
) -> Result<Estimate<T>> {
    let prefix = data.prefix(t)?;
    let model = least_squares_estimate(&prefix)?;
    let opts = BootstrapOptions {
        resamples: cfg.bootstrap_resamples,
        center_residuals: cfg.center_residuals,
    };
    let uncertainty =
        bootstrap_model_variance_with(&prefix, &model, opts, derive(bootstrap_seed, t as u64))?;
    Ok(Estimate {
        t,
        model,
        uncertainty,
    })
}

/// Estimates for every exploitation step `t_explore < t < T` from fixed
/// offline training data.
pub fn offline_estimates<T: Real>(
    training: &TrajectoryData<T>,
    cfg: &ControllerConfig<T>,
    bootstrap_seed: u64,
) -> std::result::Result<Vec<Estimate<T>>, EpisodeAbort> {
    (cfg.t_explore + 1..cfg.horizon)
        .map(|t| {
            estimate_at(training, t, cfg, bootstrap_seed).map_err(|error| EpisodeAbort { t, error })
        })
        .collect()
}

enum Source<'a, T: Real> {
    Online { bootstrap_seed: u64 },
    Precomputed(&'a [Estimate<T>]),
}

/// Runs one episode.
///
/// With `training = Some(..)` the estimation pipeline at time `t` sees only
/// the first `t` transitions of the training data and the controlled
/// trajectory just accumulates cost. With `None` the controlled trajectory is
/// its own estimation data.
pub fn run_adaptive_episode<T: Real>(
    plant: &LinearSystemModel<T>,
    cfg: &ControllerConfig<T>,
    training: Option<&TrajectoryData<T>>,
    noise: &NoiseRealization<T>,
    seeds: &EpisodeSeeds,
) -> std::result::Result<Vec<StepRecord<T>>, EpisodeAbort> {
    match training {
        Some(data) => {
            if data.len() + 1 < cfg.horizon {
                return Err(EpisodeAbort {
                    t: 0,
                    error: Error::param(format!(
                        "training data has {} transitions, horizon {} needs {}",
                        data.len(),
                        cfg.horizon,
                        cfg.horizon - 1
                    )),
                });
            }
            let est = offline_estimates(data, cfg, seeds.bootstrap)?;
            run_loop(
                plant,
                cfg,
                Source::Precomputed(&est),
                noise,
                seeds.exploration,
            )
        }
        None => run_loop(
            plant,
            cfg,
            Source::Online {
                bootstrap_seed: seeds.bootstrap,
            },
            noise,
            seeds.exploration,
        ),
    }
}

/// Runs one episode against precomputed estimates (as produced by
/// [`offline_estimates`]); lets several controllers share one estimation pass.
pub fn run_with_estimates<T: Real>(
    plant: &LinearSystemModel<T>,
    cfg: &ControllerConfig<T>,
    estimates: &[Estimate<T>],
    noise: &NoiseRealization<T>,
    exploration_seed: u64,
) -> std::result::Result<Vec<StepRecord<T>>, EpisodeAbort> {
    run_loop(
        plant,
        cfg,
        Source::Precomputed(estimates),
        noise,
        exploration_seed,
    )
}

fn run_loop<T: Real>(
    plant: &LinearSystemModel<T>,
    cfg: &ControllerConfig<T>,
    source: Source<'_, T>,
    noise: &NoiseRealization<T>,
    exploration_seed: u64,
) -> std::result::Result<Vec<StepRecord<T>>, EpisodeAbort> {
    let abort_at = |t: usize| move |error: Error| EpisodeAbort { t, error };
    let (n, m) = (plant.state_dim(), plant.input_dim());
    cfg.validate(n, m).map_err(abort_at(0))?;
    if noise.x0.len() != n || noise.w.len() < cfg.horizon || noise.w.iter().any(|w| w.len() != n) {
        return Err(abort_at(0)(Error::dim(
            "noise realization does not match plant and horizon",
        )));
    }
    let excitation = GaussianSampler::new(&cfg.input_cov).map_err(abort_at(0))?;
    let mut rng = stream_rng(exploration_seed, 0);

    let mut x = noise.x0.clone();
    let mut trajectory = TrajectoryData::starting_at(&x, m);
    let mut held_gain: DMatrix<T> = DMatrix::zeros(m, n);
    let mut records = Vec::with_capacity(cfg.horizon);

    for t in 0..cfg.horizon {
        let mut rec = StepRecord {
            t,
            x: x.clone(),
            u: DVector::zeros(m),
            model: None,
            uncertainty: None,
            gain: None,
            c_gamma: None,
            fallback: false,
            stage_cost: T::zero(),
        };
        if t <= cfg.t_explore {
            rec.u = excitation.sample(&mut rng);
        } else {
            let est = match &source {
                Source::Online { bootstrap_seed } => {
                    estimate_at(&trajectory, t, cfg, *bootstrap_seed).map_err(abort_at(t))?
                }
                Source::Precomputed(list) => list
                    .get(t - cfg.t_explore - 1)
                    .filter(|e| e.t == t)
                    .cloned()
                    .ok_or_else(|| abort_at(t)(Error::param(format!("no estimate for t = {t}"))))?,
            };
            let spectrum = decompose_uncertainty(&est.uncertainty).map_err(abort_at(t))?;
            match design_with_spectrum(
                &est.model.a,
                &est.model.b,
                &cfg.q,
                &cfg.r,
                &spectrum,
                cfg.gamma,
                cfg.epsilon,
                &cfg.riccati,
            ) {
                Ok(design) => {
                    held_gain = design.solution.k;
                    rec.c_gamma = Some(design.c_gamma);
                }
                Err(Error::NotStabilizable) => rec.fallback = true,
                Err(e) => return Err(abort_at(t)(e)),
            }
            rec.u = exploitation_input(
                &held_gain,
                &x,
                &est.uncertainty,
                &excitation,
                cfg.noise_scale,
                &mut rng,
            )
            .map_err(abort_at(t))?;
            rec.gain = Some(held_gain.clone());
            rec.model = Some(est.model);
            rec.uncertainty = Some(est.uncertainty);
        }
        rec.stage_cost = stage_cost(&cfg.q, &cfg.r, &x, &rec.u);
        if !rec.stage_cost.is_finite() {
            return Err(abort_at(t)(Error::NonFinite("stage cost".into())));
        }
        x = plant.step(&x, &rec.u, &noise.w[t]);
        trajectory.push(&rec.u, &x).map_err(abort_at(t))?;
        records.push(rec);
    }
    Ok(records)
}

/// `xᵀQx + uᵀRu`.
pub fn stage_cost<T: Real>(q: &DMatrix<T>, r: &DMatrix<T>, x: &DVector<T>, u: &DVector<T>) -> T {
    x.dot(&(q * x)) + u.dot(&(r * u))
}

/// Stage costs of the fixed feedback `u = K x` under a noise realization.
pub fn fixed_gain_costs<T: Real>(
    plant: &LinearSystemModel<T>,
    gain: &DMatrix<T>,
    q: &DMatrix<T>,
    r: &DMatrix<T>,
    noise: &NoiseRealization<T>,
    horizon: usize,
) -> Vec<T> {
    let mut x = noise.x0.clone();
    let mut out = Vec::with_capacity(horizon);
    for w in noise.w.iter().take(horizon) {
        let u = gain * &x;
        out.push(stage_cost(q, r, &x, &u));
        x = plant.step(&x, &u, w);
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::riccati::solve_dare;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn s(v: f64) -> DMatrix<f64> {
        DMatrix::from_element(1, 1, v)
    }

    fn benchmark_plant() -> LinearSystemModel<f64> {
        LinearSystemModel::new(s(1.0), s(1.0), s(1.0)).unwrap()
    }

    fn benchmark_cfg() -> ControllerConfig<f64> {
        ControllerConfig::new(s(1.0), s(0.0))
    }

    #[test]
    fn zero_excitation_covariance() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        for _ in 0..10 {
            assert_eq!(exploration_input(&s(0.0), &mut rng).unwrap()[0], 0.0);
        }
        assert!(exploration_input(&DMatrix::<f64>::zeros(1, 2), &mut rng).is_err());
    }

    #[test]
    fn exploitation_without_uncertainty_is_pure_feedback() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let sampler = GaussianSampler::new(&s(1.0)).unwrap();
        let x = DVector::from_element(1, 3.0);
        let u = exploitation_input(
            &s(-0.5),
            &x,
            &UncertaintyEstimate::zeros(1, 1),
            &sampler,
            NoiseScaleRule::MaxSpectralNorm,
            &mut rng,
        )
        .unwrap();
        assert_eq!(u[0], -1.5);
    }

    #[test]
    fn exploitation_dimension_mismatch() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let sampler = GaussianSampler::new(&s(1.0)).unwrap();
        let x = DVector::from_element(2, 1.0);
        assert!(exploitation_input(
            &s(1.0),
            &x,
            &UncertaintyEstimate::zeros(1, 1),
            &sampler,
            NoiseScaleRule::MaxSpectralNorm,
            &mut rng
        )
        .is_err());
    }

    #[test]
    fn noise_scale_rules() {
        let u = UncertaintyEstimate::<f64>::new(
            DMatrix::from_row_slice(
                4,
                4,
                &[
                    2.0, 0.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0,
                ],
            ),
            DMatrix::from_row_slice(2, 2, &[0.5, 0.0, 0.0, 2.5]),
        )
        .unwrap();
        assert!((NoiseScaleRule::MaxSpectralNorm.magnitude(&u) - 2.5).abs() < 1e-12);
        assert!((NoiseScaleRule::TraceSum.magnitude(&u) - 6.0).abs() < 1e-12);
        // Fading: the scale is linear in a common shrink factor.
        let half = u.scaled(0.5);
        assert!((NoiseScaleRule::MaxSpectralNorm.magnitude(&half) - 1.25).abs() < 1e-12);
    }

    #[test]
    fn config_validation() {
        let mut cfg = benchmark_cfg();
        assert!(cfg.validate(1, 1).is_ok());
        cfg.t_explore = 2;
        assert!(cfg.validate(1, 1).is_err());
        cfg.t_explore = 5;
        cfg.bootstrap_resamples = 1;
        assert!(cfg.validate(1, 1).is_err());
        cfg.bootstrap_resamples = 10;
        cfg.q = s(-1.0);
        assert!(cfg.validate(1, 1).is_err());
    }

    #[test]
    fn benchmark_records_are_structurally_complete() {
        let plant = benchmark_plant();
        let mut cfg = benchmark_cfg();
        cfg.horizon = 40;
        cfg.bootstrap_resamples = 30;
        let seeds = EpisodeSeeds::from_master(11);
        let noise = NoiseRealization::draw(&plant, &cfg.x0_cov, cfg.horizon, &seeds).unwrap();
        let recs = run_adaptive_episode(&plant, &cfg, None, &noise, &seeds).unwrap();
        assert_eq!(recs.len(), 40);
        for r in &recs {
            let exploiting = r.t > cfg.t_explore;
            assert_eq!(r.model.is_some(), exploiting);
            assert_eq!(r.uncertainty.is_some(), exploiting);
            assert_eq!(r.gain.is_some(), exploiting);
            if exploiting && !r.fallback {
                let c = r.c_gamma.unwrap();
                assert!(c > 0.0 && c <= 1.0);
            }
        }
    }

    #[test]
    fn ce_gain_is_dare_of_estimate() {
        let plant = benchmark_plant();
        let mut cfg = benchmark_cfg();
        cfg.horizon = 30;
        cfg.bootstrap_resamples = 20;
        cfg.gamma = 0.0;
        let seeds = EpisodeSeeds::from_master(5);
        let noise = NoiseRealization::draw(&plant, &cfg.x0_cov, cfg.horizon, &seeds).unwrap();
        let recs = run_adaptive_episode(&plant, &cfg, None, &noise, &seeds).unwrap();
        for r in recs.iter().filter(|r| r.model.is_some() && !r.fallback) {
            let model = r.model.as_ref().unwrap();
            let dare = solve_dare(&model.a, &model.b, &cfg.q, &cfg.r).unwrap();
            assert!((r.gain.as_ref().unwrap() - dare.k).abs().max() < 1e-8);
            assert_eq!(r.c_gamma, Some(1.0));
        }
    }

    #[test]
    fn offline_training_length_is_checked() {
        let plant = benchmark_plant();
        let cfg = benchmark_cfg();
        let seeds = EpisodeSeeds::from_master(1);
        let noise = NoiseRealization::draw(&plant, &cfg.x0_cov, cfg.horizon, &seeds).unwrap();
        let short = TrajectoryData::from_rows(&[vec![0.0], vec![1.0]], &[vec![1.0]]).unwrap();
        assert!(run_adaptive_episode(&plant, &cfg, Some(&short), &noise, &seeds).is_err());
    }

    #[test]
    fn fixed_gain_costs_follow_closed_loop() {
        let plant = benchmark_plant();
        let noise = NoiseRealization {
            x0: DVector::from_element(1, 2.0),
            w: vec![DVector::from_element(1, 0.5); 3],
        };
        // u = −x ⇒ x_{t+1} = w_t
        let c = fixed_gain_costs(&plant, &s(-1.0), &s(1.0), &s(0.0), &noise, 3);
        assert_eq!(c, vec![4.0, 0.25, 0.25]);
    }
}
