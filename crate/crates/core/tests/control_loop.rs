use nalgebra::{DMatrix, DVector};
use rmn_core::adaptive::{
    exploitation_input, exploration_input, fixed_gain_costs, run_adaptive_episode, EpisodeSeeds,
    NoiseRealization, NoiseScaleRule,
};
use rmn_core::harness::{
    generate_training_data, optimal_baseline, run_experiment, sample_seeds, summarize,
    summarize_values, Arm,
};
use rmn_core::linalg::{standard_normal_vector, GaussianSampler};
use rmn_core::riccati::solve_dare;
use rmn_core::seeds::{derive, stream_rng};
use rmn_core::{ControllerConfig, ExperimentConfig, LinearSystemModel, UncertaintyEstimate};

fn s(v: f64) -> DMatrix<f64> {
    DMatrix::from_element(1, 1, v)
}

fn benchmark_plant() -> LinearSystemModel<f64> {
    LinearSystemModel::new(s(1.0), s(1.0), s(1.0)).unwrap()
}

fn benchmark_controller() -> ControllerConfig<f64> {
    ControllerConfig::new(s(1.0), s(0.0))
}

fn two_state_plant(w: f64) -> LinearSystemModel<f64> {
    LinearSystemModel::new(
        DMatrix::from_row_slice(2, 2, &[1.05, 0.3, 0.0, 0.8]),
        DMatrix::from_row_slice(2, 1, &[0.2, 1.0]),
        DMatrix::identity(2, 2) * w,
    )
    .unwrap()
}

#[test]
fn exploration_covariance_matches() {
    let u = DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 0.0, 1.0]);
    let mut rng = stream_rng(17, 0);
    let draws = 100_000;
    let mut cov = DMatrix::<f64>::zeros(2, 2);
    for _ in 0..draws {
        let v = exploration_input(&u, &mut rng).unwrap();
        cov += &v * v.transpose();
    }
    cov /= draws as f64;
    assert!((&cov - &u).norm() < 0.05 * u.norm(), "{cov}");
    assert!(exploration_input(&DMatrix::<f64>::zeros(2, 3), &mut rng).is_err());
}

#[test]
fn exploitation_noise_variance_follows_uncertainty() {
    let unc = UncertaintyEstimate::new(s(0.25), s(0.0)).unwrap();
    let sampler = GaussianSampler::new(&s(1.0)).unwrap();
    let mut rng = stream_rng(23, 0);
    let draws = 100_000;
    let x = DVector::from_element(1, 3.0);
    let gain = s(-0.5);
    let mut sum = 0.0;
    let mut sq = 0.0;
    for _ in 0..draws {
        let u = exploitation_input(
            &gain,
            &x,
            &unc,
            &sampler,
            NoiseScaleRule::MaxSpectralNorm,
            &mut rng,
        )
        .unwrap();
        let e = u[0] + 1.5;
        sum += e;
        sq += e * e;
    }
    let mean = sum / draws as f64;
    let var = sq / draws as f64 - mean * mean;
    assert!((var - 0.25).abs() < 0.05 * 0.25, "variance {var}");
}

#[test]
fn excitation_fades_with_uncertainty() {
    let base = UncertaintyEstimate::new(
        DMatrix::from_row_slice(
            4,
            4,
            &[
                0.4, 0.1, 0.0, 0.0, 0.1, 0.3, 0.0, 0.0, 0.0, 0.0, 0.2, 0.0, 0.0, 0.0, 0.0, 0.1,
            ],
        ),
        DMatrix::from_row_slice(2, 2, &[0.5, 0.2, 0.2, 0.3]),
    )
    .unwrap();
    for rule in [NoiseScaleRule::MaxSpectralNorm, NoiseScaleRule::TraceSum] {
        let scales: Vec<f64> = [1.0, 0.5, 0.1, 1e-3, 0.0]
            .iter()
            .map(|&c| rule.magnitude(&base.scaled(c)))
            .collect();
        assert!(
            scales.windows(2).all(|w| w[1] < w[0]),
            "{rule:?}: {scales:?}"
        );
        assert_eq!(*scales.last().unwrap(), 0.0);
    }
}

#[test]
fn certainty_equivalence_with_perfect_model_is_optimal() {
    // No process noise: exploration data identifies the plant exactly and
    // every bootstrap replicate sees zero residuals.
    let plant = two_state_plant(0.0);
    let mut cfg = ControllerConfig::new(DMatrix::identity(2, 2), s(0.5));
    cfg.gamma = 0.0;
    cfg.horizon = 30;
    let seeds = EpisodeSeeds::from_master(5);
    let noise = NoiseRealization::draw(&plant, &cfg.x0_cov, cfg.horizon, &seeds).unwrap();
    let recs = run_adaptive_episode(&plant, &cfg, None, &noise, &seeds).unwrap();
    let optimal = solve_dare(&plant.a, &plant.b, &cfg.q, &cfg.r).unwrap().k;
    for rec in recs.iter().filter(|r| r.t > cfg.t_explore) {
        let gain = rec.gain.as_ref().unwrap();
        assert!((gain - &optimal).amax() < 1e-8, "t = {}", rec.t);
        assert!((&rec.u - &optimal * &rec.x).amax() < 1e-8 * rec.x.amax().max(1.0));
    }
}

#[test]
fn online_gains_are_dare_of_estimates_when_gamma_is_zero() {
    let plant = two_state_plant(0.1);
    let mut cfg = ControllerConfig::new(DMatrix::identity(2, 2), s(1.0));
    cfg.gamma = 0.0;
    cfg.horizon = 40;
    cfg.bootstrap_resamples = 30;
    let seeds = EpisodeSeeds::from_master(8);
    let noise = NoiseRealization::draw(&plant, &cfg.x0_cov, cfg.horizon, &seeds).unwrap();
    let recs = run_adaptive_episode(&plant, &cfg, None, &noise, &seeds).unwrap();
    for rec in recs.iter().filter(|r| r.t > cfg.t_explore && !r.fallback) {
        let model = rec.model.as_ref().unwrap();
        let k = solve_dare(&model.a, &model.b, &cfg.q, &cfg.r).unwrap().k;
        assert!((rec.gain.as_ref().unwrap() - k).amax() < 1e-8);
        assert_eq!(rec.c_gamma, Some(1.0));
    }
    assert_eq!(
        recs,
        run_adaptive_episode(&plant, &cfg, None, &noise, &seeds).unwrap()
    );
}

#[test]
fn offline_arms_share_estimates_and_exploration() {
    let plant = benchmark_plant();
    let mut robust = benchmark_controller();
    robust.horizon = 60;
    robust.bootstrap_resamples = 40;
    let mut ce = robust.clone();
    ce.gamma = 0.0;
    let seeds = sample_seeds(99, 3);
    let training = generate_training_data(&plant, robust.horizon, seeds.training).unwrap();
    let noise =
        NoiseRealization::draw(&plant, &robust.x0_cov, robust.horizon, &seeds.episode).unwrap();
    let a = run_adaptive_episode(&plant, &ce, Some(&training), &noise, &seeds.episode).unwrap();
    let b = run_adaptive_episode(&plant, &robust, Some(&training), &noise, &seeds.episode).unwrap();
    for (x, y) in a.iter().zip(&b) {
        assert_eq!(x.model, y.model);
        assert_eq!(x.uncertainty, y.uncertainty);
        if x.t <= ce.t_explore {
            assert_eq!(x.stage_cost, y.stage_cost);
            assert_eq!(x.u, y.u);
        }
    }
    assert!(a.iter().zip(&b).any(|(x, y)| x.gain != y.gain));
}

#[test]
fn optimal_gain_and_baseline_on_benchmark() {
    let plant = benchmark_plant();
    let ctrl = benchmark_controller();
    let k = solve_dare(&plant.a, &plant.b, &ctrl.q, &ctrl.r).unwrap().k;
    assert!((k[(0, 0)] + 1.0).abs() < 1e-9);

    let horizon = 50;
    let noises: Vec<_> = (0..10_000)
        .map(|i| {
            NoiseRealization::draw(&plant, &ctrl.x0_cov, horizon, &sample_seeds(7, i).episode)
                .unwrap()
        })
        .collect();
    let baseline = optimal_baseline(&plant, &ctrl.q, &ctrl.r, horizon, &noises).unwrap();
    assert!(
        baseline[1..].iter().all(|c| (0.95..=1.05).contains(c)),
        "{baseline:?}"
    );

    let single = optimal_baseline(&plant, &ctrl.q, &ctrl.r, horizon, &noises[..1]).unwrap();
    assert_eq!(
        single,
        fixed_gain_costs(&plant, &k, &ctrl.q, &ctrl.r, &noises[0], horizon)
    );
}

#[test]
fn baseline_is_zero_without_noise() {
    let plant = LinearSystemModel::new(s(1.0), s(1.0), s(0.0)).unwrap();
    let noise = NoiseRealization::draw(&plant, &s(0.0), 20, &EpisodeSeeds::from_master(1)).unwrap();
    let c = optimal_baseline(&plant, &s(1.0), &s(0.0), 20, &[noise]).unwrap();
    assert!(c.iter().all(|v| *v == 0.0));
}

/// The optimal controller's regret against a baseline built from a disjoint
/// set of realizations averages to zero.
#[test]
fn optimal_controller_has_no_regret_on_average() {
    let plant = benchmark_plant();
    let ctrl = benchmark_controller();
    let horizon = 100;
    let draw = |master: u64, count: usize| -> Vec<_> {
        (0..count)
            .map(|i| {
                NoiseRealization::draw(
                    &plant,
                    &ctrl.x0_cov,
                    horizon,
                    &sample_seeds(master, i).episode,
                )
                .unwrap()
            })
            .collect()
    };
    let baseline = optimal_baseline(&plant, &ctrl.q, &ctrl.r, horizon, &draw(1, 3000)).unwrap();
    let k = solve_dare(&plant.a, &plant.b, &ctrl.q, &ctrl.r).unwrap().k;
    let held_out = draw(2, 3000);
    let mut total = 0.0;
    for noise in &held_out {
        let costs = fixed_gain_costs(&plant, &k, &ctrl.q, &ctrl.r, noise, horizon);
        total += costs.iter().zip(&baseline).map(|(c, b)| c - b).sum::<f64>();
    }
    let mean_regret = total / (held_out.len() * horizon) as f64;
    // Per-step costs are χ²₁ with variance 2; the double average has a
    // standard error near sqrt(4 / (3000 · 100)) ≈ 0.004.
    assert!(mean_regret.abs() < 0.02, "{mean_regret}");
}

fn small_experiment(samples: usize, seed: u64) -> ExperimentConfig<f64> {
    let mut ctrl = benchmark_controller();
    ctrl.horizon = 40;
    ctrl.bootstrap_resamples = 30;
    ExperimentConfig::new(benchmark_plant(), ctrl, samples, seed)
}

#[test]
fn zero_gamma_collapses_arms() {
    let mut cfg = small_experiment(20, 4);
    cfg.controller.gamma = 0.0;
    let rec = run_experiment(&cfg).unwrap();
    let ce = rec.arm(Arm::CertaintyEquivalent).unwrap();
    let rmn = rec.arm(Arm::Robust).unwrap();
    assert_eq!(ce.regret, rmn.regret);
    assert_eq!(ce.c_gamma, rmn.c_gamma);
    let tables = summarize(&rec, &cfg.quantiles).unwrap();
    assert_eq!(tables.regret[0].1, tables.regret[1].1);
}

#[test]
fn experiments_are_reproducible_and_paired() {
    let cfg = small_experiment(12, 31);
    let first = run_experiment(&cfg).unwrap();
    assert_eq!(first, run_experiment(&cfg).unwrap());
    let ce = first.arm(Arm::CertaintyEquivalent).unwrap();
    let rmn = first.arm(Arm::Robust).unwrap();
    assert_eq!(ce.sample_ids, rmn.sample_ids);
    assert_eq!(ce.noise_digests, rmn.noise_digests);
    let mut distinct = ce.noise_digests.clone();
    distinct.sort();
    distinct.dedup();
    assert_eq!(distinct.len(), ce.noise_digests.len());

    let other = run_experiment(&small_experiment(12, 32)).unwrap();
    assert_ne!(first.baseline, other.baseline);
}

#[test]
fn quantiles_are_monotone_in_level() {
    let cfg = small_experiment(30, 12);
    let levels = [0.1, 0.5, 0.9, 0.95, 0.99, 0.999];
    let tables = summarize(&run_experiment(&cfg).unwrap(), &levels).unwrap();
    let rows = tables
        .regret
        .iter()
        .flat_map(|(_, rows)| rows)
        .chain(tables.model_error.iter().flat_map(|(_, rows)| rows));
    for row in rows {
        let q: Vec<f64> = row.summary.quantiles.iter().map(|(_, v)| *v).collect();
        assert!(q.windows(2).all(|w| w[0] <= w[1]), "t = {}: {q:?}", row.t);
    }
}

#[test]
fn gaussian_upper_quantile() {
    let mut rng = stream_rng(derive(3, 3), 0);
    let draws: Vec<f64> = standard_normal_vector::<f64, _>(10_000, &mut rng)
        .iter()
        .copied()
        .collect();
    let summary = summarize_values(&draws, &[0.99]).unwrap();
    assert!((summary.quantiles[0].1 - 2.326).abs() < 0.1, "{summary:?}");
}
