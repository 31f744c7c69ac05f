//! Semi-parametric residual bootstrap for the least-squares model estimate.
//!
//! Synthetic trajectories are regenerated from the nominal model starting at
//! the recorded `x_0`, replaying the recorded inputs verbatim and adding
//! residuals resampled i.i.d. with replacement. Each replicate is refit, and
//! the spread of the refits around the nominal estimate gives `Σ_A`, `Σ_B`.

use nalgebra::DMatrix;
use rand::Rng;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::linalg::{check_symmetric_psd, symmetric_spectral_norm, vec_col_major};
use crate::scalar::Real;
use crate::seeds::stream_rng;
use crate::sysid::{NominalModel, NormalEquations, TrajectoryData};

/// Covariances of `vec(Ā)` (n²×n²) and `vec(B̄)` (nm×nm), column-major vec.
#[derive(Debug, Clone, PartialEq)]
pub struct UncertaintyEstimate<T: Real> {
    pub sigma_a: DMatrix<T>,
    pub sigma_b: DMatrix<T>,
}

impl<T: Real> UncertaintyEstimate<T> {
    pub fn new(sigma_a: DMatrix<T>, sigma_b: DMatrix<T>) -> Result<Self> {
        check_symmetric_psd(&sigma_a, "sigma_a", 1e-10, 1e-9)?;
        check_symmetric_psd(&sigma_b, "sigma_b", 1e-10, 1e-9)?;
        Ok(Self { sigma_a, sigma_b })
    }

    pub fn zeros(n: usize, m: usize) -> Self {
        Self {
            sigma_a: DMatrix::zeros(n * n, n * n),
            sigma_b: DMatrix::zeros(n * m, n * m),
        }
    }

    pub fn scaled(&self, c: T) -> Self {
        Self {
            sigma_a: &self.sigma_a * c,
            sigma_b: &self.sigma_b * c,
        }
    }

    pub fn trace_a(&self) -> T {
        self.sigma_a.trace()
    }

    pub fn trace_b(&self) -> T {
        self.sigma_b.trace()
    }

    pub fn is_zero(&self) -> bool {
        self.sigma_a
            .iter()
            .chain(self.sigma_b.iter())
            .all(|v| *v == T::zero())
    }

    /// `max(‖Σ_A‖₂, ‖Σ_B‖₂)`.
    pub fn max_spectral_norm(&self) -> T {
        symmetric_spectral_norm(&self.sigma_a).max(symmetric_spectral_norm(&self.sigma_b))
    }
}

/// One-step prediction errors `ŵ_τ = x_{τ+1} − (Â x_τ + B̂ u_τ)`.
#[derive(Debug, Clone, PartialEq)]
pub struct ResidualSet<T: Real> {
    n: usize,
    values: Vec<T>,
}

impl<T: Real> ResidualSet<T> {
    pub fn len(&self) -> usize {
        self.values.len() / self.n.max(1)
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn get(&self, tau: usize) -> &[T] {
        &self.values[tau * self.n..(tau + 1) * self.n]
    }

    pub fn scaled(&self, s: T) -> Self {
        Self {
            n: self.n,
            values: self.values.iter().map(|v| *v * s).collect(),
        }
    }

    /// Residuals with their sample mean removed.
    pub fn centered(&self) -> Self {
        let t = self.len();
        if t == 0 {
            return self.clone();
        }
        let mut mean = vec![T::zero(); self.n];
        for tau in 0..t {
            for (acc, v) in mean.iter_mut().zip(self.get(tau)) {
                *acc += *v;
            }
        }
        let inv = T::one() / T::from_usize(t).unwrap();
        mean.iter_mut().for_each(|v| *v *= inv);
        let values = self
            .values
            .chunks(self.n)
            .flat_map(|w| {
                w.iter()
                    .zip(&mean)
                    .map(|(a, b)| *a - *b)
                    .collect::<Vec<_>>()
            })
            .collect();
        Self { n: self.n, values }
    }
}

fn check_model<T: Real>(data: &TrajectoryData<T>, model: &NominalModel<T>) -> Result<()> {
    if model.state_dim() != data.state_dim() || model.input_dim() != data.input_dim() {
        return Err(Error::dim(format!(
            "model is ({}, {}) but trajectory is ({}, {})",
            model.state_dim(),
            model.input_dim(),
            data.state_dim(),
            data.input_dim()
        )));
    }
    Ok(())
}

pub fn compute_residuals<T: Real>(
    data: &TrajectoryData<T>,
    model: &NominalModel<T>,
) -> Result<ResidualSet<T>> {
    check_model(data, model)?;
    let n = data.state_dim();
    let mut values = Vec::with_capacity(data.len() * n);
    for tau in 0..data.len() {
        let x = data.state_vector(tau);
        let u = data.input_vector(tau);
        let pred = model.predict(&x, &u);
        values.extend(
            data.state(tau + 1)
                .iter()
                .zip(pred.iter())
                .map(|(a, b)| *a - *b),
        );
    }
    Ok(ResidualSet { n, values })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct BootstrapOptions {
    pub resamples: usize,
    /// Subtract the residual mean before resampling. Off by default.
    pub center_residuals: bool,
}

impl BootstrapOptions {
    pub fn new(resamples: usize) -> Self {
        Self {
            resamples,
            center_residuals: false,
        }
    }
}

/// Bootstrap covariance of the least-squares estimate with `resamples`
/// replicates; replicate `k` draws from substream `k` of `seed`.
pub fn bootstrap_model_variance<T: Real>(
    data: &TrajectoryData<T>,
    model: &NominalModel<T>,
    resamples: usize,
    seed: u64,
) -> Result<UncertaintyEstimate<T>> {
    bootstrap_model_variance_with(data, model, BootstrapOptions::new(resamples), seed)
}

pub fn bootstrap_model_variance_with<T: Real>(
    data: &TrajectoryData<T>,
    model: &NominalModel<T>,
    options: BootstrapOptions,
    seed: u64,
) -> Result<UncertaintyEstimate<T>> {
    let residuals = compute_residuals(data, model)?;
    let residuals = if options.center_residuals {
        residuals.centered()
    } else {
        residuals
    };
    bootstrap_from_residuals(data, model, &residuals, options.resamples, seed)
}

/// Bootstrap driven by an explicit residual set (length must match the data).
pub fn bootstrap_from_residuals<T: Real>(
    data: &TrajectoryData<T>,
    model: &NominalModel<T>,
    residuals: &ResidualSet<T>,
    resamples: usize,
    seed: u64,
) -> Result<UncertaintyEstimate<T>> {
    if resamples < 2 {
        return Err(Error::param(format!(
            "bootstrap needs at least 2 resamples, got {resamples}"
        )));
    }
    check_model(data, model)?;
    if data.is_empty() {
        return Err(Error::dim("bootstrap needs at least one transition"));
    }
    if residuals.len() != data.len() || residuals.n != data.state_dim() {
        return Err(Error::dim("residual set does not match trajectory"));
    }
    let (n, m) = (data.state_dim(), data.input_dim());

    let deviations: Vec<Result<(Vec<T>, Vec<T>)>> = (0..resamples)
        .into_par_iter()
        .map(|k| {
            let fit = replicate_fit(data, model, residuals, seed, k as u64).map_err(|e| {
                Error::Replicate {
                    replicate: k,
                    source: Box::new(e),
                }
            })?;
            let da = vec_col_major(&(fit.a - &model.a));
            let db = vec_col_major(&(fit.b - &model.b));
            Ok((da.as_slice().to_vec(), db.as_slice().to_vec()))
        })
        .collect();

    let mut sigma_a = DMatrix::<T>::zeros(n * n, n * n);
    let mut sigma_b = DMatrix::<T>::zeros(n * m, n * m);
    for dev in deviations {
        let (da, db) = dev?;
        accumulate_outer(&mut sigma_a, &da);
        accumulate_outer(&mut sigma_b, &db);
    }
    let norm = T::one() / T::from_usize(resamples - 1).unwrap();
    sigma_a *= norm;
    sigma_b *= norm;
    UncertaintyEstimate::new(sigma_a, sigma_b)
}

fn accumulate_outer<T: Real>(acc: &mut DMatrix<T>, d: &[T]) {
    for (j, &dj) in d.iter().enumerate() {
        for (i, &di) in d.iter().enumerate() {
            acc[(i, j)] += di * dj;
        }
    }
}

fn replicate_fit<T: Real>(
    data: &TrajectoryData<T>,
    model: &NominalModel<T>,
    residuals: &ResidualSet<T>,
    seed: u64,
    replicate: u64,
) -> Result<NominalModel<T>> {
    let mut rng = stream_rng(seed, replicate);
    let (n, m, t) = (data.state_dim(), data.input_dim(), data.len());
    let a = model.a.as_slice();
    let b = model.b.as_slice();
    let inputs = data.flat_inputs();
    let mut ne = NormalEquations::new(n, m);
    ne.reset();
    let mut x: Vec<T> = data.state(0).to_vec();
    let mut next = vec![T::zero(); n];
    for tau in 0..t {
        let u = &inputs[tau * m..(tau + 1) * m];
        let w = residuals.get(rng.random_range(0..t));
        for i in 0..n {
            let mut acc = w[i];
            for (j, xj) in x.iter().enumerate() {
                acc += a[i + j * n] * *xj;
            }
            for (j, uj) in u.iter().enumerate() {
                acc += b[i + j * n] * *uj;
            }
            next[i] = acc;
        }
        ne.add(&x, u, &next);
        std::mem::swap(&mut x, &mut next);
    }
    ne.solve()
}
