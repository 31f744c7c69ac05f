//! Standard and generalized (multiplicative-noise) discrete Riccati equations,
//! solved by value iteration, plus the bisection on the uncertainty scale that
//! searches for the largest mean-square-stabilizable fraction.
//!
//! The generalized equation is
//!
//! ```text
//! P = Q + AᵀPA + Σᵢ αᵢ AᵢᵀPAᵢ − AᵀPB (R + BᵀPB + Σⱼ βⱼ BⱼᵀPBⱼ)⁻¹ BᵀPA
//! K = −(R + BᵀPB + Σⱼ βⱼ BⱼᵀPBⱼ)⁻¹ BᵀPA
//! ```
//!
//! where `(αᵢ, Aᵢ)` and `(βⱼ, Bⱼ)` are eigenpairs of `Σ_A` and `Σ_B` with the
//! eigenvectors reshaped column-major into `n×n` and `n×m` matrices.

use nalgebra::{DMatrix, SymmetricEigen};

use crate::bootstrap::UncertaintyEstimate;
use crate::error::{Error, Result};
use crate::linalg::{
    check_symmetric_psd, max_abs, max_abs_diff, require_shape, require_square, symmetric_pinv,
    symmetrize, unvec_col_major,
};
use crate::scalar::Real;

/// Eigenvalues below zero but above `-PSD_FLOOR` are clipped to zero.
pub const PSD_FLOOR: f64 = 1e-9;

/// Eigen-decomposed multiplicative noise covariances.
#[derive(Debug, Clone, PartialEq)]
pub struct NoiseSpectrum<T: Real> {
    pub alphas: Vec<T>,
    pub a_dirs: Vec<DMatrix<T>>,
    pub betas: Vec<T>,
    pub b_dirs: Vec<DMatrix<T>>,
}

impl<T: Real> NoiseSpectrum<T> {
    /// No multiplicative noise at all.
    pub fn empty() -> Self {
        Self {
            alphas: Vec::new(),
            a_dirs: Vec::new(),
            betas: Vec::new(),
            b_dirs: Vec::new(),
        }
    }

    pub fn scaled(&self, c: T) -> Self {
        Self {
            alphas: self.alphas.iter().map(|a| *a * c).collect(),
            a_dirs: self.a_dirs.clone(),
            betas: self.betas.iter().map(|b| *b * c).collect(),
            b_dirs: self.b_dirs.clone(),
        }
    }

    pub fn is_zero(&self) -> bool {
        self.alphas
            .iter()
            .chain(&self.betas)
            .all(|v| *v == T::zero())
    }

    /// Rebuilds `Σ_A` from the spectrum.
    pub fn reconstruct_sigma_a(&self) -> Option<DMatrix<T>> {
        reconstruct(&self.alphas, &self.a_dirs)
    }

    pub fn reconstruct_sigma_b(&self) -> Option<DMatrix<T>> {
        reconstruct(&self.betas, &self.b_dirs)
    }

    /// `Σᵢ αᵢ AᵢᵀPAᵢ`.
    pub fn state_term(&self, p: &DMatrix<T>) -> DMatrix<T> {
        weighted_congruence(&self.alphas, &self.a_dirs, p, p.nrows())
    }

    /// `Σⱼ βⱼ BⱼᵀPBⱼ`; `m` sizes the result when the spectrum is empty.
    pub fn input_term(&self, p: &DMatrix<T>, m: usize) -> DMatrix<T> {
        weighted_congruence(&self.betas, &self.b_dirs, p, m)
    }
}

fn reconstruct<T: Real>(weights: &[T], dirs: &[DMatrix<T>]) -> Option<DMatrix<T>> {
    let d = dirs.first()?.len();
    let mut out = DMatrix::zeros(d, d);
    for (w, dir) in weights.iter().zip(dirs) {
        let v = nalgebra::DVector::from_column_slice(dir.as_slice());
        out += (&v * v.transpose()) * *w;
    }
    Some(out)
}

fn weighted_congruence<T: Real>(
    weights: &[T],
    dirs: &[DMatrix<T>],
    p: &DMatrix<T>,
    dim: usize,
) -> DMatrix<T> {
    let mut out = DMatrix::zeros(dim, dim);
    for (w, dir) in weights.iter().zip(dirs) {
        if *w == T::zero() {
            continue;
        }
        out += (dir.transpose() * p * dir) * *w;
    }
    out
}

fn decompose_block<T: Real>(
    sigma: &DMatrix<T>,
    rows: usize,
    cols: usize,
    name: &str,
) -> Result<(Vec<T>, Vec<DMatrix<T>>)> {
    if sigma.is_empty() {
        return Ok((Vec::new(), Vec::new()));
    }
    let eig = SymmetricEigen::new(sigma.clone());
    let mut order: Vec<usize> = (0..eig.eigenvalues.len()).collect();
    order.sort_by(|&i, &j| {
        eig.eigenvalues[j]
            .partial_cmp(&eig.eigenvalues[i])
            .unwrap_or(std::cmp::Ordering::Equal)
    });
    let mut values = Vec::with_capacity(order.len());
    let mut dirs = Vec::with_capacity(order.len());
    for k in order {
        let mut lambda = eig.eigenvalues[k];
        if lambda < T::zero() {
            if lambda < -T::lit(PSD_FLOOR) {
                return Err(Error::NotPositiveSemidefinite {
                    name: name.to_string(),
                    min_eigenvalue: lambda.as_f64(),
                });
            }
            lambda = T::zero();
        }
        let v = eig.eigenvectors.column(k).into_owned();
        values.push(lambda);
        dirs.push(unvec_col_major(v.as_slice(), rows, cols));
    }
    Ok((values, dirs))
}

/// Eigendecomposes `Σ_A` and `Σ_B` into weights and unit-Frobenius directions.
pub fn decompose_uncertainty<T: Real>(u: &UncertaintyEstimate<T>) -> Result<NoiseSpectrum<T>> {
    let na = u.sigma_a.nrows();
    let n = (na as f64).sqrt().round() as usize;
    if n * n != na || u.sigma_a.ncols() != na {
        return Err(Error::dim(format!(
            "sigma_a must be n²×n², got {}x{}",
            na,
            u.sigma_a.ncols()
        )));
    }
    let nb = require_square(&u.sigma_b, "sigma_b")?;
    if n == 0 || nb % n != 0 {
        return Err(Error::dim(format!(
            "sigma_b dimension {nb} is not a multiple of n = {n}"
        )));
    }
    let m = nb / n;
    let (alphas, a_dirs) = decompose_block(&u.sigma_a, n, n, "sigma_a")?;
    let (betas, b_dirs) = decompose_block(&u.sigma_b, n, m, "sigma_b")?;
    Ok(NoiseSpectrum {
        alphas,
        a_dirs,
        betas,
        b_dirs,
    })
}

/// Value-iteration controls. Convergence and residual checks are scaled by
/// `max(1, max|P|)` so large cost matrices are not held to sub-ulp accuracy.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RiccatiOptions<T: Real> {
    pub tolerance: T,
    pub divergence_bound: T,
    pub max_iterations: usize,
    pub pinv_cutoff: T,
    pub residual_tolerance: T,
}

impl<T: Real> Default for RiccatiOptions<T> {
    fn default() -> Self {
        // Single precision cannot resolve 1e-12 steps; floor at a few ulps.
        let eps = T::default_epsilon();
        Self {
            tolerance: T::lit(1e-12).max(eps * T::lit(64.0)),
            divergence_bound: T::lit(1e12),
            max_iterations: 100_000,
            pinv_cutoff: T::lit(1e-12).max(eps * T::lit(16.0)),
            residual_tolerance: T::lit(1e-9).max(eps * T::lit(1024.0)),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RiccatiSolution<T: Real> {
    pub p: DMatrix<T>,
    pub k: DMatrix<T>,
    pub iterations: usize,
}

/// Problem data checked once so that repeated solves skip validation.
#[derive(Debug, Clone)]
struct Problem<'a, T: Real> {
    a: &'a DMatrix<T>,
    b: &'a DMatrix<T>,
    q: &'a DMatrix<T>,
    r: &'a DMatrix<T>,
}

impl<'a, T: Real> Problem<'a, T> {
    fn new(
        a: &'a DMatrix<T>,
        b: &'a DMatrix<T>,
        q: &'a DMatrix<T>,
        r: &'a DMatrix<T>,
    ) -> Result<Self> {
        let n = require_square(a, "A")?;
        if b.nrows() != n {
            return Err(Error::dim(format!(
                "B must have {n} rows, got {}",
                b.nrows()
            )));
        }
        let m = b.ncols();
        require_shape(q, n, n, "Q")?;
        require_shape(r, m, m, "R")?;
        check_symmetric_psd(q, "Q", 1e-10, 1e-10)?;
        check_symmetric_psd(r, "R", 1e-10, 1e-10)?;
        if a.iter().chain(b.iter()).any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("system matrices".into()));
        }
        Ok(Self { a, b, q, r })
    }

    fn check_spectrum(&self, s: &NoiseSpectrum<T>) -> Result<()> {
        let (n, m) = (self.a.nrows(), self.b.ncols());
        if s.alphas.len() != s.a_dirs.len() || s.betas.len() != s.b_dirs.len() {
            return Err(Error::dim(
                "spectrum weights and directions differ in count",
            ));
        }
        if s.a_dirs.iter().any(|d| d.shape() != (n, n)) {
            return Err(Error::dim(format!(
                "state noise directions must be {n}x{n}"
            )));
        }
        if s.b_dirs.iter().any(|d| d.shape() != (n, m)) {
            return Err(Error::dim(format!(
                "input noise directions must be {n}x{m}"
            )));
        }
        if s.alphas
            .iter()
            .chain(&s.betas)
            .any(|v| *v < T::zero() || !v.is_finite())
        {
            return Err(Error::param(
                "noise variances must be finite and nonnegative",
            ));
        }
        Ok(())
    }

    /// One application of the generalized Riccati map: returns `(P⁺, K(P))`.
    fn step(
        &self,
        spectrum: &NoiseSpectrum<T>,
        p: &DMatrix<T>,
        cutoff: T,
    ) -> (DMatrix<T>, DMatrix<T>) {
        let (a, b) = (self.a, self.b);
        let pa = p * a;
        let pb = p * b;
        let bt_pa = b.transpose() * &pa;
        let mut s = self.r + b.transpose() * &pb;
        if !spectrum.betas.is_empty() {
            s += spectrum.input_term(p, b.ncols());
        }
        let k = -(symmetric_pinv(&s, cutoff) * &bt_pa);
        let mut next = self.q + a.transpose() * &pa + bt_pa.transpose() * &k;
        if !spectrum.alphas.is_empty() {
            next += spectrum.state_term(p);
        }
        symmetrize(&mut next);
        (next, k)
    }

    fn solve(
        &self,
        spectrum: &NoiseSpectrum<T>,
        opts: &RiccatiOptions<T>,
    ) -> Result<RiccatiSolution<T>> {
        let mut p = self.q.clone();
        let mut converged = false;
        let mut iterations = 0;
        while iterations < opts.max_iterations {
            iterations += 1;
            let (next, _) = self.step(spectrum, &p, opts.pinv_cutoff);
            let size = max_abs(&next);
            if !size.is_finite() || size > opts.divergence_bound {
                return Err(Error::MeanSquareUnstabilizable { iterations });
            }
            let diff = max_abs_diff(&next, &p);
            p = next;
            if diff <= opts.tolerance * size.max(T::one()) {
                converged = true;
                break;
            }
        }
        if !converged {
            return Err(Error::MeanSquareUnstabilizable { iterations });
        }
        let (check, k) = self.step(spectrum, &p, opts.pinv_cutoff);
        let scale = max_abs(&p).max(T::one());
        if max_abs_diff(&check, &p) > opts.residual_tolerance * scale {
            return Err(Error::MeanSquareUnstabilizable { iterations });
        }
        Ok(RiccatiSolution { p, k, iterations })
    }
}

/// One application of the generalized Riccati map, `(P⁺, K(P))`.
pub fn gdare_map<T: Real>(
    a: &DMatrix<T>,
    b: &DMatrix<T>,
    q: &DMatrix<T>,
    r: &DMatrix<T>,
    spectrum: &NoiseSpectrum<T>,
    p: &DMatrix<T>,
) -> Result<(DMatrix<T>, DMatrix<T>)> {
    let prob = Problem::new(a, b, q, r)?;
    prob.check_spectrum(spectrum)?;
    require_shape(p, a.nrows(), a.nrows(), "P")?;
    Ok(prob.step(spectrum, p, RiccatiOptions::default().pinv_cutoff))
}

pub fn solve_gdare<T: Real>(
    a: &DMatrix<T>,
    b: &DMatrix<T>,
    q: &DMatrix<T>,
    r: &DMatrix<T>,
    spectrum: &NoiseSpectrum<T>,
) -> Result<RiccatiSolution<T>> {
    solve_gdare_with(a, b, q, r, spectrum, &RiccatiOptions::default())
}

pub fn solve_gdare_with<T: Real>(
    a: &DMatrix<T>,
    b: &DMatrix<T>,
    q: &DMatrix<T>,
    r: &DMatrix<T>,
    spectrum: &NoiseSpectrum<T>,
    opts: &RiccatiOptions<T>,
) -> Result<RiccatiSolution<T>> {
    let prob = Problem::new(a, b, q, r)?;
    prob.check_spectrum(spectrum)?;
    prob.solve(spectrum, opts)
}

pub fn solve_dare<T: Real>(
    a: &DMatrix<T>,
    b: &DMatrix<T>,
    q: &DMatrix<T>,
    r: &DMatrix<T>,
) -> Result<RiccatiSolution<T>> {
    solve_dare_with(a, b, q, r, &RiccatiOptions::default())
}

pub fn solve_dare_with<T: Real>(
    a: &DMatrix<T>,
    b: &DMatrix<T>,
    q: &DMatrix<T>,
    r: &DMatrix<T>,
    opts: &RiccatiOptions<T>,
) -> Result<RiccatiSolution<T>> {
    Problem::new(a, b, q, r)?
        .solve(&NoiseSpectrum::empty(), opts)
        .map_err(|e| match e {
            Error::MeanSquareUnstabilizable { .. } => Error::NotStabilizable,
            other => other,
        })
}

/// A robust design and the fraction `c_γ ∈ [0, 1]` of `γ·(Σ_A, Σ_B)` it was computed at.
#[derive(Debug, Clone, PartialEq)]
pub struct RobustDesign<T: Real> {
    pub solution: RiccatiSolution<T>,
    pub c_gamma: T,
    /// Number of generalized Riccati solves performed.
    pub solves: usize,
}

/// Largest feasible `c_γ ∈ [0, 1]` for `GDARE(A, B, Q, R, c_γ γ Σ_A, c_γ γ Σ_B)`,
/// found by bisection to width `epsilon`. `c = 1` is tried first.
pub fn design_with_bisection<T: Real>(
    a: &DMatrix<T>,
    b: &DMatrix<T>,
    q: &DMatrix<T>,
    r: &DMatrix<T>,
    uncertainty: &UncertaintyEstimate<T>,
    gamma: T,
    epsilon: T,
) -> Result<RobustDesign<T>> {
    let spectrum = decompose_uncertainty(uncertainty)?;
    design_with_spectrum(
        a,
        b,
        q,
        r,
        &spectrum,
        gamma,
        epsilon,
        &RiccatiOptions::default(),
    )
}

#[allow(clippy::too_many_arguments)]
pub fn design_with_spectrum<T: Real>(
    a: &DMatrix<T>,
    b: &DMatrix<T>,
    q: &DMatrix<T>,
    r: &DMatrix<T>,
    spectrum: &NoiseSpectrum<T>,
    gamma: T,
    epsilon: T,
    opts: &RiccatiOptions<T>,
) -> Result<RobustDesign<T>> {
    if !(epsilon > T::zero()) {
        return Err(Error::param("bisection tolerance must be positive"));
    }
    if !(gamma >= T::zero()) || !gamma.is_finite() {
        return Err(Error::param(
            "uncertainty scaling must be finite and nonnegative",
        ));
    }
    let prob = Problem::new(a, b, q, r)?;
    prob.check_spectrum(spectrum)?;

    let solves = std::cell::Cell::new(0);
    let attempt = |c: T| -> Result<Option<RiccatiSolution<T>>> {
        solves.set(solves.get() + 1);
        match prob.solve(&spectrum.scaled(c * gamma), opts) {
            Ok(sol) => Ok(Some(sol)),
            Err(Error::MeanSquareUnstabilizable { .. }) => Ok(None),
            Err(e) => Err(e),
        }
    };

    if let Some(sol) = attempt(T::one())? {
        return Ok(RobustDesign {
            solution: sol,
            c_gamma: T::one(),
            solves: solves.get(),
        });
    }
    if gamma == T::zero() || spectrum.is_zero() {
        return Err(Error::NotStabilizable);
    }
    let mut best = attempt(T::zero())?.ok_or(Error::NotStabilizable)?;
    let (mut lo, mut hi) = (T::zero(), T::one());
    let half = T::lit(0.5);
    while hi - lo >= epsilon {
        let mid = (lo + hi) * half;
        match attempt(mid)? {
            Some(sol) => {
                lo = mid;
                best = sol;
            }
            None => hi = mid,
        }
    }
    Ok(RobustDesign {
        solution: best,
        c_gamma: lo,
        solves: solves.get(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn s(v: f64) -> DMatrix<f64> {
        DMatrix::from_element(1, 1, v)
    }

    fn scalar_spectrum(alpha: f64, beta: f64) -> NoiseSpectrum<f64> {
        NoiseSpectrum {
            alphas: vec![alpha],
            a_dirs: vec![s(1.0)],
            betas: vec![beta],
            b_dirs: vec![s(1.0)],
        }
    }

    #[test]
    fn dare_integrator_with_free_input() {
        let sol = solve_dare(&s(1.0), &s(1.0), &s(1.0), &s(0.0)).unwrap();
        assert!((sol.p[(0, 0)] - 1.0).abs() < 1e-12);
        assert!((sol.k[(0, 0)] + 1.0).abs() < 1e-12);
    }

    #[test]
    fn dare_without_dynamics() {
        let a = DMatrix::zeros(2, 2);
        let b = DMatrix::from_row_slice(2, 1, &[1.0, 0.5]);
        let q = DMatrix::from_row_slice(2, 2, &[2.0, 0.3, 0.3, 1.0]);
        let sol = solve_dare(&a, &b, &q, &s(1.0)).unwrap();
        assert!(max_abs_diff(&sol.p, &q) < 1e-14);
        assert!(max_abs(&sol.k) < 1e-14);
    }

    #[test]
    fn dare_uncontrollable_unstable_mode() {
        let err = solve_dare(&s(2.0), &s(0.0), &s(1.0), &s(1.0)).unwrap_err();
        assert_eq!(err, Error::NotStabilizable);
    }

    #[test]
    fn gdare_scalar_fixed_point() {
        let sol = solve_gdare(
            &s(1.0),
            &s(1.0),
            &s(1.0),
            &s(0.0),
            &scalar_spectrum(0.5, 0.0),
        )
        .unwrap();
        assert!((sol.p[(0, 0)] - 2.0).abs() < 1e-9);
        assert!((sol.k[(0, 0)] + 1.0).abs() < 1e-9);
    }

    #[test]
    fn gdare_infeasible_state_noise() {
        let err = solve_gdare(
            &s(1.0),
            &s(1.0),
            &s(1.0),
            &s(0.0),
            &scalar_spectrum(1.5, 0.0),
        )
        .unwrap_err();
        assert!(matches!(err, Error::MeanSquareUnstabilizable { .. }));
    }

    #[test]
    fn decompose_scalar_and_zero() {
        let u = UncertaintyEstimate::new(s(0.5), s(0.0)).unwrap();
        let sp = decompose_uncertainty(&u).unwrap();
        assert_eq!(sp.alphas, vec![0.5]);
        assert!((sp.a_dirs[0][(0, 0)].abs() - 1.0).abs() < 1e-15);
        assert_eq!(sp.betas, vec![0.0]);

        let z = UncertaintyEstimate::<f64>::zeros(2, 1);
        let sp = decompose_uncertainty(&z).unwrap();
        assert_eq!(sp.alphas.len(), 4);
        assert!(sp.alphas.iter().all(|a| *a == 0.0));
        assert_eq!(sp.b_dirs[0].shape(), (2, 1));
    }

    #[test]
    fn decompose_clips_tiny_negative_and_rejects_large() {
        let tiny = UncertaintyEstimate {
            sigma_a: s(-1e-12),
            sigma_b: s(0.0),
        };
        assert_eq!(decompose_uncertainty(&tiny).unwrap().alphas, vec![0.0]);
        let bad = UncertaintyEstimate {
            sigma_a: s(-1e-6),
            sigma_b: s(0.0),
        };
        assert!(matches!(
            decompose_uncertainty(&bad),
            Err(Error::NotPositiveSemidefinite { .. })
        ));
    }

    #[test]
    fn bisection_short_circuits_when_feasible() {
        let u = UncertaintyEstimate::new(s(0.2), s(0.1)).unwrap();
        let d = design_with_bisection(&s(1.0), &s(1.0), &s(1.0), &s(0.0), &u, 1.0, 0.01).unwrap();
        assert_eq!(d.c_gamma, 1.0);
        assert_eq!(d.solves, 1);
    }

    #[test]
    fn bisection_finds_scalar_boundary() {
        let u = UncertaintyEstimate::new(s(2.0), s(0.0)).unwrap();
        let d = design_with_bisection(&s(1.0), &s(1.0), &s(1.0), &s(0.0), &u, 1.0, 0.01).unwrap();
        assert!(d.c_gamma >= 0.49 && d.c_gamma < 0.5, "c = {}", d.c_gamma);
        // P = 1 / (1 − 2c)
        let expect = 1.0 / (1.0 - 2.0 * d.c_gamma);
        assert!((d.solution.p[(0, 0)] - expect).abs() < 1e-6 * expect);
    }

    #[test]
    fn bisection_rejects_unstabilizable_nominal() {
        let u = UncertaintyEstimate::new(s(0.1), s(0.0)).unwrap();
        let err =
            design_with_bisection(&s(2.0), &s(0.0), &s(1.0), &s(1.0), &u, 1.0, 0.01).unwrap_err();
        assert_eq!(err, Error::NotStabilizable);
    }

    #[test]
    fn bisection_rejects_bad_tolerance() {
        let u = UncertaintyEstimate::<f64>::zeros(1, 1);
        assert!(design_with_bisection(&s(1.0), &s(1.0), &s(1.0), &s(0.0), &u, 1.0, 0.0).is_err());
    }

    #[test]
    fn spectrum_dimension_checks() {
        let sp = NoiseSpectrum {
            alphas: vec![1.0],
            a_dirs: vec![DMatrix::zeros(2, 2)],
            betas: vec![],
            b_dirs: vec![],
        };
        assert!(matches!(
            solve_gdare(&s(1.0), &s(1.0), &s(1.0), &s(0.0), &sp),
            Err(Error::Dimension(_))
        ));
    }

    #[test]
    fn single_precision_solve() {
        let one = DMatrix::<f32>::from_element(1, 1, 1.0);
        let zero = DMatrix::<f32>::zeros(1, 1);
        let sp = NoiseSpectrum {
            alphas: vec![0.5f32],
            a_dirs: vec![one.clone()],
            betas: vec![],
            b_dirs: vec![],
        };
        let sol = solve_gdare(&one, &one, &one, &zero, &sp).unwrap();
        assert!((sol.p[(0, 0)] - 2.0).abs() < 1e-4);
    }
}
