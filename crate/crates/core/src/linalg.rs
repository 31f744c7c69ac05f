//! Small dense helpers on top of nalgebra: column-major vectorization,
//! symmetry/PSD validation, symmetric pseudo-inverse and Gaussian sampling.

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};
use crate::scalar::Real;

/// Column-major vectorization (stack columns).
pub fn vec_col_major<T: Real>(m: &DMatrix<T>) -> DVector<T> {
    DVector::from_column_slice(m.as_slice())
}

/// Inverse of [`vec_col_major`].
pub fn unvec_col_major<T: Real>(v: &[T], rows: usize, cols: usize) -> DMatrix<T> {
    assert_eq!(v.len(), rows * cols, "unvec length mismatch");
    DMatrix::from_column_slice(rows, cols, v)
}

pub fn max_abs<T: Real>(m: &DMatrix<T>) -> T {
    m.iter().fold(T::zero(), |acc, v| acc.max(v.abs()))
}

pub fn max_abs_diff<T: Real>(a: &DMatrix<T>, b: &DMatrix<T>) -> T {
    a.iter()
        .zip(b.iter())
        .fold(T::zero(), |acc, (x, y)| acc.max((*x - *y).abs()))
}

pub fn asymmetry<T: Real>(m: &DMatrix<T>) -> T {
    let mut worst = T::zero();
    for i in 0..m.nrows() {
        for j in (i + 1)..m.ncols() {
            worst = worst.max((m[(i, j)] - m[(j, i)]).abs());
        }
    }
    worst
}

pub fn symmetrize<T: Real>(m: &mut DMatrix<T>) {
    let half = T::lit(0.5);
    for i in 0..m.nrows() {
        for j in (i + 1)..m.ncols() {
            let v = (m[(i, j)] + m[(j, i)]) * half;
            m[(i, j)] = v;
            m[(j, i)] = v;
        }
    }
}

pub fn require_square<T: Real>(m: &DMatrix<T>, name: &str) -> Result<usize> {
    if m.nrows() != m.ncols() {
        return Err(Error::dim(format!(
            "`{name}` must be square, got {}x{}",
            m.nrows(),
            m.ncols()
        )));
    }
    Ok(m.nrows())
}

pub fn require_shape<T: Real>(m: &DMatrix<T>, rows: usize, cols: usize, name: &str) -> Result<()> {
    if m.shape() != (rows, cols) {
        return Err(Error::dim(format!(
            "`{name}` must be {rows}x{cols}, got {}x{}",
            m.nrows(),
            m.ncols()
        )));
    }
    Ok(())
}

/// Smallest eigenvalue of a symmetric matrix (`+inf` for an empty one).
pub fn min_eigenvalue<T: Real>(m: &DMatrix<T>) -> T {
    if m.is_empty() {
        return T::max_value().unwrap_or_else(T::one);
    }
    SymmetricEigen::new(m.clone())
        .eigenvalues
        .iter()
        .fold(T::max_value().unwrap_or_else(T::one), |acc, v| acc.min(*v))
}

/// Validates symmetry within `sym_tol` and an eigenvalue floor of `-eig_floor`.
pub fn check_symmetric_psd<T: Real>(
    m: &DMatrix<T>,
    name: &str,
    sym_tol: f64,
    eig_floor: f64,
) -> Result<()> {
    require_square(m, name)?;
    if m.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite(format!("matrix `{name}`")));
    }
    let asym = asymmetry(m);
    if asym > T::lit(sym_tol) {
        return Err(Error::NotSymmetric {
            name: name.to_string(),
            asymmetry: asym.as_f64(),
        });
    }
    let lo = min_eigenvalue(m);
    if lo < -T::lit(eig_floor) {
        return Err(Error::NotPositiveSemidefinite {
            name: name.to_string(),
            min_eigenvalue: lo.as_f64(),
        });
    }
    Ok(())
}

/// Spectral norm of a symmetric matrix (largest absolute eigenvalue).
pub fn symmetric_spectral_norm<T: Real>(m: &DMatrix<T>) -> T {
    if m.is_empty() {
        return T::zero();
    }
    if m.nrows() == 1 {
        return m[(0, 0)].abs();
    }
    SymmetricEigen::new(m.clone())
        .eigenvalues
        .iter()
        .fold(T::zero(), |acc, v| acc.max(v.abs()))
}

/// Moore-Penrose inverse of a symmetric matrix; eigenvalues with magnitude at
/// or below `rel_cutoff * max|λ|` are treated as zero.
pub fn symmetric_pinv<T: Real>(m: &DMatrix<T>, rel_cutoff: T) -> DMatrix<T> {
    let n = m.nrows();
    if n == 1 {
        let v = m[(0, 0)];
        let inv = if v.abs() > T::zero() {
            T::one() / v
        } else {
            T::zero()
        };
        return DMatrix::from_element(1, 1, inv);
    }
    let eig = SymmetricEigen::new(m.clone());
    let top = eig
        .eigenvalues
        .iter()
        .fold(T::zero(), |acc, v| acc.max(v.abs()));
    let cut = rel_cutoff * top;
    let mut out = DMatrix::zeros(n, n);
    for (k, &lambda) in eig.eigenvalues.iter().enumerate() {
        if lambda.abs() <= cut || lambda == T::zero() {
            continue;
        }
        let v = eig.eigenvectors.column(k);
        out += (v * v.transpose()) * (T::one() / lambda);
    }
    out
}

/// Draws zero-mean Gaussian vectors with a fixed PSD covariance.
///
/// The covariance is factored once as `V sqrt(Λ⁺)`, which also handles
/// singular (including zero) covariances.
#[derive(Debug, Clone)]
pub struct GaussianSampler<T: Real> {
    factor: DMatrix<T>,
}

impl<T: Real> GaussianSampler<T> {
    pub fn new(cov: &DMatrix<T>) -> Result<Self> {
        require_square(cov, "covariance")?;
        let dim = cov.nrows();
        let eig = SymmetricEigen::new(cov.clone());
        let mut factor = eig.eigenvectors;
        for (k, lambda) in eig.eigenvalues.iter().enumerate() {
            let s = lambda.max(T::zero()).sqrt();
            factor.column_mut(k).scale_mut(s);
        }
        debug_assert_eq!(factor.shape(), (dim, dim));
        Ok(Self { factor })
    }

    pub fn dim(&self) -> usize {
        self.factor.nrows()
    }

    /// Draws with covariance `scale * cov`. Always consumes `dim` normals from
    /// `rng`, so streams stay aligned regardless of `scale`.
    pub fn sample_scaled<R: Rng + ?Sized>(&self, scale: T, rng: &mut R) -> DVector<T> {
        let z = standard_normal_vector::<T, R>(self.dim(), rng);
        let mut out = &self.factor * z;
        let s = scale.max(T::zero()).sqrt();
        out.scale_mut(s);
        out
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> DVector<T> {
        self.sample_scaled(T::one(), rng)
    }
}

pub fn standard_normal_vector<T: Real, R: Rng + ?Sized>(dim: usize, rng: &mut R) -> DVector<T> {
    DVector::from_fn(dim, |_, _| {
        let z: f64 = rng.sample(StandardNormal);
        T::lit(z)
    })
}
