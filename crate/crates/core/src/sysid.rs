//! Least-squares identification of `x_{t+1} = A x_t + B u_t + w_t` from
//! state/input trajectories, in batch and recursive (rank-one) form.

use nalgebra::{DMatrix, DVector, SymmetricEigen};

use crate::error::{Error, Result};
use crate::linalg::{check_symmetric_psd, require_shape, require_square};
use crate::scalar::Real;

/// Relative eigenvalue threshold below which the gram matrix is rejected.
pub const GRAM_RANK_THRESHOLD: f64 = 1e-10;

/// A state trajectory `x_0 .. x_t` and the inputs `u_0 .. u_{t-1}` that drove it.
///
/// Stored flat, one row per time step, so bootstrap replicates and prefix
/// fits can walk it without per-step allocation.
#[derive(Debug, Clone, PartialEq)]
pub struct TrajectoryData<T: Real> {
    n: usize,
    m: usize,
    states: Vec<T>,
    inputs: Vec<T>,
}

impl<T: Real> TrajectoryData<T> {
    pub fn new(states: &[DVector<T>], inputs: &[DVector<T>]) -> Result<Self> {
        let first = states
            .first()
            .ok_or_else(|| Error::dim("trajectory needs at least an initial state"))?;
        if states.len() != inputs.len() + 1 {
            return Err(Error::dim(format!(
                "expected {} states for {} inputs, got {}",
                inputs.len() + 1,
                inputs.len(),
                states.len()
            )));
        }
        let n = first.len();
        let m = inputs.first().map_or(0, |u| u.len());
        if n == 0 {
            return Err(Error::dim("state dimension must be positive"));
        }
        if let Some((i, _)) = states.iter().enumerate().find(|(_, x)| x.len() != n) {
            return Err(Error::dim(format!("state {i} has dimension != {n}")));
        }
        if let Some((i, _)) = inputs.iter().enumerate().find(|(_, u)| u.len() != m) {
            return Err(Error::dim(format!("input {i} has dimension != {m}")));
        }
        Ok(Self {
            n,
            m,
            states: states.iter().flat_map(|x| x.iter().copied()).collect(),
            inputs: inputs.iter().flat_map(|u| u.iter().copied()).collect(),
        })
    }

    /// Builds from rows of plain numbers.
    pub fn from_rows(states: &[Vec<T>], inputs: &[Vec<T>]) -> Result<Self> {
        let s: Vec<_> = states.iter().map(|r| DVector::from_row_slice(r)).collect();
        let u: Vec<_> = inputs.iter().map(|r| DVector::from_row_slice(r)).collect();
        Self::new(&s, &u)
    }

    /// An empty trajectory holding only `x_0`, for input dimension `m`.
    pub fn starting_at(x0: &DVector<T>, m: usize) -> Self {
        Self {
            n: x0.len(),
            m,
            states: x0.iter().copied().collect(),
            inputs: Vec::new(),
        }
    }

    /// Appends one transition `(u_t, x_{t+1})`.
    pub fn push(&mut self, u: &DVector<T>, x_next: &DVector<T>) -> Result<()> {
        if u.len() != self.m || x_next.len() != self.n {
            return Err(Error::dim(format!(
                "transition dims ({}, {}) do not match trajectory ({}, {})",
                u.len(),
                x_next.len(),
                self.m,
                self.n
            )));
        }
        self.inputs.extend(u.iter().copied());
        self.states.extend(x_next.iter().copied());
        Ok(())
    }

    pub fn state_dim(&self) -> usize {
        self.n
    }

    pub fn input_dim(&self) -> usize {
        self.m
    }

    /// Number of transitions `t`.
    pub fn len(&self) -> usize {
        self.inputs
            .len()
            .checked_div(self.m)
            .unwrap_or_else(|| self.states.len() / self.n - 1)
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn state(&self, i: usize) -> &[T] {
        &self.states[i * self.n..(i + 1) * self.n]
    }

    pub fn input(&self, i: usize) -> &[T] {
        &self.inputs[i * self.m..(i + 1) * self.m]
    }

    pub fn state_vector(&self, i: usize) -> DVector<T> {
        DVector::from_column_slice(self.state(i))
    }

    pub fn input_vector(&self, i: usize) -> DVector<T> {
        DVector::from_column_slice(self.input(i))
    }

    /// The first `t` transitions (`x_0 .. x_t`, `u_0 .. u_{t-1}`).
    pub fn prefix(&self, t: usize) -> Result<Self> {
        if t > self.len() {
            return Err(Error::dim(format!(
                "prefix of {t} transitions requested from trajectory of {}",
                self.len()
            )));
        }
        Ok(Self {
            n: self.n,
            m: self.m,
            states: self.states[..(t + 1) * self.n].to_vec(),
            inputs: self.inputs[..t * self.m].to_vec(),
        })
    }

    pub(crate) fn flat_inputs(&self) -> &[T] {
        &self.inputs
    }
}

/// A nominal model estimate `(Â, B̂)`.
#[derive(Debug, Clone, PartialEq)]
pub struct NominalModel<T: Real> {
    pub a: DMatrix<T>,
    pub b: DMatrix<T>,
}

impl<T: Real> NominalModel<T> {
    pub fn new(a: DMatrix<T>, b: DMatrix<T>) -> Result<Self> {
        let n = require_square(&a, "A")?;
        if b.nrows() != n {
            return Err(Error::dim(format!(
                "B must have {n} rows, got {}",
                b.nrows()
            )));
        }
        Ok(Self { a, b })
    }

    pub fn state_dim(&self) -> usize {
        self.a.nrows()
    }

    pub fn input_dim(&self) -> usize {
        self.b.ncols()
    }

    /// `Â x + B̂ u`.
    pub fn predict(&self, x: &DVector<T>, u: &DVector<T>) -> DVector<T> {
        &self.a * x + &self.b * u
    }
}

/// A linear plant `(A, B)` with additive process-noise covariance `W`.
#[derive(Debug, Clone, PartialEq)]
pub struct LinearSystemModel<T: Real> {
    pub a: DMatrix<T>,
    pub b: DMatrix<T>,
    pub w: DMatrix<T>,
}

impl<T: Real> LinearSystemModel<T> {
    pub fn new(a: DMatrix<T>, b: DMatrix<T>, w: DMatrix<T>) -> Result<Self> {
        let n = require_square(&a, "A")?;
        if b.nrows() != n {
            return Err(Error::dim(format!(
                "B must have {n} rows, got {}",
                b.nrows()
            )));
        }
        require_shape(&w, n, n, "W")?;
        check_symmetric_psd(&w, "W", 1e-10, 1e-10)?;
        Ok(Self { a, b, w })
    }

    pub fn state_dim(&self) -> usize {
        self.a.nrows()
    }

    pub fn input_dim(&self) -> usize {
        self.b.ncols()
    }

    pub fn nominal(&self) -> NominalModel<T> {
        NominalModel {
            a: self.a.clone(),
            b: self.b.clone(),
        }
    }

    pub fn step(&self, x: &DVector<T>, u: &DVector<T>, w: &DVector<T>) -> DVector<T> {
        &self.a * x + &self.b * u + w
    }
}

/// Stacked regression matrices: row τ of `z` is `[x_τ; u_τ]ᵀ`, row τ of `x`
/// is `x_{τ+1}ᵀ`.
#[derive(Debug, Clone, PartialEq)]
pub struct DataMatrices<T: Real> {
    pub x: DMatrix<T>,
    pub z: DMatrix<T>,
    pub gram: DMatrix<T>,
}

pub fn build_data_matrices<T: Real>(data: &TrajectoryData<T>) -> Result<DataMatrices<T>> {
    let t = data.len();
    if t == 0 {
        return Err(Error::dim("at least one transition is required"));
    }
    let (n, m) = (data.state_dim(), data.input_dim());
    let x = DMatrix::from_fn(t, n, |r, c| data.state(r + 1)[c]);
    let z = DMatrix::from_fn(t, n + m, |r, c| {
        if c < n {
            data.state(r)[c]
        } else {
            data.input(r)[c - n]
        }
    });
    let gram = z.transpose() * &z;
    Ok(DataMatrices { x, z, gram })
}

/// Sufficient statistics `ZᵀZ` and `ZᵀX` accumulated one transition at a time.
#[derive(Debug, Clone)]
pub(crate) struct NormalEquations<T: Real> {
    n: usize,
    m: usize,
    gram: Vec<T>,
    cross: Vec<T>,
    z: Vec<T>,
}

impl<T: Real> NormalEquations<T> {
    pub(crate) fn new(n: usize, m: usize) -> Self {
        let p = n + m;
        Self {
            n,
            m,
            gram: vec![T::zero(); p * p],
            cross: vec![T::zero(); p * n],
            z: vec![T::zero(); p],
        }
    }

    pub(crate) fn reset(&mut self) {
        self.gram.iter_mut().for_each(|v| *v = T::zero());
        self.cross.iter_mut().for_each(|v| *v = T::zero());
    }

    #[inline]
    pub(crate) fn add(&mut self, x: &[T], u: &[T], x_next: &[T]) {
        let (n, p) = (self.n, self.n + self.m);
        self.z[..n].copy_from_slice(x);
        self.z[n..].copy_from_slice(u);
        // Column-major (p x p) and (p x n); only the upper triangle of gram.
        for j in 0..p {
            let zj = self.z[j];
            for i in 0..=j {
                self.gram[i + j * p] += self.z[i] * zj;
            }
        }
        for (j, &xj) in x_next.iter().enumerate() {
            for i in 0..p {
                self.cross[i + j * p] += self.z[i] * xj;
            }
        }
    }

    pub(crate) fn solve(&self) -> Result<NominalModel<T>> {
        let p = self.n + self.m;
        let mut gram = DMatrix::from_column_slice(p, p, &self.gram);
        for j in 0..p {
            for i in 0..j {
                gram[(j, i)] = gram[(i, j)];
            }
        }
        let cross = DMatrix::from_column_slice(p, self.n, &self.cross);
        solve_normal_equations(&gram, &cross, self.n)
    }
}

/// Inverts the gram matrix through its symmetric eigendecomposition,
/// refusing when the smallest eigenvalue falls below the relative threshold.
pub(crate) fn gram_inverse<T: Real>(gram: &DMatrix<T>) -> Result<DMatrix<T>> {
    let p = gram.nrows();
    let eig = SymmetricEigen::new(gram.clone());
    let hi = eig
        .eigenvalues
        .iter()
        .fold(T::zero(), |a, v| a.max(v.abs()));
    let lo = eig
        .eigenvalues
        .iter()
        .fold(T::max_value().unwrap_or(hi), |a, v| a.min(*v));
    if !(hi > T::zero()) || !(lo > T::lit(GRAM_RANK_THRESHOLD) * hi) {
        let condition = if lo > T::zero() {
            (hi / lo).as_f64()
        } else {
            f64::INFINITY
        };
        return Err(Error::InsufficientExcitation { condition });
    }
    let mut inv = DMatrix::zeros(p, p);
    for (k, &lambda) in eig.eigenvalues.iter().enumerate() {
        let v = eig.eigenvectors.column(k);
        inv += (v * v.transpose()) * (T::one() / lambda);
    }
    Ok(inv)
}

fn solve_normal_equations<T: Real>(
    gram: &DMatrix<T>,
    cross: &DMatrix<T>,
    n: usize,
) -> Result<NominalModel<T>> {
    let inv = gram_inverse(gram)?;
    // θ = (ZᵀX)ᵀ (ZᵀZ)⁻¹ = [Â B̂]
    let theta = cross.transpose() * inv;
    split_theta(&theta, n)
}

fn split_theta<T: Real>(theta: &DMatrix<T>, n: usize) -> Result<NominalModel<T>> {
    let p = theta.ncols();
    Ok(NominalModel {
        a: theta.columns(0, n).into_owned(),
        b: theta.columns(n, p - n).into_owned(),
    })
}

/// Ordinary least squares `[Â B̂] = XᵀZ (ZᵀZ)⁻¹` over every transition.
pub fn least_squares_estimate<T: Real>(data: &TrajectoryData<T>) -> Result<NominalModel<T>> {
    if data.is_empty() {
        return Err(Error::dim("at least one transition is required"));
    }
    least_squares_from_transitions(
        data.state_dim(),
        data.input_dim(),
        (0..data.len()).map(|tau| (data.state(tau), data.input(tau), data.state(tau + 1))),
    )
}

/// Ordinary least squares over an arbitrary collection of transitions
/// `(x, u, x_next)`, which need not form a single trajectory.
pub fn least_squares_from_transitions<'a, T, I>(
    n: usize,
    m: usize,
    transitions: I,
) -> Result<NominalModel<T>>
where
    T: Real,
    I: IntoIterator<Item = (&'a [T], &'a [T], &'a [T])>,
{
    let mut ne = NormalEquations::new(n, m);
    let mut count = 0;
    for (x, u, x_next) in transitions {
        if x.len() != n || u.len() != m || x_next.len() != n {
            return Err(Error::dim(format!(
                "transition {count} has sizes ({}, {}, {}), expected ({n}, {m}, {n})",
                x.len(),
                u.len(),
                x_next.len()
            )));
        }
        ne.add(x, u, x_next);
        count += 1;
    }
    if count == 0 {
        return Err(Error::dim("at least one transition is required"));
    }
    ne.solve()
}

#[derive(Debug, Clone)]
struct RlsState<T: Real> {
    theta: DMatrix<T>,
    gram_inv: DMatrix<T>,
    count: usize,
}

/// Recursive least squares via Sherman-Morrison updates of `(ZᵀZ)⁻¹`.
#[derive(Debug, Clone)]
pub struct RecursiveEstimator<T: Real> {
    n: usize,
    m: usize,
    state: Option<RlsState<T>>,
}

impl<T: Real> RecursiveEstimator<T> {
    pub fn new(n: usize, m: usize) -> Self {
        Self { n, m, state: None }
    }

    pub fn is_initialized(&self) -> bool {
        self.state.is_some()
    }

    /// Number of transitions absorbed so far.
    pub fn count(&self) -> usize {
        self.state.as_ref().map_or(0, |s| s.count)
    }

    /// Seeds the estimator with a batch fit; needs at least `n + m` transitions.
    pub fn initialize(&mut self, data: &TrajectoryData<T>) -> Result<NominalModel<T>> {
        if data.state_dim() != self.n || data.input_dim() != self.m {
            return Err(Error::dim("trajectory dimensions do not match estimator"));
        }
        if data.len() < self.n + self.m {
            return Err(Error::param(format!(
                "initialization needs at least {} transitions, got {}",
                self.n + self.m,
                data.len()
            )));
        }
        let dm = build_data_matrices(data)?;
        let gram_inv = gram_inverse(&dm.gram)?;
        let theta = (dm.z.transpose() * &dm.x).transpose() * &gram_inv;
        let model = split_theta(&theta, self.n)?;
        self.state = Some(RlsState {
            theta,
            gram_inv,
            count: data.len(),
        });
        Ok(model)
    }

    /// Absorbs one transition `(x_τ, u_τ, x_{τ+1})` and returns the refreshed estimate.
    pub fn update(
        &mut self,
        x: &DVector<T>,
        u: &DVector<T>,
        x_next: &DVector<T>,
    ) -> Result<NominalModel<T>> {
        let (n, m) = (self.n, self.m);
        let st = self.state.as_mut().ok_or(Error::Uninitialized)?;
        if x.len() != n || u.len() != m || x_next.len() != n {
            return Err(Error::dim("transition dimensions do not match estimator"));
        }
        let z = DVector::from_iterator(n + m, x.iter().chain(u.iter()).copied());
        let pz = &st.gram_inv * &z;
        let denom = T::one() + z.dot(&pz);
        let gain = &pz / denom;
        let err = x_next - &st.theta * &z;
        st.theta += &err * gain.transpose();
        st.gram_inv -= &pz * gain.transpose();
        crate::linalg::symmetrize(&mut st.gram_inv);
        st.count += 1;
        split_theta(&st.theta, n)
    }

    pub fn estimate(&self) -> Result<NominalModel<T>> {
        let st = self.state.as_ref().ok_or(Error::Uninitialized)?;
        split_theta(&st.theta, self.n)
    }
}
