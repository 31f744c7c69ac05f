//! Robust adaptive control of linear systems.
//!
//! Least-squares identification, a semi-parametric residual bootstrap for
//! model uncertainty, a multiplicative-noise LQR design against that
//! uncertainty, the adaptive loop combining them, and a Monte Carlo harness
//! comparing the robust design against certainty equivalence by regret.
//!
//! Everything numeric is generic over [`Real`] (`f32` or `f64`); the `*64`
//! aliases below are the double-precision instantiations used by the CLI.

// `!(x > 0)` style checks are deliberate: they also reject NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod adaptive;
pub mod bootstrap;
pub mod error;
pub mod harness;
pub mod linalg;
pub mod riccati;
pub mod scalar;
pub mod seeds;
pub mod sysid;

pub use adaptive::{ControllerConfig, NoiseScaleRule, StepRecord};
pub use bootstrap::{ResidualSet, UncertaintyEstimate};
pub use error::{Error, Result};
pub use harness::{Arm, ExperimentConfig, RegretRecord};
pub use riccati::{NoiseSpectrum, RiccatiOptions, RiccatiSolution, RobustDesign};
pub use scalar::Real;
pub use sysid::{DataMatrices, LinearSystemModel, NominalModel, TrajectoryData};

pub type Matrix<T> = nalgebra::DMatrix<T>;
pub type Vector<T> = nalgebra::DVector<T>;

pub type Matrix64 = Matrix<f64>;
pub type Vector64 = Vector<f64>;
pub type TrajectoryData64 = TrajectoryData<f64>;
pub type LinearSystemModel64 = LinearSystemModel<f64>;
pub type NominalModel64 = NominalModel<f64>;
pub type UncertaintyEstimate64 = UncertaintyEstimate<f64>;
pub type NoiseSpectrum64 = NoiseSpectrum<f64>;
pub type RiccatiSolution64 = RiccatiSolution<f64>;
pub type ControllerConfig64 = ControllerConfig<f64>;
pub type ExperimentConfig64 = ExperimentConfig<f64>;
pub type RegretRecord64 = RegretRecord<f64>;
pub type StepRecord64 = StepRecord<f64>;
