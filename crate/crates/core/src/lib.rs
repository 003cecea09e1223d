//! Volatility-stabilized market models in the many-particle limit.
//!
//! * [`model`]: parameters `(η, N, T)` and initial laws `λ`.
//! * [`particle`]: Euler simulation of the rescaled particle system.
//! * [`limit_law`]: the explicit limit `ρ(t)` (density, CDF, quantiles,
//!   exact sampler) built on the modified Bessel function in [`bessel`].
//! * [`pde`]: finite-volume solver of the limiting Fokker–Planck equation
//!   and weak-form residuals.
//! * [`measures`]: empirical measures, Wasserstein-1 and Lévy metrics,
//!   market weights, rank comparisons.
//! * [`experiment`]: configuration-driven, reproducible experiments.

// `!(x > 0.0)` is used on purpose: it also rejects NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod bessel;
pub mod error;
pub mod experiment;
pub mod limit_law;
pub mod measures;
pub mod model;
pub mod particle;
pub mod pde;
pub mod quad;
pub mod rng;

pub use error::{Error, Result};
pub use limit_law::LimitLaw;
pub use measures::{Measure1D, MeasurePath, Metric};
pub use model::{InitialLaw, ModelParams};
pub use particle::ParticlePaths;
pub use pde::{DensityTrajectory, SolverGrid};
