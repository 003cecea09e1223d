//! Model parameters and initial laws.

use rand::distributions::WeightedIndex;
use rand::Rng;
use rand_distr::{Distribution, Gamma};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::error::{Error, Result};
use crate::quad::{self, Tolerance};

/// The pair `(η, N)` plus the horizon `T` of the rescaled clock.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ModelParams {
    pub eta: f64,
    pub n_particles: usize,
    pub horizon: f64,
}

impl ModelParams {
    pub fn new(eta: f64, n_particles: usize, horizon: f64) -> Self {
        Self { eta, n_particles, horizon }
    }

    pub fn violations(&self) -> Vec<Violation> {
        let mut out = Vec::new();
        if !(self.eta > 1.0) || !self.eta.is_finite() {
            out.push(Violation::EtaNotAboveOne(self.eta));
        }
        if self.n_particles == 0 {
            out.push(Violation::NoParticles);
        }
        if !(self.horizon > 0.0) || !self.horizon.is_finite() {
            out.push(Violation::NonPositiveHorizon(self.horizon));
        }
        out
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Atom {
    pub location: f64,
    pub weight: f64,
}

/// Initial law `λ` of the capitalizations; every variant lives on `[0, ∞)`
/// and has closed-form first and second moments.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum InitialLaw {
    PointMass { x0: f64 },
    Gamma { shape: f64, scale: f64 },
    Uniform { a: f64, b: f64 },
    Discrete { atoms: Vec<Atom> },
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum Violation {
    #[error("eta must exceed 1 (got {0})")]
    EtaNotAboveOne(f64),
    #[error("n_particles must be at least 1")]
    NoParticles,
    #[error("horizon must be positive (got {0})")]
    NonPositiveHorizon(f64),
    #[error("support must lie in [0, inf): {0}")]
    NegativeSupport(String),
    #[error("invalid law parameter: {0}")]
    BadParameter(String),
    #[error("atom weights must sum to 1 (got {0})")]
    WeightsNotNormalized(f64),
    #[error("m_lambda must be positive (got {0})")]
    NonPositiveMean(f64),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Moments {
    pub m1: f64,
    pub m2: f64,
}

impl InitialLaw {
    pub fn point_mass(x0: f64) -> Self {
        Self::PointMass { x0 }
    }

    pub fn gamma(shape: f64, scale: f64) -> Self {
        Self::Gamma { shape, scale }
    }

    pub fn uniform(a: f64, b: f64) -> Self {
        Self::Uniform { a, b }
    }

    pub fn discrete(atoms: &[(f64, f64)]) -> Self {
        Self::Discrete { atoms: atoms.iter().map(|&(location, weight)| Atom { location, weight }).collect() }
    }

    fn raw_moments(&self) -> Moments {
        match self {
            Self::PointMass { x0 } => Moments { m1: *x0, m2: x0 * x0 },
            Self::Gamma { shape, scale } => Moments { m1: shape * scale, m2: shape * (shape + 1.0) * scale * scale },
            Self::Uniform { a, b } => Moments { m1: 0.5 * (a + b), m2: (a * a + a * b + b * b) / 3.0 },
            Self::Discrete { atoms } => Moments {
                m1: atoms.iter().map(|a| a.weight * a.location).sum(),
                m2: atoms.iter().map(|a| a.weight * a.location * a.location).sum(),
            },
        }
    }

    /// Every violated invariant of the law, including `m_λ > 0`.
    pub fn violations(&self) -> Vec<Violation> {
        let mut out = Vec::new();
        let finite = |v: f64, what: &str, out: &mut Vec<Violation>| {
            if !v.is_finite() {
                out.push(Violation::BadParameter(format!("{what} is not finite")));
            }
        };
        match self {
            Self::PointMass { x0 } => {
                finite(*x0, "x0", &mut out);
                if *x0 < 0.0 {
                    out.push(Violation::NegativeSupport(format!("x0 = {x0}")));
                }
            }
            Self::Gamma { shape, scale } => {
                finite(*shape, "shape", &mut out);
                finite(*scale, "scale", &mut out);
                if !(*shape > 0.0) {
                    out.push(Violation::BadParameter(format!("gamma shape must be > 0, got {shape}")));
                }
                if !(*scale > 0.0) {
                    out.push(Violation::BadParameter(format!("gamma scale must be > 0, got {scale}")));
                }
            }
            Self::Uniform { a, b } => {
                finite(*a, "a", &mut out);
                finite(*b, "b", &mut out);
                if *a < 0.0 {
                    out.push(Violation::NegativeSupport(format!("uniform lower end a = {a}")));
                }
                if !(a < b) {
                    out.push(Violation::BadParameter(format!("uniform needs a < b, got [{a}, {b}]")));
                }
            }
            Self::Discrete { atoms } => {
                if atoms.is_empty() {
                    out.push(Violation::BadParameter("no atoms".into()));
                }
                for a in atoms {
                    finite(a.location, "atom location", &mut out);
                    if a.location < 0.0 {
                        out.push(Violation::NegativeSupport(format!("atom at {}", a.location)));
                    }
                    if !(a.weight > 0.0) || !a.weight.is_finite() {
                        out.push(Violation::BadParameter(format!("atom weight must be > 0, got {}", a.weight)));
                    }
                }
                let total: f64 = atoms.iter().map(|a| a.weight).sum();
                if !atoms.is_empty() && (total - 1.0).abs() > 1e-12 {
                    out.push(Violation::WeightsNotNormalized(total));
                }
            }
        }
        if out.is_empty() {
            let m1 = self.raw_moments().m1;
            if !(m1 > 0.0) {
                out.push(Violation::NonPositiveMean(m1));
            }
        }
        out
    }

    pub fn check(&self) -> Result<()> {
        let v = self.violations();
        if v.is_empty() {
            Ok(())
        } else {
            Err(Error::Validation(v))
        }
    }

    /// First and second moments `(∫x dλ, ∫x² dλ)`.
    pub fn moments(&self) -> Result<Moments> {
        self.check()?;
        Ok(self.raw_moments())
    }

    /// `m_λ`.
    pub fn mean(&self) -> Result<f64> {
        Ok(self.moments()?.m1)
    }

    /// Draws `n` i.i.d. samples.
    pub fn sample<R: Rng + ?Sized>(&self, n: usize, rng: &mut R) -> Result<Vec<f64>> {
        self.check()?;
        if n == 0 {
            return Err(Error::Empty("sample size must be at least 1"));
        }
        let out = match self {
            Self::PointMass { x0 } => vec![*x0; n],
            Self::Gamma { shape, scale } => {
                let g = Gamma::new(*shape, *scale).map_err(|e| Error::Config(e.to_string()))?;
                (0..n).map(|_| g.sample(rng)).collect()
            }
            Self::Uniform { a, b } => (0..n).map(|_| rng.gen_range(*a..*b)).collect(),
            Self::Discrete { atoms } => {
                let idx =
                    WeightedIndex::new(atoms.iter().map(|a| a.weight)).map_err(|e| Error::Config(e.to_string()))?;
                (0..n).map(|_| atoms[idx.sample(rng)].location).collect()
            }
        };
        Ok(out)
    }

    /// Atoms `(location, weight)` for atomic laws.
    pub fn atoms(&self) -> Option<Vec<(f64, f64)>> {
        match self {
            Self::PointMass { x0 } => Some(vec![(*x0, 1.0)]),
            Self::Discrete { atoms } => Some(atoms.iter().map(|a| (a.location, a.weight)).collect()),
            _ => None,
        }
    }

    /// Lebesgue density for the continuous variants.
    pub fn pdf(&self, x: f64) -> Option<f64> {
        match *self {
            Self::Gamma { shape, scale } => Some(if x < 0.0 {
                0.0
            } else if x == 0.0 {
                if shape < 1.0 {
                    f64::INFINITY
                } else if shape == 1.0 {
                    1.0 / scale
                } else {
                    0.0
                }
            } else {
                ((shape - 1.0) * x.ln() - x / scale - libm::lgamma(shape) - shape * scale.ln()).exp()
            }),
            Self::Uniform { a, b } => Some(if x >= a && x <= b { 1.0 / (b - a) } else { 0.0 }),
            _ => None,
        }
    }

    /// Panel breakpoints covering the bulk of a continuous law; the last
    /// point is where a half-line tail integration should start.
    pub(crate) fn support_panels(&self) -> Vec<f64> {
        match *self {
            Self::Gamma { shape, scale } => {
                let sd = shape.sqrt() * scale;
                let mut pts = vec![0.0];
                let mode = ((shape - 1.0) * scale).max(0.0);
                for k in [0.1, 0.5, 1.0, 2.0, 4.0, 8.0] {
                    pts.push(mode + k * sd);
                }
                pts
            }
            Self::Uniform { a, b } => vec![a, b],
            Self::PointMass { x0 } => vec![x0],
            Self::Discrete { ref atoms } => {
                let mut v: Vec<f64> = atoms.iter().map(|a| a.location).collect();
                v.sort_by(f64::total_cmp);
                v
            }
        }
    }

    /// `λ([0, x])`.
    pub fn cdf(&self, x: f64) -> f64 {
        match *self {
            Self::PointMass { x0 } => {
                if x >= x0 {
                    1.0
                } else {
                    0.0
                }
            }
            Self::Discrete { ref atoms } => atoms.iter().filter(|a| a.location <= x).map(|a| a.weight).sum(),
            Self::Uniform { a, b } => ((x - a) / (b - a)).clamp(0.0, 1.0),
            Self::Gamma { .. } => {
                if x <= 0.0 {
                    return 0.0;
                }
                let mut pts: Vec<f64> = self.support_panels().into_iter().filter(|&p| p < x).collect();
                pts.push(x);
                let f = |u: f64| self.pdf(u).unwrap_or(0.0);
                quad::integrate_panels(f, &pts, Tolerance::default()).value.clamp(0.0, 1.0)
            }
        }
    }

    /// `∫ f dλ`.
    pub fn expect<F: Fn(f64) -> f64>(&self, f: F) -> f64 {
        match self {
            Self::PointMass { x0 } => f(*x0),
            Self::Discrete { atoms } => atoms.iter().map(|a| a.weight * f(a.location)).sum(),
            Self::Uniform { a, b } => quad::integrate(|x| f(x) / (b - a), *a, *b, Tolerance::default()).value,
            Self::Gamma { shape, scale } => {
                let pts = self.support_panels();
                quad::integrate_half_line(
                    |x| f(x) * self.pdf(x).unwrap_or(0.0),
                    &pts,
                    shape.sqrt() * scale,
                    Tolerance::default(),
                )
                .value
            }
        }
    }
}

/// Reports every violated invariant of the configuration.
pub fn validate(params: &ModelParams, law: &InitialLaw) -> std::result::Result<(), Vec<Violation>> {
    let mut v = params.violations();
    v.extend(law.violations());
    if v.is_empty() {
        Ok(())
    } else {
        Err(v)
    }
}

pub(crate) fn check_config(params: &ModelParams, law: &InitialLaw) -> Result<()> {
    validate(params, law).map_err(Error::Validation)
}
