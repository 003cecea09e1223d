//! N-particle volatility-stabilized system on the rescaled clock
//! `Y_i(t) = X_i(t/N)`:
//!
//! `dY_i = (η/2N) S^Y dt + N^{-1/2} √(Y_i S^Y) dB_i`,  `S^Y = Σ_i Y_i`.
//!
//! Discretized by Euler–Maruyama with full truncation: the diffusion
//! coefficient sees `max(Y_i, 0)` and the state is clipped at zero after
//! every step. `S^Y` is re-summed from the particles after each step.

use std::io::Write;

use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::{domain, Error, Result};
use crate::model::{check_config, InitialLaw, ModelParams};

/// Exponent beyond which `E[S^Y(T)] = S(0) e^{ηT/2}` is an overflow risk.
const MAX_GROWTH_EXPONENT: f64 = 600.0;

#[derive(Debug, Clone, PartialEq)]
pub struct ParticlePaths {
    time_grid: Vec<f64>,
    /// `snapshots[j][i] = Y_i(t_j)`
    snapshots: Vec<Vec<f64>>,
    totals: Vec<f64>,
}

impl ParticlePaths {
    pub fn time_grid(&self) -> &[f64] {
        &self.time_grid
    }

    pub fn totals(&self) -> &[f64] {
        &self.totals
    }

    pub fn n_particles(&self) -> usize {
        self.snapshots[0].len()
    }

    /// All particle positions at grid node `j`.
    pub fn snapshot(&self, j: usize) -> &[f64] {
        &self.snapshots[j]
    }

    pub fn position(&self, i: usize, j: usize) -> f64 {
        self.snapshots[j][i]
    }

    /// Trajectory of particle `i` over the grid.
    pub fn particle(&self, i: usize) -> Vec<f64> {
        self.snapshots.iter().map(|s| s[i]).collect()
    }

    /// CSV with columns `t,S` followed by `Y_0..Y_{k-1}` for the first
    /// `max_particles` particles.
    pub fn write_csv<W: Write>(&self, mut w: W, max_particles: usize) -> Result<()> {
        let k = max_particles.min(self.n_particles());
        write!(w, "t,S")?;
        for i in 0..k {
            write!(w, ",Y_{i}")?;
        }
        writeln!(w)?;
        for (j, t) in self.time_grid.iter().enumerate() {
            write!(w, "{t},{}", self.totals[j])?;
            for y in &self.snapshots[j][..k] {
                write!(w, ",{y}")?;
            }
            writeln!(w)?;
        }
        Ok(())
    }
}

/// State of one replication, advanced with caller-supplied Brownian
/// increments.
#[derive(Debug, Clone)]
pub struct Stepper {
    eta: f64,
    state: Vec<f64>,
    total: f64,
}

impl Stepper {
    pub fn new(eta: f64, initial: Vec<f64>) -> Result<Self> {
        if initial.is_empty() {
            return Err(Error::Empty("no particles"));
        }
        if initial.iter().any(|&y| !(y >= 0.0)) {
            return Err(domain("initial positions must be nonnegative"));
        }
        let total = initial.iter().sum();
        Ok(Self { eta, state: initial, total })
    }

    pub fn state(&self) -> &[f64] {
        &self.state
    }

    pub fn total(&self) -> f64 {
        self.total
    }

    /// One Euler step of size `dt`; `increments[i]` is `B_i(t+dt) - B_i(t)`.
    pub fn step(&mut self, dt: f64, increments: &[f64]) -> Result<()> {
        if !(self.total > 0.0) {
            return Err(Error::Degenerate("total capitalization S^Y reached 0".into()));
        }
        let n = self.state.len() as f64;
        let s = self.total;
        let drift = self.eta / (2.0 * n) * s * dt;
        let scale = s / n;
        let mut total = 0.0;
        for (y, db) in self.state.iter_mut().zip(increments) {
            let vol = (y.max(0.0) * scale).sqrt();
            *y = (*y + drift + vol * db).max(0.0);
            total += *y;
        }
        self.total = total;
        Ok(())
    }
}

fn step_count(horizon: f64, dt: f64) -> Result<usize> {
    if !(dt > 0.0) || !dt.is_finite() {
        return Err(Error::StepSize(format!("dt must be positive, got {dt}")));
    }
    if dt > horizon * (1.0 + 1e-12) {
        return Err(Error::StepSize(format!("dt = {dt} exceeds the horizon {horizon}")));
    }
    let ratio = horizon / dt;
    let r = ratio.round();
    Ok(if (ratio - r).abs() <= 1e-9 * ratio { r as usize } else { ratio.ceil() as usize })
}

/// Uniform time grid `0 = t_0 < ... < t_n = T` used by the simulator; the
/// step is `T / ceil(T / dt)` (exactly `dt` when it divides `T`).
pub fn time_grid(horizon: f64, dt: f64) -> Result<Vec<f64>> {
    let n = step_count(horizon, dt)?;
    let h = horizon / n as f64;
    Ok((0..=n).map(|k| if k == n { horizon } else { k as f64 * h }).collect())
}

/// Simulates from explicit initial positions, recording every `stride`-th
/// step (the last step is always recorded; `stride` must divide the step
/// count so the recorded grid stays uniform).
pub fn simulate_from<R: Rng + ?Sized>(
    params: &ModelParams,
    initial: Vec<f64>,
    dt: f64,
    stride: usize,
    rng: &mut R,
) -> Result<ParticlePaths> {
    let v = params.violations();
    if !v.is_empty() {
        return Err(Error::Validation(v));
    }
    if initial.len() != params.n_particles {
        return Err(Error::Config(format!("{} initial positions for {} particles", initial.len(), params.n_particles)));
    }
    let steps = step_count(params.horizon, dt)?;
    let h = params.horizon / steps as f64;
    if params.eta * h / 2.0 >= 1.0 {
        return Err(Error::StepSize(format!("drift step eta*dt/2 = {} is not small", params.eta * h / 2.0)));
    }
    if params.eta * params.horizon / 2.0 > MAX_GROWTH_EXPONENT {
        return Err(Error::StepSize(format!(
            "mean growth exp(eta*T/2) = exp({}) overflows",
            params.eta * params.horizon / 2.0
        )));
    }
    if stride == 0 || !steps.is_multiple_of(stride) {
        return Err(Error::Config(format!("stride {stride} must divide the {steps} steps")));
    }

    let mut stepper = Stepper::new(params.eta, initial)?;
    if !(stepper.total() > 0.0) {
        return Err(Error::Degenerate("initial total capitalization is 0".into()));
    }
    let nodes = steps / stride + 1;
    let mut time_grid = Vec::with_capacity(nodes);
    let mut snapshots = Vec::with_capacity(nodes);
    let mut totals = Vec::with_capacity(nodes);
    time_grid.push(0.0);
    snapshots.push(stepper.state().to_vec());
    totals.push(stepper.total());

    let sqrt_h = h.sqrt();
    let mut increments = vec![0.0; params.n_particles];
    for k in 1..=steps {
        for db in increments.iter_mut() {
            let z: f64 = rng.sample(StandardNormal);
            *db = sqrt_h * z;
        }
        stepper.step(h, &increments)?;
        if k % stride == 0 {
            time_grid.push(if k == steps { params.horizon } else { k as f64 * h });
            snapshots.push(stepper.state().to_vec());
            totals.push(stepper.total());
        }
    }
    Ok(ParticlePaths { time_grid, snapshots, totals })
}

/// Samples `Y_i(0)` i.i.d. from `law` and simulates, recording every step.
pub fn simulate_system<R: Rng + ?Sized>(
    params: &ModelParams,
    law: &InitialLaw,
    dt: f64,
    rng: &mut R,
) -> Result<ParticlePaths> {
    simulate_strided(params, law, dt, 1, rng)
}

pub fn simulate_strided<R: Rng + ?Sized>(
    params: &ModelParams,
    law: &InitialLaw,
    dt: f64,
    stride: usize,
    rng: &mut R,
) -> Result<ParticlePaths> {
    check_config(params, law)?;
    let initial = law.sample(params.n_particles, rng)?;
    simulate_from(params, initial, dt, stride, rng)
}

/// `(ρ^N(t_j), x) = S^Y(t_j) / N`.
pub fn mean_path(paths: &ParticlePaths) -> Vec<f64> {
    let n = paths.n_particles() as f64;
    paths.totals.iter().map(|s| s / n).collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct LogGrowth {
    /// `log Y_i(t_{j+1}) - log Y_i(t_j)`
    pub increments: Vec<f64>,
    /// market weight `α_i(t_j)` at the start of each step
    pub weights: Vec<f64>,
}

/// Per-step increments of `log Y_i` with the concurrent market weight.
pub fn log_growth_diagnostic(paths: &ParticlePaths, i: usize) -> Result<LogGrowth> {
    if i >= paths.n_particles() {
        return Err(domain(format!("particle index {i} out of range")));
    }
    let y = paths.particle(i);
    if let Some(j) = y.iter().position(|&v| !(v > 0.0)) {
        return Err(domain(format!("Y_{i} is zero at grid node {j}")));
    }
    let increments = y.windows(2).map(|w| w[1].ln() - w[0].ln()).collect();
    let weights = y[..y.len() - 1].iter().zip(&paths.totals).map(|(v, s)| v / s).collect();
    Ok(LogGrowth { increments, weights })
}
