//! Finite-volume solver for the limiting Fokker–Planck equation
//!
//! `∂ρ/∂t = ∂x[ a(t) ( ½ ∂x(xρ) − (η/2) ρ ) ]`,  `a(t) = m_λ e^{ηt/2}`,
//!
//! on `[0, x_max]` with zero flux through both ends, plus the weak-form
//! residual used to check any measure path against the same equation.
//!
//! Cells are uniform and the diffusive flux differences `xρ` between cell
//! centres. The advective flux (the drift `ηa/2` points right) is centred
//! wherever the local diffusion `x/2` dominates it and upwinded in the first
//! few cells near the degenerate boundary; see [`Advection`]. Time stepping
//! is backward Euler with `a` taken at the new level. Every step conserves
//! mass to rounding and preserves positivity.

use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::error::{domain, Error, Result};
use crate::limit_law::LimitLaw;
use crate::measures::{Measure1D, PathPairing};
use crate::model::{check_config, InitialLaw, ModelParams};

/// Admissible analytic mass beyond `x_max` at the horizon.
pub const TRUNCATION_MASS: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SolverGrid {
    pub x_max: f64,
    pub nx: usize,
    pub nt: usize,
}

impl SolverGrid {
    pub fn new(x_max: f64, nx: usize, nt: usize) -> Result<Self> {
        let g = Self { x_max, nx, nt };
        g.check()?;
        Ok(g)
    }

    pub fn check(&self) -> Result<()> {
        if !(self.x_max > 0.0) || !self.x_max.is_finite() {
            return Err(Error::Config(format!("x_max must be positive, got {}", self.x_max)));
        }
        if self.nx < 16 || self.nt < 16 {
            return Err(Error::Config(format!("grid needs nx, nt >= 16, got {} x {}", self.nx, self.nt)));
        }
        Ok(())
    }

    pub fn dx(&self) -> f64 {
        self.x_max / self.nx as f64
    }

    pub fn centre(&self, i: usize) -> f64 {
        (i as f64 + 0.5) * self.dx()
    }

    /// Same domain with `Δx` and `Δt` halved.
    pub fn refined(&self) -> Self {
        Self { x_max: self.x_max, nx: 2 * self.nx, nt: 2 * self.nt }
    }
}

/// Cell averages `values[n][i]` at `t_n = nT/nt`.
#[derive(Debug, Clone, PartialEq)]
pub struct DensityTrajectory {
    grid: SolverGrid,
    horizon: f64,
    values: Vec<Vec<f64>>,
    /// Advective Courant number `η a(T) Δt / (2Δx)` at the horizon; advisory
    /// only since the scheme is implicit.
    pub courant: f64,
}

impl DensityTrajectory {
    pub fn grid(&self) -> &SolverGrid {
        &self.grid
    }

    pub fn horizon(&self) -> f64 {
        self.horizon
    }

    pub fn dt(&self) -> f64 {
        self.horizon / self.grid.nt as f64
    }

    pub fn time(&self, n: usize) -> f64 {
        if n == self.grid.nt {
            self.horizon
        } else {
            n as f64 * self.dt()
        }
    }

    pub fn level(&self, n: usize) -> &[f64] {
        &self.values[n]
    }

    pub fn mass(&self, n: usize) -> f64 {
        self.values[n].iter().sum::<f64>() * self.grid.dx()
    }

    pub fn mean(&self, n: usize) -> f64 {
        let dx = self.grid.dx();
        self.values[n].iter().enumerate().map(|(i, v)| v * self.grid.centre(i)).sum::<f64>() * dx
    }

    /// Largest `|mass(n) - mass(0)|` over the run.
    pub fn mass_drift(&self) -> f64 {
        let m0 = self.mass(0);
        (0..=self.grid.nt).map(|n| (self.mass(n) - m0).abs()).fold(0.0, f64::max)
    }

    pub fn min_value(&self) -> f64 {
        self.values.iter().flatten().copied().fold(f64::INFINITY, f64::min)
    }

    /// `∫|ρ_h − ρ|` at level `n` against the analytic density (midpoint rule
    /// per cell) plus the analytic mass beyond `x_max`.
    pub fn l1_error(&self, n: usize, law: &LimitLaw) -> Result<f64> {
        let t = self.time(n);
        let dx = self.grid.dx();
        let mut err = 0.0;
        for (i, v) in self.values[n].iter().enumerate() {
            err += (v - law.density(t, self.grid.centre(i))?).abs() * dx;
        }
        Ok(err + law.survival(t, self.grid.x_max)?)
    }

    /// Level `n` as a measure (tiny negative undershoot clipped).
    pub fn measure(&self, n: usize) -> Result<Measure1D> {
        let edges: Vec<f64> = (0..=self.grid.nx).map(|i| i as f64 * self.grid.dx()).collect();
        Measure1D::grid(&edges, &self.values[n])
    }

    /// The initial cell masses as atoms at the cell centres, so that the
    /// analytic law started from the discrete initial datum can be built.
    pub fn initial_as_law(&self) -> InitialLaw {
        let dx = self.grid.dx();
        let pairs: Vec<(f64, f64)> = self.values[0]
            .iter()
            .enumerate()
            .filter(|(_, v)| **v * dx > 1e-16)
            .map(|(i, v)| (self.grid.centre(i), v * dx))
            .collect();
        let total: f64 = pairs.iter().map(|p| p.1).sum();
        InitialLaw::discrete(&pairs.iter().map(|&(x, w)| (x, w / total)).collect::<Vec<_>>())
    }

    /// CSV rows `t,x,rho` for every level and cell.
    pub fn write_csv<W: Write>(&self, mut w: W) -> Result<()> {
        writeln!(w, "t,x,rho")?;
        for n in 0..=self.grid.nt {
            let t = self.time(n);
            for (i, v) in self.values[n].iter().enumerate() {
                writeln!(w, "{t},{},{}", self.grid.centre(i), v.max(0.0))?;
            }
        }
        Ok(())
    }

    /// Row-major little-endian `f64` dump (`[level][cell]`, negatives
    /// clipped) and its JSON sidecar.
    pub fn write_binary<W: Write, S: Write>(&self, mut data: W, sidecar: S) -> Result<()> {
        for row in &self.values {
            for v in row {
                data.write_all(&v.max(0.0).to_le_bytes())?;
            }
        }
        let meta = BinarySidecar {
            schema_version: 1,
            dtype: "f64le".into(),
            layout: "row-major [time_level][cell]".into(),
            rows: self.grid.nt + 1,
            cols: self.grid.nx,
            horizon: self.horizon,
            grid: self.grid,
            cell_centres: "x_i = (i + 0.5) * x_max / nx".into(),
            time_levels: "t_n = n * horizon / nt".into(),
        };
        serde_json::to_writer_pretty(sidecar, &meta)?;
        Ok(())
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct BinarySidecar {
    pub schema_version: u32,
    pub dtype: String,
    pub layout: String,
    pub rows: usize,
    pub cols: usize,
    pub horizon: f64,
    pub grid: SolverGrid,
    pub cell_centres: String,
    pub time_levels: String,
}

impl DensityTrajectory {
    /// `(ρ_h(t_n), f)` by the midpoint rule.
    pub fn pair(&self, n: usize, f: &dyn Fn(f64) -> f64) -> f64 {
        let dx = self.grid.dx();
        self.values[n].iter().enumerate().map(|(i, v)| v * f(self.grid.centre(i))).sum::<f64>() * dx
    }
}

/// Discretization of the advective flux `-(η/2) a ρ` at a cell face.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Advection {
    /// Donor cell everywhere.
    Upwind,
    /// Face average wherever that keeps the off-diagonals nonpositive
    /// (`x_{i+1} ≥ ηΔx/2`), donor cell elsewhere.
    #[default]
    Hybrid,
}

/// One backward-Euler step of the flux-form operator with coefficient
/// `a` (already evaluated at the new time level).
pub fn implicit_step(rho: &mut [f64], a: f64, eta: f64, dx: f64, dt: f64, advection: Advection) -> Result<()> {
    let n = rho.len();
    let r = dt / dx;
    let d = a / (2.0 * dx);
    let v = 0.5 * eta * a;
    let x = |i: usize| (i as f64 + 0.5) * dx;
    let mut lower = vec![0.0; n];
    let mut diag = vec![1.0; n];
    let mut upper = vec![0.0; n];
    // face i+1/2: F = d x_{i+1} ρ_{i+1} - d x_i ρ_i - v (θ ρ_i + (1-θ) ρ_{i+1})
    for i in 0..n.saturating_sub(1) {
        let theta = match advection {
            Advection::Hybrid if x(i + 1) >= 0.5 * eta * dx => 0.5,
            _ => 1.0,
        };
        let from_left = d * x(i) + theta * v;
        let from_right = d * x(i + 1) - (1.0 - theta) * v;
        // row i gains -r F, row i+1 gains +r F
        diag[i] += r * from_left;
        upper[i] = -r * from_right;
        lower[i + 1] = -r * from_left;
        diag[i + 1] += r * from_right;
    }
    thomas(&lower, &diag, &upper, rho)
}

fn thomas(lower: &[f64], diag: &[f64], upper: &[f64], rhs: &mut [f64]) -> Result<()> {
    let n = diag.len();
    let mut c = vec![0.0; n];
    let mut beta = diag[0];
    if beta == 0.0 {
        return Err(Error::Solver("zero pivot".into()));
    }
    rhs[0] /= beta;
    for i in 1..n {
        c[i - 1] = upper[i - 1] / beta;
        beta = diag[i] - lower[i] * c[i - 1];
        if beta == 0.0 || !beta.is_finite() {
            return Err(Error::Solver(format!("zero pivot in row {i}")));
        }
        rhs[i] = (rhs[i] - lower[i] * rhs[i - 1]) / beta;
    }
    for i in (0..n - 1).rev() {
        rhs[i] -= c[i] * rhs[i + 1];
    }
    Ok(())
}

/// Cell averages of the initial law; atoms are mollified into Gaussians of
/// width `2Δx`. Renormalized to unit discrete mass.
pub fn initial_cells(law: &InitialLaw, grid: &SolverGrid) -> Vec<f64> {
    let dx = grid.dx();
    let edges: Vec<f64> = (0..=grid.nx).map(|i| i as f64 * dx).collect();
    let mut cells = vec![0.0; grid.nx];
    match law.atoms() {
        Some(atoms) => {
            let sigma = 2.0 * dx;
            let phi = |z: f64| 0.5 * libm::erfc(-z / std::f64::consts::SQRT_2);
            for (x0, w) in atoms {
                for (i, c) in cells.iter_mut().enumerate() {
                    *c += w * (phi((edges[i + 1] - x0) / sigma) - phi((edges[i] - x0) / sigma));
                }
            }
        }
        None => {
            let cdf: Vec<f64> = edges.iter().map(|&e| law.cdf(e)).collect();
            for (i, c) in cells.iter_mut().enumerate() {
                *c = (cdf[i + 1] - cdf[i]).max(0.0);
            }
        }
    }
    let total: f64 = cells.iter().sum();
    cells.iter_mut().for_each(|c| *c /= total * dx);
    cells
}

/// Solves from `law` to `params.horizon`.
pub fn solve(params: &ModelParams, law: &InitialLaw, grid: &SolverGrid) -> Result<DensityTrajectory> {
    let limit = check_truncation(params, law, grid)?;
    let rho0 = initial_cells(law, grid);
    evolve(rho0, Advection::default(), params.eta, limit.m_lambda(), params.horizon, grid)
}

/// Validates the inputs of [`solve`] without solving: the analytic mass
/// beyond `x_max` at the horizon must stay below [`TRUNCATION_MASS`].
pub fn check_truncation(params: &ModelParams, law: &InitialLaw, grid: &SolverGrid) -> Result<LimitLaw> {
    check_config(params, law)?;
    grid.check()?;
    let limit = LimitLaw::new(params.eta, law.clone())?;
    let beyond = limit.survival(params.horizon, grid.x_max)?;
    if beyond >= TRUNCATION_MASS {
        return Err(Error::Config(format!(
            "analytic mass {beyond:.3e} beyond x_max = {} at T = {} exceeds {TRUNCATION_MASS:e}",
            grid.x_max, params.horizon
        )));
    }
    Ok(limit)
}

/// Time-steps given initial cell averages; `m_lambda` is not validated, so
/// synthetic coefficients (including 0) are allowed.
pub fn evolve(
    rho0: Vec<f64>,
    advection: Advection,
    eta: f64,
    m_lambda: f64,
    horizon: f64,
    grid: &SolverGrid,
) -> Result<DensityTrajectory> {
    if rho0.len() != grid.nx {
        return Err(domain("initial data length differs from nx"));
    }
    let dx = grid.dx();
    let dt = horizon / grid.nt as f64;
    let mut values = Vec::with_capacity(grid.nt + 1);
    values.push(rho0.clone());
    let mut rho = rho0;
    for n in 1..=grid.nt {
        let t = if n == grid.nt { horizon } else { n as f64 * dt };
        let a = m_lambda * (0.5 * eta * t).exp();
        implicit_step(&mut rho, a, eta, dx, dt, advection)?;
        values.push(rho.clone());
    }
    let courant = 0.5 * eta * m_lambda * (0.5 * eta * horizon).exp() * dt / dx;
    Ok(DensityTrajectory { grid: *grid, horizon, values, courant })
}

/// A [`DensityTrajectory`] together with its time nodes, for weak-form
/// checks.
pub struct TrajectoryPath<'a> {
    traj: &'a DensityTrajectory,
    times: Vec<f64>,
}

impl<'a> TrajectoryPath<'a> {
    pub fn new(traj: &'a DensityTrajectory) -> Self {
        let times = (0..=traj.grid.nt).map(|n| traj.time(n)).collect();
        Self { traj, times }
    }
}

impl PathPairing for TrajectoryPath<'_> {
    fn times(&self) -> &[f64] {
        &self.times
    }

    fn pair_at(&self, n: usize, f: &dyn Fn(f64) -> f64) -> f64 {
        self.traj.pair(n, f)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum TestFunction {
    /// `exp(-(x-c)²/(2σ²))`
    Gaussian { centre: f64, sigma: f64 },
    /// `exp(1 - 1/(1-u²))`, `u = (x-c)/w`, zero outside `|u| < 1`
    Bump { centre: f64, half_width: f64 },
}

impl TestFunction {
    /// Identifier without commas, safe as a CSV field.
    pub fn name(&self) -> String {
        match self {
            Self::Gaussian { centre, sigma } => format!("gauss_c{centre}_s{sigma}"),
            Self::Bump { centre, half_width } => format!("bump_c{centre}_w{half_width}"),
        }
    }

    /// `(g, g', g'')` at `x`.
    pub fn eval(&self, x: f64) -> (f64, f64, f64) {
        match *self {
            Self::Gaussian { centre, sigma } => {
                let s2 = sigma * sigma;
                let d = x - centre;
                let g = (-d * d / (2.0 * s2)).exp();
                (g, -d / s2 * g, (d * d / s2 - 1.0) / s2 * g)
            }
            Self::Bump { centre, half_width } => {
                let u = (x - centre) / half_width;
                let q = 1.0 - u * u;
                if q <= 0.0 {
                    return (0.0, 0.0, 0.0);
                }
                let g = (1.0 - 1.0 / q).exp();
                let q2 = q * q;
                let gu = -2.0 * u / q2 * g;
                let guu = g * (4.0 * u * u / (q2 * q2) - 2.0 / q2 - 8.0 * u * u / (q2 * q));
                (g, gu / half_width, guu / (half_width * half_width))
            }
        }
    }

    pub fn value(&self, x: f64) -> f64 {
        self.eval(x).0
    }

    /// `(η/2) g' + (x/2) g''`, the generator applied to `g`.
    pub fn generator(&self, eta: f64, x: f64) -> f64 {
        let (_, d1, d2) = self.eval(x);
        0.5 * eta * d1 + 0.5 * x * d2
    }
}

/// Three Gaussians and two compactly supported bumps.
pub fn test_function_bank() -> Vec<TestFunction> {
    vec![
        TestFunction::Gaussian { centre: 1.0, sigma: 0.5 },
        TestFunction::Gaussian { centre: 2.0, sigma: 1.0 },
        TestFunction::Gaussian { centre: 5.0, sigma: 2.0 },
        TestFunction::Bump { centre: 1.0, half_width: 1.0 },
        TestFunction::Bump { centre: 3.0, half_width: 2.0 },
    ]
}

/// `(ρ(t),g) − (ρ(0),g) − m_λ ∫₀ᵗ e^{ηs/2} (ρ(s), (η/2)g' + (x/2)g'') ds`,
/// the time integral by composite Simpson on the path's (uniform) grid.
/// `t` must be a node of that grid.
pub fn weak_residual(path: &dyn PathPairing, g: &TestFunction, t: f64, eta: f64, m_lambda: f64) -> Result<f64> {
    let times = path.times();
    let last = *times.last().ok_or_else(|| domain("empty path"))?;
    if t > last * (1.0 + 1e-12) + 1e-15 {
        return Err(domain(format!("t = {t} exceeds the path horizon {last}")));
    }
    let k = times
        .iter()
        .position(|&s| (s - t).abs() <= 1e-12 * t.abs().max(1.0))
        .ok_or_else(|| domain(format!("t = {t} is not a node of the path's time grid")))?;
    let lhs = path.pair_at(k, &|x| g.value(x)) - path.pair_at(0, &|x| g.value(x));
    if k == 0 {
        return Ok(lhs);
    }
    let h = (times[k] - times[0]) / k as f64;
    if times[..=k].windows(2).any(|w| ((w[1] - w[0]) - h).abs() > 1e-9 * h) {
        return Err(domain("weak residual needs a uniform time grid"));
    }
    let f: Vec<f64> =
        (0..=k).map(|j| (0.5 * eta * times[j]).exp() * path.pair_at(j, &|x| g.generator(eta, x))).collect();
    Ok(lhs - m_lambda * composite_simpson(&f, h))
}

/// Simpson's rule on equally spaced samples; an odd number of intervals
/// closes with the 3/8 rule.
pub fn composite_simpson(f: &[f64], h: f64) -> f64 {
    let n = f.len() - 1;
    match n {
        0 => 0.0,
        1 => 0.5 * h * (f[0] + f[1]),
        _ => {
            let (even_end, tail) = if n.is_multiple_of(2) {
                (n, 0.0)
            } else {
                let m = n - 3;
                (m, 3.0 * h / 8.0 * (f[m] + 3.0 * f[m + 1] + 3.0 * f[m + 2] + f[m + 3]))
            };
            let mut s = 0.0;
            for i in (0..even_end).step_by(2) {
                s += f[i] + 4.0 * f[i + 1] + f[i + 2];
            }
            s * h / 3.0 + tail
        }
    }
}
