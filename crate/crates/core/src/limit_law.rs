//! The deterministic limit `ρ(t)` of the empirical measure.
//!
//! `ρ(t)` is the law of `Z(J(t))` where `dZ = (η/2) dt + √Z dβ`,
//! `Z(0) ~ λ` and `J(t) = ∫₀ᵗ m_λ e^{ηs/2} ds`. Since `4Z` is a squared
//! Bessel process of dimension `2η`, given `Z(0) = x`,
//! `Z(J) ~ (J/4) χ'²(2η, 4x/J)`, whose density is the kernel
//!
//! `k_J(x, y) = (2/J) (y/x)^{(η-1)/2} exp(-2(x+y)/J) I_{η-1}(4√(xy)/J)`.
//!
//! Everything here (density, CDF, quantiles, expectations) is built from
//! that kernel mixed over `λ`; sampling uses the Poisson–gamma mixture
//! representation of the noncentral chi-squared law.

use std::io::Write;

use rand::Rng;
use rand_distr::{Distribution, Gamma, Poisson};

use crate::bessel::{self, ln_series_sum};
use crate::error::{domain, Error, Result};
use crate::measures::{Measure1D, PathPairing};
use crate::model::InitialLaw;
use crate::quad::{self, Tolerance};

/// Above this Bessel argument the kernel is evaluated through `ln Ĩ_ν`.
const LOG_SPACE_SWITCH: f64 = 50.0;

const INNER_TOL: Tolerance = Tolerance { abs: 1e-15, rel: 1e-11, max_intervals: 400 };
/// Per-interval Gauss–Kronrod error allowed in a CDF table.
const TABLE_ERR: f64 = 1e-12;
const OUTER_TOL: Tolerance = Tolerance { abs: 1e-13, rel: 1e-11, max_intervals: 4000 };

#[derive(Debug, Clone, PartialEq)]
pub struct LimitLaw {
    eta: f64,
    m_lambda: f64,
    law: InitialLaw,
    kernel: Kernel,
}

/// Transition density of `Z` from `x` to `y` after clock time `j`.
pub fn kernel(eta: f64, x: f64, y: f64, j: f64) -> f64 {
    Kernel::new(eta).eval(x, y, j)
}

#[derive(Debug, Clone, Copy, PartialEq)]
struct Kernel {
    nu: f64,
    ln_gamma: f64,
}

impl Kernel {
    fn new(eta: f64) -> Self {
        Self { nu: eta - 1.0, ln_gamma: libm::lgamma(eta) }
    }

    fn eval(&self, x: f64, y: f64, j: f64) -> f64 {
        if y < 0.0 || x < 0.0 {
            return 0.0;
        }
        let nu = self.nu;
        let z = 4.0 * (x * y).sqrt() / j;
        let ln = if z > LOG_SPACE_SWITCH {
            let d = x.sqrt() - y.sqrt();
            let ln_scaled = bessel::bessel_i_scaled(nu, z).map(f64::ln).unwrap_or(f64::NEG_INFINITY);
            (2.0 / j).ln() + 0.5 * nu * (y.ln() - x.ln()) - 2.0 * d * d / j + ln_scaled
        } else {
            // (y/x)^{ν/2} I_ν(z) = (2y/j)^ν Σ_k w^k / (k! Γ(k+ν+1)), w = 4xy/j²
            let power = if y == 0.0 {
                if nu == 0.0 {
                    0.0
                } else {
                    return 0.0;
                }
            } else {
                nu * (2.0 * y / j).ln()
            };
            (2.0 / j).ln() + power - 2.0 * (x + y) / j + ln_series_sum(nu, 4.0 * x * y / (j * j)) - self.ln_gamma
        };
        ln.exp()
    }
}

impl LimitLaw {
    pub fn new(eta: f64, law: InitialLaw) -> Result<Self> {
        if !(eta > 1.0) || !eta.is_finite() {
            return Err(Error::Validation(vec![crate::model::Violation::EtaNotAboveOne(eta)]));
        }
        let m_lambda = law.mean()?;
        Ok(Self { eta, m_lambda, law, kernel: Kernel::new(eta) })
    }

    pub fn eta(&self) -> f64 {
        self.eta
    }

    pub fn m_lambda(&self) -> f64 {
        self.m_lambda
    }

    pub fn law(&self) -> &InitialLaw {
        &self.law
    }

    /// `J(t) = (2 m_λ / η)(e^{ηt/2} - 1)`.
    pub fn time_change(&self, t: f64) -> Result<f64> {
        if !(t >= 0.0) {
            return Err(domain(format!("time must be >= 0, got {t}")));
        }
        Ok(2.0 * self.m_lambda / self.eta * (0.5 * self.eta * t).exp_m1())
    }

    /// `∫ y ρ(t, dy) = m_λ e^{ηt/2}`.
    pub fn mean(&self, t: f64) -> f64 {
        self.m_lambda * (0.5 * self.eta * t).exp()
    }

    fn positive_time(&self, t: f64) -> Result<f64> {
        if !(t > 0.0) || !t.is_finite() {
            return Err(domain(format!("time must be > 0, got {t}")));
        }
        self.time_change(t)
    }

    /// Density of `ρ(t)` at `y`.
    pub fn density(&self, t: f64, y: f64) -> Result<f64> {
        let j = self.positive_time(t)?;
        if !(y >= 0.0) {
            return Err(domain(format!("density needs y >= 0, got {y}")));
        }
        Ok(self.density_at(j, y))
    }

    fn density_at(&self, j: f64, y: f64) -> f64 {
        let k = &self.kernel;
        match &self.law {
            InitialLaw::PointMass { x0 } => k.eval(*x0, y, j),
            InitialLaw::Discrete { atoms } => atoms.iter().map(|a| a.weight * k.eval(a.location, y, j)).sum(),
            InitialLaw::Uniform { a, b } => {
                let pts = self.mixture_panels(j, y, *a, *b);
                let w = 1.0 / (b - a);
                quad::integrate_panels(|x| w * k.eval(x, y, j), &pts, INNER_TOL).value
            }
            InitialLaw::Gamma { shape, scale } => {
                let pts = self.mixture_panels(j, y, 0.0, f64::INFINITY);
                let pdf = |x: f64| self.law.pdf(x).unwrap_or(0.0);
                let spread = shape.sqrt() * scale + (y * j).sqrt() + j;
                quad::integrate_half_line(|x| k.eval(x, y, j) * pdf(x), &pts, spread, INNER_TOL).value
            }
        }
    }

    /// Breakpoints in the mixing variable `x` for fixed `y`: the law's own
    /// panels plus a ladder around the kernel's peak, clipped to `[lo, hi]`.
    fn mixture_panels(&self, j: f64, y: f64, lo: f64, hi: f64) -> Vec<f64> {
        let mut pts = self.law.support_panels();
        let centre = (y - 0.5 * self.eta * j).max(0.0);
        let width = (y * j + j * j).sqrt();
        for k in [0.5, 1.5, 4.0, 10.0] {
            pts.push(centre - k * width);
            pts.push(centre + k * width);
        }
        pts.push(centre);
        pts.push(lo);
        if hi.is_finite() {
            pts.push(hi);
        }
        let mut pts: Vec<f64> = pts.into_iter().filter(|&p| p >= lo && p <= hi).collect();
        pts.sort_by(f64::total_cmp);
        pts.dedup();
        pts
    }

    /// Panel breakpoints in `y` for integrating against `ρ(t)`, plus a tail
    /// scale: a ladder of standard deviations around where each feature of
    /// `λ` is carried by the flow.
    fn panels(&self, j: f64) -> (Vec<f64>, f64) {
        let eta = self.eta;
        let mut pts = vec![0.0];
        let features = self.law.support_panels();
        let drift = 0.5 * eta * j;
        for &p in &features {
            let c = p + drift;
            let s = (p * j + 0.25 * eta * j * j).sqrt();
            pts.push(c);
            for k in [0.5, 1.0, 2.0, 4.0, 8.0, 16.0] {
                pts.push(c - k * s);
                pts.push(c + k * s);
            }
        }
        let mut pts: Vec<f64> = pts.into_iter().filter(|&p| p >= 0.0).collect();
        pts.sort_by(f64::total_cmp);
        pts.dedup();
        let m = self.law.moments().expect("validated law");
        let sd = (m.m2 - m.m1 * m.m1).max(0.0) + self.m_lambda * j + 0.25 * eta * j * j;
        (pts, sd.sqrt())
    }

    /// `∫ f dρ(t)`; at `t = 0` this is `∫ f dλ`.
    pub fn expect<F: Fn(f64) -> f64>(&self, t: f64, f: F) -> Result<f64> {
        if t == 0.0 {
            return Ok(self.law.expect(f));
        }
        let j = self.positive_time(t)?;
        let (pts, scale) = self.panels(j);
        Ok(quad::integrate_half_line(|y| f(y) * self.density_at(j, y), &pts, scale, OUTER_TOL).value)
    }

    /// `ρ(t)([0, y])`.
    pub fn cdf(&self, t: f64, y: f64) -> Result<f64> {
        let j = self.positive_time(t)?;
        if y <= 0.0 {
            return Ok(0.0);
        }
        let (pts, _) = self.panels(j);
        let mut pts: Vec<f64> = pts.into_iter().filter(|&p| p < y).collect();
        pts.push(y);
        let v = quad::integrate_panels(|u| self.density_at(j, u), &pts, OUTER_TOL).value;
        Ok(v.clamp(0.0, 1.0))
    }

    /// `ρ(t)((y, ∞))`.
    pub fn survival(&self, t: f64, y: f64) -> Result<f64> {
        let j = self.positive_time(t)?;
        let y = y.max(0.0);
        let (pts, scale) = self.panels(j);
        let mut pts: Vec<f64> = pts.into_iter().filter(|&p| p > y).collect();
        pts.insert(0, y);
        let v = quad::integrate_half_line(|u| self.density_at(j, u), &pts, scale, OUTER_TOL).value;
        Ok(v.clamp(0.0, 1.0))
    }

    /// Inverse of [`cdf`](Self::cdf): safeguarded Newton on the CDF with
    /// incremental quadrature between iterates.
    pub fn quantile(&self, t: f64, p: f64) -> Result<f64> {
        if !(p > 0.0 && p < 1.0) {
            return Err(domain(format!("quantile level must be in (0, 1), got {p}")));
        }
        let j = self.positive_time(t)?;
        let mut hi = self.mean(t).max(f64::MIN_POSITIVE);
        let mut f_hi = self.cdf(t, hi)?;
        let (mut lo, mut f_lo) = (0.0, 0.0);
        while f_hi < p {
            lo = hi;
            f_lo = f_hi;
            hi *= 2.0;
            f_hi = self.cdf(t, hi)?;
        }
        let (mut y, mut f_y) = if p - f_lo < f_hi - p { (lo, f_lo) } else { (hi, f_hi) };
        for _ in 0..200 {
            if (f_y - p).abs() < 1e-13 || hi - lo <= 4.0 * f64::EPSILON * hi {
                break;
            }
            let dens = self.density_at(j, y);
            let mut next = if dens > 0.0 { y - (f_y - p) / dens } else { f64::NAN };
            if !(next > lo && next < hi) {
                next = 0.5 * (lo + hi);
            }
            let step = quad::integrate(|u| self.density_at(j, u), y.min(next), y.max(next), OUTER_TOL).value;
            let f_next = if next > y { f_y + step } else { f_y - step };
            y = next;
            f_y = f_next;
            if f_y < p {
                lo = y;
            } else {
                hi = y;
            }
        }
        Ok(y)
    }

    /// `n` exact draws from `ρ(t)`: `x ~ λ`, `K ~ Poisson(2x/J)`,
    /// `y ~ Gamma(η + K, J/2)`.
    pub fn sample<R: Rng + ?Sized>(&self, t: f64, n: usize, rng: &mut R) -> Result<Vec<f64>> {
        let j = self.positive_time(t)?;
        let starts = self.law.sample(n, rng)?;
        starts
            .into_iter()
            .map(|x| {
                let rate = 2.0 * x / j;
                let k =
                    if rate > 0.0 { Poisson::new(rate).map_err(|e| domain(e.to_string()))?.sample(rng) } else { 0.0 };
                let g = Gamma::new(self.eta + k, 0.5 * j).map_err(|e| domain(e.to_string()))?;
                Ok(g.sample(rng))
            })
            .collect()
    }

    /// CDF tabulated on nodes refined until every interval carries at most
    /// `max_mass` probability.
    pub fn cdf_table(&self, t: f64, max_mass: f64) -> Result<CdfTable> {
        let j = self.positive_time(t)?;
        if !(max_mass > 0.0 && max_mass < 1.0) {
            return Err(domain(format!("max_mass must be in (0, 1), got {max_mass}")));
        }
        let dens = |u: f64| self.density_at(j, u);
        let (mut pts, scale) = self.panels(j);
        // extend until the remaining tail is negligible
        let mut width = scale;
        loop {
            let last = *pts.last().expect("nonempty");
            let tail = quad::integrate_half_line(dens, &[last], width, OUTER_TOL).value;
            if tail < 1e-13 {
                break;
            }
            pts.push(last + width);
            width *= 1.5;
        }
        let mut nodes = vec![pts[0]];
        let mut masses = Vec::new();
        for w in pts.windows(2) {
            let mut stack = vec![(w[0], w[1], quad::gk15(&dens, w[0], w[1]))];
            while let Some((a, b, est)) = stack.pop() {
                let coarse = est.value > max_mass || est.error > TABLE_ERR;
                if coarse && b - a > 1e-12 * b.max(1.0) {
                    let c = 0.5 * (a + b);
                    stack.push((c, b, quad::gk15(&dens, c, b)));
                    stack.push((a, c, quad::gk15(&dens, a, c)));
                } else {
                    nodes.push(b);
                    masses.push(est.value);
                }
            }
        }
        let mut cdf = Vec::with_capacity(nodes.len());
        let mut acc = 0.0;
        cdf.push(0.0);
        for m in masses {
            acc += m;
            cdf.push(acc.min(1.0));
        }
        let pdf = nodes.iter().map(|&u| dens(u)).collect();
        Ok(CdfTable { nodes, cdf, pdf })
    }

    /// `ρ(t)` as a [`Measure1D`]: `λ` itself at `t = 0`, otherwise a grid
    /// density whose cell masses are the tabulated CDF increments.
    pub fn measure_at(&self, t: f64, max_mass: f64) -> Result<Measure1D> {
        if t == 0.0 {
            return match self.law.atoms() {
                Some(atoms) => Measure1D::atoms(&atoms),
                None => {
                    let mut edges = self.law.support_panels();
                    let hi = *edges.last().expect("nonempty");
                    let lo = edges[0];
                    let n = (1.0 / max_mass).ceil() as usize;
                    edges = (0..=n).map(|i| lo + (hi - lo) * i as f64 / n as f64).collect();
                    let cdf: Vec<f64> = edges.iter().map(|&x| self.law.cdf(x)).collect();
                    Measure1D::from_cdf_nodes(&edges, &cdf)
                }
            };
        }
        let table = self.cdf_table(t, max_mass)?;
        Measure1D::from_cdf_nodes(&table.nodes, &table.cdf)
    }

    /// CSV with columns `y,pdf,cdf` at time `t`.
    pub fn write_table<W: Write>(&self, t: f64, ys: &[f64], mut w: W) -> Result<()> {
        writeln!(w, "y,pdf,cdf")?;
        for &y in ys {
            writeln!(w, "{y},{},{}", self.density(t, y)?, self.cdf(t, y)?)?;
        }
        Ok(())
    }
}

/// Tabulated CDF with cubic Hermite interpolation between nodes (using the
/// density as slope), clamped to the node values so it stays monotone.
#[derive(Debug, Clone, PartialEq)]
pub struct CdfTable {
    nodes: Vec<f64>,
    cdf: Vec<f64>,
    pdf: Vec<f64>,
}

impl CdfTable {
    pub fn nodes(&self) -> &[f64] {
        &self.nodes
    }

    pub fn values(&self) -> &[f64] {
        &self.cdf
    }

    /// Mass captured by the table; 1 up to quadrature error.
    pub fn total(&self) -> f64 {
        *self.cdf.last().expect("nonempty")
    }

    fn interval(&self, y: f64) -> usize {
        self.nodes.partition_point(|&n| n <= y).saturating_sub(1).min(self.nodes.len() - 2)
    }

    fn hermite(&self, i: usize, y: f64) -> f64 {
        let (a, b) = (self.nodes[i], self.nodes[i + 1]);
        let h = b - a;
        let s = (y - a) / h;
        let s2 = s * s;
        let s3 = s2 * s;
        let v = (2.0 * s3 - 3.0 * s2 + 1.0) * self.cdf[i]
            + (s3 - 2.0 * s2 + s) * h * self.pdf[i]
            + (-2.0 * s3 + 3.0 * s2) * self.cdf[i + 1]
            + (s3 - s2) * h * self.pdf[i + 1];
        v.clamp(self.cdf[i], self.cdf[i + 1])
    }

    pub fn cdf(&self, y: f64) -> f64 {
        if y <= self.nodes[0] {
            return 0.0;
        }
        if y >= *self.nodes.last().expect("nonempty") {
            return 1.0;
        }
        self.hermite(self.interval(y), y)
    }

    /// Inverse of the interpolated CDF by bisection inside the bracketing
    /// interval.
    pub fn quantile(&self, p: f64) -> Result<f64> {
        if !(p > 0.0 && p < 1.0) {
            return Err(domain(format!("quantile level must be in (0, 1), got {p}")));
        }
        let k = self.cdf.partition_point(|&c| c < p);
        if k >= self.cdf.len() {
            return Ok(*self.nodes.last().expect("nonempty"));
        }
        if k == 0 {
            return Ok(self.nodes[0]);
        }
        let i = k - 1;
        let (mut lo, mut hi) = (self.nodes[i], self.nodes[i + 1]);
        for _ in 0..100 {
            let mid = 0.5 * (lo + hi);
            if mid <= lo || mid >= hi {
                break;
            }
            if self.hermite(i, mid) < p {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        Ok(0.5 * (lo + hi))
    }
}

/// The analytic limit path `t ↦ ρ(t)` sampled on a time grid, paired with
/// test functions by quadrature.
#[derive(Debug, Clone)]
pub struct AnalyticPath {
    law: LimitLaw,
    times: Vec<f64>,
}

impl AnalyticPath {
    pub fn new(law: LimitLaw, times: Vec<f64>) -> Result<Self> {
        if times.is_empty() || times[0] < 0.0 || times.windows(2).any(|w| w[1] <= w[0]) {
            return Err(domain("time grid must be nonnegative and strictly increasing"));
        }
        Ok(Self { law, times })
    }

    /// `n + 1` uniform nodes on `[0, horizon]`.
    pub fn uniform(law: LimitLaw, horizon: f64, n: usize) -> Result<Self> {
        let times = (0..=n).map(|k| horizon * k as f64 / n as f64).collect();
        Self::new(law, times)
    }

    pub fn law(&self) -> &LimitLaw {
        &self.law
    }
}

impl PathPairing for AnalyticPath {
    fn times(&self) -> &[f64] {
        &self.times
    }

    fn pair_at(&self, j: usize, f: &dyn Fn(f64) -> f64) -> f64 {
        self.law.expect(self.times[j], f).expect("grid validated")
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::seeded;
    use std::f64::consts::E;

    fn ll(eta: f64, law: InitialLaw) -> LimitLaw {
        LimitLaw::new(eta, law).unwrap()
    }

    /// Poisson mixture of gamma densities: the scaled noncentral
    /// chi-squared density, summed independently of the Bessel route.
    fn poisson_gamma_density(eta: f64, x: f64, y: f64, j: f64) -> f64 {
        let rate = 2.0 * x / j;
        let scale = 0.5 * j;
        (0..2000)
            .map(|k| {
                let kf = k as f64;
                let shape = eta + kf;
                let ln_pois = -rate + kf * rate.ln() - libm::lgamma(kf + 1.0);
                let ln_gamma = (shape - 1.0) * y.ln() - y / scale - libm::lgamma(shape) - shape * scale.ln();
                (ln_pois + ln_gamma).exp()
            })
            .sum()
    }

    /// Simpson on a fine grid; independent of the adaptive integrator.
    fn simpson<F: Fn(f64) -> f64>(f: F, a: f64, b: f64, n: usize) -> f64 {
        let h = (b - a) / n as f64;
        let mut s = f(a) + f(b);
        for i in 1..n {
            s += f(a + i as f64 * h) * if i % 2 == 1 { 4.0 } else { 2.0 };
        }
        s * h / 3.0
    }

    #[test]
    fn time_change_values() {
        let l = ll(2.0, InitialLaw::point_mass(1.0));
        assert_eq!(l.time_change(0.0).unwrap(), 0.0);
        let q = simpson(f64::exp, 0.0, 1.0, 2000);
        assert!((l.time_change(1.0).unwrap() - q).abs() < 1e-10 * q);
        assert!((q - 1.718_281_828).abs() < 1e-9);
        let l = ll(1.5, InitialLaw::point_mass(2.0));
        let q = simpson(|s| 2.0 * (0.75 * s).exp(), 0.0, 2.0, 2000);
        assert!((l.time_change(2.0).unwrap() - q).abs() < 1e-10 * q);
        assert!((q - 9.284_50).abs() < 1e-5);
        assert!(l.time_change(-1.0).is_err());
    }

    #[test]
    fn mean_identities() {
        let l = ll(2.0, InitialLaw::point_mass(1.0));
        assert_eq!(l.mean(0.0), 1.0);
        assert!((l.mean(1.0) - E).abs() < 1e-15);
        for &eta in &[1.5, 2.0, 3.0] {
            let l = ll(eta, InitialLaw::gamma(2.0, 0.5));
            for &t in &[0.0, 0.3, 1.0, 2.0] {
                let alt = l.m_lambda() + 0.5 * eta * l.time_change(t).unwrap();
                assert!((l.mean(t) - alt).abs() < 1e-12 * l.mean(t));
            }
        }
    }

    #[test]
    fn kernel_matches_poisson_gamma_series() {
        let j = E - 1.0;
        let l = ll(2.0, InitialLaw::point_mass(1.0));
        let v = l.density(1.0, 1.0).unwrap();
        let o = poisson_gamma_density(2.0, 1.0, 1.0, j);
        assert!(((v - o) / o).abs() < 1e-10, "{v} vs {o}");
        for &(eta, x, y, j) in &[
            (1.5, 0.3, 2.0, 0.7),
            (3.0, 5.0, 4.0, 0.2),
            (2.5, 1.0, 1e-6, 1.0),
            (1.2, 10.0, 12.0, 0.05),
            (2.0, 0.0, 0.8, 1.3),
        ] {
            let v = kernel(eta, x, y, j);
            let o = if x == 0.0 {
                let s = 0.5 * j;
                ((eta - 1.0) * y.ln() - y / s - libm::lgamma(eta) - eta * s.ln()).exp()
            } else {
                poisson_gamma_density(eta, x, y, j)
            };
            assert!(((v - o) / o).abs() < 1e-10, "eta={eta} x={x} y={y}: {v} vs {o}");
        }
    }

    #[test]
    fn density_at_zero_is_finite() {
        let l = ll(1.5, InitialLaw::point_mass(1.0));
        let d0 = l.density(0.5, 0.0).unwrap();
        assert_eq!(d0, 0.0);
        let l1 = ll(1.0 + 1e-9, InitialLaw::point_mass(1.0));
        assert!(l1.density(0.5, 0.0).unwrap().is_finite());
        assert!(l.density(0.0, 1.0).is_err());
        assert!(l.density(1.0, -1.0).is_err());
    }

    /// Gamma(k, θ) mixed with the Poisson weights is negative binomial, so
    /// the mixture density has a closed-form series.
    fn gamma_mixture_oracle(eta: f64, k: f64, theta: f64, y: f64, j: f64) -> f64 {
        let c = 2.0 / j;
        let p = c / (1.0 / theta + c);
        (0..3000)
            .map(|n| {
                let nf = n as f64;
                let ln_w =
                    libm::lgamma(k + nf) - libm::lgamma(k) - libm::lgamma(nf + 1.0) + nf * p.ln() + k * (1.0 - p).ln();
                let shape = eta + nf;
                let s = 0.5 * j;
                let ln_g = (shape - 1.0) * y.ln() - y / s - libm::lgamma(shape) - shape * s.ln();
                (ln_w + ln_g).exp()
            })
            .sum()
    }

    #[test]
    fn gamma_mixture_density_against_closed_form() {
        let l = ll(2.0, InitialLaw::gamma(2.0, 0.5));
        for &t in &[0.05, 0.5, 1.0] {
            let j = l.time_change(t).unwrap();
            for &y in &[0.01, 0.3, 1.0, 2.5, 6.0] {
                let v = l.density(t, y).unwrap();
                let o = gamma_mixture_oracle(2.0, 2.0, 0.5, y, j);
                assert!(((v - o) / o).abs() < 1e-8, "t={t} y={y}: {v} vs {o}");
            }
        }
    }

    #[test]
    fn normalization_and_mean_over_laws() {
        let laws = [
            InitialLaw::point_mass(1.0),
            InitialLaw::gamma(2.0, 0.5),
            InitialLaw::uniform(0.0, 2.0),
            InitialLaw::discrete(&[(0.0, 0.3), (2.0, 0.7)]),
        ];
        for law in laws {
            let l = ll(1.7, law.clone());
            for &t in &[0.1, 1.0] {
                let mass = l.expect(t, |_| 1.0).unwrap();
                assert!((mass - 1.0).abs() < 1e-8, "{law:?} t={t} mass={mass}");
                let m = l.expect(t, |y| y).unwrap();
                assert!(((m - l.mean(t)) / l.mean(t)).abs() < 1e-6, "{law:?} t={t} mean={m}");
            }
        }
    }

    #[test]
    fn cdf_properties() {
        let l = ll(2.0, InitialLaw::point_mass(1.0));
        assert_eq!(l.cdf(1.0, 0.0).unwrap(), 0.0);
        let ys = [0.1, 0.5, 1.0, 2.0, 4.0, 8.0, 16.0];
        let cs: Vec<f64> = ys.iter().map(|&y| l.cdf(1.0, y).unwrap()).collect();
        assert!(cs.windows(2).all(|w| w[0] <= w[1]));
        assert!(l.cdf(1.0, 10.0 * l.mean(1.0)).unwrap() >= 0.99);
        assert!((1.0 - l.cdf(1.0, 200.0).unwrap()) < 1e-8);
        let y = 2.3;
        assert!((l.cdf(1.0, y).unwrap() + l.survival(1.0, y).unwrap() - 1.0).abs() < 1e-10);
    }

    #[test]
    fn quantile_round_trips() {
        let l = ll(2.0, InitialLaw::point_mass(1.0));
        let med = l.quantile(1.0, 0.5).unwrap();
        assert!((l.cdf(1.0, med).unwrap() - 0.5).abs() < 1e-8);
        for &y in &[0.5, 1.5, 3.0, 6.0] {
            let p = l.cdf(1.0, y).unwrap();
            assert!((l.quantile(1.0, p).unwrap() - y).abs() < 1e-6);
        }
        let q: Vec<f64> = [0.25, 0.5, 0.75].iter().map(|&p| l.quantile(1.0, p).unwrap()).collect();
        assert!(q[0] < q[1] && q[1] < q[2]);
        assert!(l.quantile(1.0, 0.0).is_err());
        assert!(l.quantile(1.0, 1.0).is_err());
    }

    #[test]
    fn median_matches_sampled_median() {
        let l = ll(2.0, InitialLaw::point_mass(1.0));
        let n = 1_000_000;
        let mut s = l.sample(1.0, n, &mut seeded(4)).unwrap();
        s.sort_by(f64::total_cmp);
        // 99.9% order-statistic interval around the median: n/2 ± 3.29 √n / 2
        let half = (3.29 * (n as f64).sqrt() / 2.0).ceil() as usize;
        let (lo, hi) = (s[n / 2 - half], s[n / 2 + half]);
        let med = l.quantile(1.0, 0.5).unwrap();
        assert!(lo <= med && med <= hi, "{lo} <= {med} <= {hi}");
    }

    #[test]
    fn sample_mean_and_small_time_limit() {
        let l = ll(2.0, InitialLaw::gamma(2.0, 0.5));
        let s = l.sample(0.7, 1_000_000, &mut seeded(8)).unwrap();
        let n = s.len() as f64;
        let m = s.iter().sum::<f64>() / n;
        let sd = (s.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (n - 1.0)).sqrt();
        assert!((m - l.mean(0.7)).abs() < 4.0 * sd / n.sqrt());

        let p = ll(2.0, InitialLaw::point_mass(1.0));
        let s = p.sample(1e-8, 10_000, &mut seeded(9)).unwrap();
        assert!(s.iter().all(|&y| (y - 1.0).abs() < 1e-3));
        assert!(p.sample(0.0, 1, &mut seeded(9)).is_err());
    }

    #[test]
    fn table_agrees_with_direct_cdf() {
        for law in [InitialLaw::point_mass(1.0), InitialLaw::uniform(0.5, 2.0)] {
            let l = ll(1.5, law);
            let table = l.cdf_table(0.5, 1e-3).unwrap();
            assert!((table.total() - 1.0).abs() < 1e-9);
            for &y in &[0.2, 0.9, 1.3, 2.7, 4.1] {
                let d = l.cdf(0.5, y).unwrap();
                assert!((table.cdf(y) - d).abs() < 1e-7, "y={y}");
            }
            let q = table.quantile(0.3).unwrap();
            assert!((l.cdf(0.5, q).unwrap() - 0.3).abs() < 1e-7);
        }
    }

    #[test]
    fn csv_table() {
        let l = ll(2.0, InitialLaw::point_mass(1.0));
        let mut buf = Vec::new();
        l.write_table(1.0, &[0.0, 1.0], &mut buf).unwrap();
        let s = String::from_utf8(buf).unwrap();
        assert!(s.starts_with("y,pdf,cdf\n0,0,0\n1,"));
    }
}
