//! Probability measures on the half-line, measure paths, and the metrics
//! used to compare them.

use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::error::{domain, Error, Result};
use crate::limit_law::{CdfTable, LimitLaw};

/// Lévy-metric bisection tolerance.
pub const LEVY_TOL: f64 = 1e-4;
/// Number of CDF evaluation points in the Lévy feasibility check.
pub const LEVY_GRID: usize = 4096;

const MASS_TOL: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq)]
pub enum Measure1D {
    /// Sorted distinct locations with positive weights.
    Atoms { locations: Vec<f64>, cumulative: Vec<f64> },
    /// Piecewise-constant density on cells `[edges[i], edges[i+1]]`; the
    /// CDF is linear inside each cell.
    Grid { edges: Vec<f64>, cumulative: Vec<f64> },
}

impl Measure1D {
    /// From `(location, weight)` pairs; duplicates are merged.
    pub fn atoms(pairs: &[(f64, f64)]) -> Result<Self> {
        if pairs.is_empty() {
            return Err(Error::Empty("measure needs at least one atom"));
        }
        if pairs.iter().any(|&(x, w)| !x.is_finite() || !(w >= 0.0)) {
            return Err(domain("atoms need finite locations and nonnegative weights"));
        }
        let total: f64 = pairs.iter().map(|p| p.1).sum();
        if (total - 1.0).abs() > MASS_TOL {
            return Err(domain(format!("atom weights sum to {total}, not 1")));
        }
        let mut sorted = pairs.to_vec();
        sorted.sort_by(|a, b| a.0.total_cmp(&b.0));
        let mut locations = Vec::with_capacity(sorted.len());
        let mut cumulative: Vec<f64> = Vec::with_capacity(sorted.len());
        let mut acc = 0.0;
        for (x, w) in sorted {
            acc += w;
            if locations.last() == Some(&x) {
                *cumulative.last_mut().expect("paired") = acc;
            } else {
                locations.push(x);
                cumulative.push(acc);
            }
        }
        *cumulative.last_mut().expect("nonempty") = 1.0;
        Ok(Self::Atoms { locations, cumulative })
    }

    /// Grid density from cell edges and cell values (densities). Mass
    /// defects up to 1e-6 and negative undershoot down to -1e-12 are
    /// absorbed: values are clipped at 0 and renormalized.
    pub fn grid(edges: &[f64], values: &[f64]) -> Result<Self> {
        if edges.len() != values.len() + 1 || values.is_empty() {
            return Err(domain("grid density needs one more edge than cells"));
        }
        if edges.windows(2).any(|w| !(w[1] > w[0])) {
            return Err(domain("grid edges must be strictly increasing"));
        }
        if values.iter().any(|&v| v < -1e-12 || !v.is_finite()) {
            return Err(domain("grid density has negative or non-finite cells"));
        }
        let masses: Vec<f64> = values.iter().zip(edges.windows(2)).map(|(v, w)| v.max(0.0) * (w[1] - w[0])).collect();
        Self::from_masses(edges, &masses, 1e-6)
    }

    /// Grid density whose CDF interpolates `cdf` at `nodes` linearly.
    pub fn from_cdf_nodes(nodes: &[f64], cdf: &[f64]) -> Result<Self> {
        if nodes.len() != cdf.len() || nodes.len() < 2 {
            return Err(domain("need matching node and CDF vectors"));
        }
        let mut masses: Vec<f64> = cdf.windows(2).map(|w| (w[1] - w[0]).max(0.0)).collect();
        // mass left of the first node is folded into the first cell
        masses[0] += cdf[0].max(0.0);
        Self::from_masses(nodes, &masses, 1e-6)
    }

    fn from_masses(edges: &[f64], masses: &[f64], tol: f64) -> Result<Self> {
        let total: f64 = masses.iter().sum();
        if (total - 1.0).abs() > tol {
            return Err(domain(format!("grid density has mass {total}, not 1")));
        }
        let mut cumulative = Vec::with_capacity(edges.len());
        let mut acc = 0.0;
        cumulative.push(0.0);
        for m in masses {
            acc += m / total;
            cumulative.push(acc.min(1.0));
        }
        *cumulative.last_mut().expect("nonempty") = 1.0;
        Ok(Self::Grid { edges: edges.to_vec(), cumulative })
    }

    /// Right-continuous CDF.
    pub fn cdf(&self, x: f64) -> f64 {
        match self {
            Self::Atoms { locations, cumulative } => {
                let k = locations.partition_point(|&l| l <= x);
                if k == 0 {
                    0.0
                } else {
                    cumulative[k - 1]
                }
            }
            Self::Grid { edges, cumulative } => grid_cdf(edges, cumulative, x),
        }
    }

    /// `lim_{u↑x} F(u)`.
    pub fn cdf_left(&self, x: f64) -> f64 {
        match self {
            Self::Atoms { locations, cumulative } => {
                let k = locations.partition_point(|&l| l < x);
                if k == 0 {
                    0.0
                } else {
                    cumulative[k - 1]
                }
            }
            Self::Grid { edges, cumulative } => grid_cdf(edges, cumulative, x),
        }
    }

    /// Smallest and largest point of the support.
    pub fn support(&self) -> (f64, f64) {
        match self {
            Self::Atoms { locations, .. } => (locations[0], *locations.last().expect("nonempty")),
            Self::Grid { edges, .. } => (edges[0], *edges.last().expect("nonempty")),
        }
    }

    /// Points where the CDF may jump or change slope.
    fn breakpoints(&self) -> &[f64] {
        match self {
            Self::Atoms { locations, .. } => locations,
            Self::Grid { edges, .. } => edges,
        }
    }

    fn jumps(&self) -> &[f64] {
        match self {
            Self::Atoms { locations, .. } => locations,
            Self::Grid { .. } => &[],
        }
    }

    /// `(γ, f) = ∫ f dγ`; grid cells use the midpoint rule.
    pub fn pair(&self, f: &dyn Fn(f64) -> f64) -> f64 {
        match self {
            Self::Atoms { locations, cumulative } => {
                let mut prev = 0.0;
                locations
                    .iter()
                    .zip(cumulative)
                    .map(|(&x, &c)| {
                        let w = c - prev;
                        prev = c;
                        w * f(x)
                    })
                    .sum()
            }
            Self::Grid { edges, cumulative } => {
                edges.windows(2).zip(cumulative.windows(2)).map(|(e, c)| (c[1] - c[0]) * f(0.5 * (e[0] + e[1]))).sum()
            }
        }
    }

    pub fn mean(&self) -> f64 {
        self.pair(&|x| x)
    }

    /// CSV `location,weight` for atoms or `x,density` at cell midpoints.
    pub fn write_csv<W: Write>(&self, mut w: W) -> Result<()> {
        match self {
            Self::Atoms { locations, cumulative } => {
                writeln!(w, "location,weight")?;
                let mut prev = 0.0;
                for (x, c) in locations.iter().zip(cumulative) {
                    writeln!(w, "{x},{}", c - prev)?;
                    prev = *c;
                }
            }
            Self::Grid { edges, cumulative } => {
                writeln!(w, "x,density")?;
                for (e, c) in edges.windows(2).zip(cumulative.windows(2)) {
                    writeln!(w, "{},{}", 0.5 * (e[0] + e[1]), (c[1] - c[0]) / (e[1] - e[0]))?;
                }
            }
        }
        Ok(())
    }
}

fn grid_cdf(edges: &[f64], cumulative: &[f64], x: f64) -> f64 {
    if x <= edges[0] {
        return 0.0;
    }
    if x >= *edges.last().expect("nonempty") {
        return 1.0;
    }
    let i = edges.partition_point(|&e| e <= x) - 1;
    let s = (x - edges[i]) / (edges[i + 1] - edges[i]);
    (cumulative[i] + s * (cumulative[i + 1] - cumulative[i])).clamp(0.0, 1.0)
}

/// `(1/N) Σ δ_{x_i}`.
pub fn empirical(positions: &[f64]) -> Result<Measure1D> {
    if positions.is_empty() {
        return Err(Error::Empty("empirical measure of no points"));
    }
    let w = 1.0 / positions.len() as f64;
    let pairs: Vec<(f64, f64)> = positions.iter().map(|&x| (x, w)).collect();
    Measure1D::atoms(&pairs)
}

/// `∫ |F_μ − F_ν| dx`, exact for the piecewise-linear CDFs represented here.
pub fn wasserstein1(mu: &Measure1D, nu: &Measure1D) -> f64 {
    let mut pts: Vec<f64> = mu.breakpoints().iter().chain(nu.breakpoints()).copied().collect();
    pts.sort_by(f64::total_cmp);
    pts.dedup();
    let mut total = 0.0;
    for w in pts.windows(2) {
        let (a, b) = (w[0], w[1]);
        // both CDFs are affine on (a, b)
        let da = mu.cdf(a) - nu.cdf(a);
        let db = mu.cdf_left(b) - nu.cdf_left(b);
        let h = b - a;
        total += if da * db >= 0.0 {
            0.5 * (da.abs() + db.abs()) * h
        } else {
            0.5 * (da * da + db * db) / (da.abs() + db.abs()) * h
        };
    }
    total
}

fn levy_feasible(mu: &Measure1D, nu: &Measure1D, eps: f64) -> bool {
    let (a0, a1) = mu.support();
    let (b0, b1) = nu.support();
    let lo = a0.min(b0) - eps;
    let hi = a1.max(b1) + eps;
    // between jumps two step CDFs are constant, so their jumps (shifted by
    // ±eps) are the only points that need checking
    let both_atomic = matches!((mu, nu), (Measure1D::Atoms { .. }, Measure1D::Atoms { .. }));
    let grid = if both_atomic { 0 } else { LEVY_GRID };
    let mut xs: Vec<f64> = (0..grid).map(|i| lo + (hi - lo) * i as f64 / (grid - 1) as f64).collect();
    for &x in nu.jumps() {
        xs.push(x);
    }
    for &x in mu.jumps() {
        xs.push(x - eps);
        xs.push(x + eps);
    }
    let slack = 1e-12;
    xs.iter().all(|&x| {
        let lower_ok =
            mu.cdf(x - eps) - eps <= nu.cdf(x) + slack && mu.cdf_left(x - eps) - eps <= nu.cdf_left(x) + slack;
        let upper_ok =
            nu.cdf(x) <= mu.cdf(x + eps) + eps + slack && nu.cdf_left(x) <= mu.cdf_left(x + eps) + eps + slack;
        lower_ok && upper_ok
    })
}

/// Lévy distance by bisection on the corridor width, to [`LEVY_TOL`].
pub fn levy(mu: &Measure1D, nu: &Measure1D) -> f64 {
    if levy_feasible(mu, nu, 0.0) {
        return 0.0;
    }
    let (mut lo, mut hi) = (0.0, 1.0);
    while hi - lo > LEVY_TOL {
        let mid = 0.5 * (lo + hi);
        if levy_feasible(mu, nu, mid) {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    hi
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum Metric {
    Levy,
    #[default]
    Wasserstein1,
}

impl Metric {
    pub fn distance(self, mu: &Measure1D, nu: &Measure1D) -> f64 {
        match self {
            Metric::Levy => levy(mu, nu),
            Metric::Wasserstein1 => wasserstein1(mu, nu),
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Metric::Levy => "levy",
            Metric::Wasserstein1 => "wasserstein1",
        }
    }
}

/// Anything that can be paired with a test function at the nodes of a time
/// grid: measure paths, PDE trajectories, the analytic limit.
pub trait PathPairing {
    fn times(&self) -> &[f64];
    fn pair_at(&self, j: usize, f: &dyn Fn(f64) -> f64) -> f64;
}

#[derive(Debug, Clone, PartialEq)]
pub struct MeasurePath {
    times: Vec<f64>,
    measures: Vec<Measure1D>,
}

impl MeasurePath {
    pub fn new(times: Vec<f64>, measures: Vec<Measure1D>) -> Result<Self> {
        if times.is_empty() || times.len() != measures.len() {
            return Err(domain("measure path needs one measure per time node"));
        }
        if times.windows(2).any(|w| !(w[1] > w[0])) {
            return Err(domain("measure path times must be strictly increasing"));
        }
        Ok(Self { times, measures })
    }

    pub fn measures(&self) -> &[Measure1D] {
        &self.measures
    }
}

impl PathPairing for MeasurePath {
    fn times(&self) -> &[f64] {
        &self.times
    }

    fn pair_at(&self, j: usize, f: &dyn Fn(f64) -> f64) -> f64 {
        self.measures[j].pair(f)
    }
}

/// `max_j d(p(t_j), q(t_j))`.
pub fn sup_distance(p: &MeasurePath, q: &MeasurePath, metric: Metric) -> Result<f64> {
    if p.times.len() != q.times.len()
        || p.times.iter().zip(&q.times).any(|(a, b)| (a - b).abs() > 1e-12 * a.abs().max(1.0))
    {
        return Err(Error::GridMismatch(format!("{} vs {} nodes", p.times.len(), q.times.len())));
    }
    Ok(p.measures.iter().zip(&q.measures).map(|(a, b)| metric.distance(a, b)).fold(0.0, f64::max))
}

/// `α_i = x_i / Σ_k x_k`.
pub fn market_weights(positions: &[f64]) -> Result<Vec<f64>> {
    if positions.iter().any(|&x| !(x >= 0.0) || !x.is_finite()) {
        return Err(domain("capitalizations must be finite and nonnegative"));
    }
    let total: f64 = positions.iter().sum();
    if !(total > 0.0) {
        return Err(Error::Degenerate("all capitalizations are zero".into()));
    }
    Ok(positions.iter().map(|x| x / total).collect())
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RankRow {
    pub rank: usize,
    pub observed: f64,
    pub limit_quantile: f64,
    pub gap: f64,
}

/// Compares the `k`-th smallest position with the limit quantile at
/// plotting position `k/(N+1)`.
pub fn ranked_vs_limit(positions: &[f64], law: &LimitLaw, t: f64) -> Result<Vec<RankRow>> {
    ranked_vs_table(positions, &law.cdf_table(t, 1e-3)?)
}

/// [`ranked_vs_limit`] against a prebuilt CDF table.
pub fn ranked_vs_table(positions: &[f64], table: &CdfTable) -> Result<Vec<RankRow>> {
    if positions.is_empty() {
        return Err(Error::Empty("no positions to rank"));
    }
    let n = positions.len();
    let mut sorted = positions.to_vec();
    sorted.sort_by(f64::total_cmp);
    sorted
        .into_iter()
        .enumerate()
        .map(|(i, observed)| {
            let rank = i + 1;
            let q = table.quantile(rank as f64 / (n + 1) as f64)?;
            Ok(RankRow { rank, observed, limit_quantile: q, gap: (observed - q).abs() })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::InitialLaw;
    use crate::rng::seeded;
    use proptest::prelude::*;

    fn dirac(x: f64) -> Measure1D {
        Measure1D::atoms(&[(x, 1.0)]).unwrap()
    }

    #[test]
    fn empirical_merges_duplicates() {
        let m = empirical(&[1.0, 1.0, 3.0]).unwrap();
        match &m {
            Measure1D::Atoms { locations, cumulative } => {
                assert_eq!(locations, &vec![1.0, 3.0]);
                assert!((cumulative[0] - 2.0 / 3.0).abs() < 1e-15);
            }
            _ => unreachable!(),
        }
        assert!((m.cdf(2.0) - 2.0 / 3.0).abs() < 1e-15);
        assert!(empirical(&[]).is_err());
    }

    #[test]
    fn empirical_gamma_close_in_w1() {
        let law = InitialLaw::gamma(2.0, 0.5);
        let s = law.sample(100_000, &mut seeded(31)).unwrap();
        let emp = empirical(&s).unwrap();
        let n = 4000;
        let edges: Vec<f64> = (0..=n).map(|i| 20.0 * i as f64 / n as f64).collect();
        let cdf: Vec<f64> = edges.iter().map(|&x| law.cdf(x)).collect();
        let exact = Measure1D::from_cdf_nodes(&edges, &cdf).unwrap();
        assert!(wasserstein1(&emp, &exact) < 0.02);
    }

    #[test]
    fn w1_simple_cases() {
        let a = dirac(0.0);
        let b = dirac(1.0);
        assert_eq!(wasserstein1(&a, &a), 0.0);
        assert!((wasserstein1(&a, &b) - 1.0).abs() < 1e-15);
        let two = Measure1D::atoms(&[(0.0, 0.5), (2.0, 0.5)]).unwrap();
        assert!((wasserstein1(&two, &b) - 1.0).abs() < 1e-15);
    }

    #[test]
    fn w1_grid_against_atoms() {
        // uniform on [0,1] vs δ_0 is the mean 1/2
        let u = Measure1D::grid(&[0.0, 0.5, 1.0], &[1.0, 1.0]).unwrap();
        assert!((wasserstein1(&u, &dirac(0.0)) - 0.5).abs() < 1e-15);
        // uniform vs δ_{1/2}: ∫|F - 1{x≥1/2}| = 1/4
        assert!((wasserstein1(&u, &dirac(0.5)) - 0.25).abs() < 1e-15);
        let v = Measure1D::grid(&[1.0, 2.0], &[1.0]).unwrap();
        assert!((wasserstein1(&u, &v) - 1.0).abs() < 1e-15);
    }

    #[test]
    fn levy_simple_cases() {
        let a = dirac(0.0);
        assert_eq!(levy(&a, &a), 0.0);
        let d = levy(&a, &dirac(0.5));
        assert!((d - 0.5).abs() < 1e-3, "{d}");
        assert!(levy(&a, &dirac(100.0)) <= 1.0);
    }

    /// Brute-force feasibility scan over a fine ε grid.
    #[test]
    fn levy_matches_brute_force() {
        let mu = Measure1D::atoms(&[(0.0, 0.3), (0.4, 0.7)]).unwrap();
        let nu = Measure1D::atoms(&[(0.2, 0.5), (0.9, 0.5)]).unwrap();
        let xs: Vec<f64> = (0..=20_000).map(|i| -1.5 + 3.0 * i as f64 / 20_000.0).collect();
        let feasible = |e: f64| {
            xs.iter().all(|&x| mu.cdf(x - e) - e <= nu.cdf(x) + 1e-12 && nu.cdf(x) <= mu.cdf(x + e) + e + 1e-12)
        };
        let brute = (0..=10_000).map(|i| i as f64 * 1e-4).find(|&e| feasible(e)).unwrap();
        let d = levy(&mu, &nu);
        assert!((d - brute).abs() < 5e-4, "{d} vs {brute}");
    }

    #[test]
    fn sup_distance_cases() {
        let p = MeasurePath::new(vec![0.0, 1.0], vec![dirac(0.0), dirac(1.0)]).unwrap();
        assert_eq!(sup_distance(&p, &p, Metric::Wasserstein1).unwrap(), 0.0);
        let q = MeasurePath::new(vec![0.0, 1.0], vec![dirac(0.5), dirac(1.0)]).unwrap();
        assert!((sup_distance(&p, &q, Metric::Wasserstein1).unwrap() - 0.5).abs() < 1e-15);
        let single_a = MeasurePath::new(vec![0.0], vec![dirac(0.0)]).unwrap();
        let single_b = MeasurePath::new(vec![0.0], vec![dirac(0.5)]).unwrap();
        assert_eq!(sup_distance(&single_a, &single_b, Metric::Levy).unwrap(), levy(&dirac(0.0), &dirac(0.5)));
        assert!(matches!(sup_distance(&p, &single_a, Metric::Levy), Err(Error::GridMismatch(_))));
    }

    #[test]
    fn market_weight_cases() {
        assert_eq!(market_weights(&[1.0, 1.0, 2.0]).unwrap(), vec![0.25, 0.25, 0.5]);
        assert_eq!(market_weights(&[5.0]).unwrap(), vec![1.0]);
        assert!(market_weights(&[0.0, 0.0]).is_err());
        assert!(market_weights(&[-1.0, 2.0]).is_err());
    }

    #[test]
    fn ranked_rows() {
        let l = LimitLaw::new(2.0, InitialLaw::point_mass(1.0)).unwrap();
        let rows = ranked_vs_limit(&[1.7], &l, 1.0).unwrap();
        assert_eq!(rows.len(), 1);
        let med = l.quantile(1.0, 0.5).unwrap();
        assert!((rows[0].limit_quantile - med).abs() < 1e-6);
        let rows = ranked_vs_limit(&[3.0, 0.5, 2.0, 1.0], &l, 1.0).unwrap();
        assert!(rows.windows(2).all(|w| w[0].observed <= w[1].observed && w[0].limit_quantile < w[1].limit_quantile));
        assert_eq!(rows[3].rank, 4);
    }

    #[test]
    fn csv_export() {
        let mut buf = Vec::new();
        empirical(&[1.0, 3.0]).unwrap().write_csv(&mut buf).unwrap();
        assert_eq!(String::from_utf8(buf).unwrap(), "location,weight\n1,0.5\n3,0.5\n");
    }

    fn atomic() -> impl Strategy<Value = Measure1D> {
        prop::collection::vec((0.0f64..5.0, 0.01f64..1.0), 1..6).prop_map(|v| {
            let total: f64 = v.iter().map(|p| p.1).sum();
            let pairs: Vec<(f64, f64)> = v.iter().map(|&(x, w)| (x, w / total)).collect();
            Measure1D::atoms(&pairs).unwrap()
        })
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(200))]

        #[test]
        fn w1_metric_axioms(a in atomic(), b in atomic(), c in atomic()) {
            let ab = wasserstein1(&a, &b);
            prop_assert!(ab >= 0.0);
            prop_assert!((ab - wasserstein1(&b, &a)).abs() < 1e-12);
            prop_assert!(wasserstein1(&a, &a) < 1e-12);
            prop_assert!(wasserstein1(&a, &c) <= ab + wasserstein1(&b, &c) + 1e-12);
        }

        #[test]
        fn levy_metric_axioms(a in atomic(), b in atomic(), c in atomic()) {
            let ab = levy(&a, &b);
            prop_assert!((0.0..=1.0).contains(&ab));
            prop_assert!((ab - levy(&b, &a)).abs() <= 2.0 * LEVY_TOL);
            prop_assert_eq!(levy(&a, &a), 0.0);
            prop_assert!(levy(&a, &c) <= ab + levy(&b, &c) + 2.0 * LEVY_TOL);
        }

        #[test]
        fn duplicate_invariance(xs in prop::collection::vec(0.0f64..10.0, 1..40)) {
            let doubled: Vec<f64> = xs.iter().chain(xs.iter()).copied().collect();
            prop_assert!(wasserstein1(&empirical(&xs).unwrap(), &empirical(&doubled).unwrap()) < 1e-12);
        }

        #[test]
        fn weights_normalize_and_are_scale_free(xs in prop::collection::vec(0.0f64..100.0, 1..50), c in 0.01f64..100.0) {
            prop_assume!(xs.iter().any(|&x| x > 0.0));
            let w = market_weights(&xs).unwrap();
            prop_assert!((w.iter().sum::<f64>() - 1.0).abs() < 1e-12);
            let scaled: Vec<f64> = xs.iter().map(|x| x * c).collect();
            let ws = market_weights(&scaled).unwrap();
            for (a, b) in w.iter().zip(&ws) {
                prop_assert!((a - b).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn levy_vanishes_with_w1_on_shrinking_family() {
        let base = Measure1D::atoms(&[(1.0, 0.5), (2.0, 0.5)]).unwrap();
        let mut prev_levy = f64::INFINITY;
        for k in 1..6 {
            let s = 0.5f64.powi(k);
            let m = Measure1D::atoms(&[(1.0 + s, 0.5), (2.0 - s / 2.0, 0.5)]).unwrap();
            let w = wasserstein1(&base, &m);
            let l = levy(&base, &m);
            assert!((w - 0.75 * s).abs() < 1e-12);
            assert!(l <= prev_levy + LEVY_TOL);
            prev_levy = l;
        }
        assert!(prev_levy < 0.05);
    }
}
