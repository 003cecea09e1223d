//! Adaptive Gauss–Kronrod (7/15) quadrature.

use std::cmp::Ordering;
use std::collections::BinaryHeap;

const XGK: [f64; 8] = [
    0.991_455_371_120_812_6,
    0.949_107_912_342_758_5,
    0.864_864_423_359_769_1,
    0.741_531_185_599_394_4,
    0.586_087_235_467_691_1,
    0.405_845_151_377_397_2,
    0.207_784_955_007_898_5,
    0.0,
];
const WGK: [f64; 8] = [
    0.022_935_322_010_529_22,
    0.063_092_092_629_978_55,
    0.104_790_010_322_250_2,
    0.140_653_259_715_525_9,
    0.169_004_726_639_267_9,
    0.190_350_578_064_785_4,
    0.204_432_940_075_298_9,
    0.209_482_141_084_727_8,
];
const WG: [f64; 4] =
    [0.129_484_966_168_869_7, 0.279_705_391_489_276_7, 0.381_830_050_505_118_9, 0.417_959_183_673_469_4];

#[derive(Debug, Clone, Copy)]
pub struct Tolerance {
    pub abs: f64,
    pub rel: f64,
    pub max_intervals: usize,
}

impl Default for Tolerance {
    fn default() -> Self {
        Self { abs: 1e-13, rel: 1e-12, max_intervals: 2000 }
    }
}

#[derive(Debug, Clone, Copy)]
pub struct Estimate {
    pub value: f64,
    pub error: f64,
}

/// One 15-point Kronrod rule with its embedded 7-point Gauss error estimate.
pub fn gk15<F: Fn(f64) -> f64>(f: &F, a: f64, b: f64) -> Estimate {
    let c = 0.5 * (a + b);
    let h = 0.5 * (b - a);
    let fc = f(c);
    let mut kronrod = WGK[7] * fc;
    let mut gauss = WG[3] * fc;
    for j in 0..7 {
        let dx = h * XGK[j];
        let s = f(c - dx) + f(c + dx);
        kronrod += WGK[j] * s;
        if j % 2 == 1 {
            gauss += WG[j / 2] * s;
        }
    }
    Estimate { value: kronrod * h, error: ((kronrod - gauss) * h).abs() }
}

struct Piece {
    a: f64,
    b: f64,
    est: Estimate,
}

impl PartialEq for Piece {
    fn eq(&self, other: &Self) -> bool {
        self.est.error == other.est.error
    }
}
impl Eq for Piece {}
impl PartialOrd for Piece {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}
impl Ord for Piece {
    fn cmp(&self, other: &Self) -> Ordering {
        self.est.error.total_cmp(&other.est.error)
    }
}

/// Globally adaptive integration over `[a, b]`: the piece with the largest
/// error estimate is bisected until the summed error meets the tolerance.
pub fn integrate<F: Fn(f64) -> f64>(f: F, a: f64, b: f64, tol: Tolerance) -> Estimate {
    if b <= a {
        return Estimate { value: 0.0, error: 0.0 };
    }
    let first = gk15(&f, a, b);
    let mut value = first.value;
    let mut error = first.error;
    let mut heap = BinaryHeap::new();
    heap.push(Piece { a, b, est: first });
    while error > tol.abs.max(tol.rel * value.abs()) && heap.len() < tol.max_intervals {
        let Some(p) = heap.pop() else { break };
        let m = 0.5 * (p.a + p.b);
        if m <= p.a || m >= p.b {
            heap.push(p);
            break;
        }
        let l = gk15(&f, p.a, m);
        let r = gk15(&f, m, p.b);
        value += l.value + r.value - p.est.value;
        error += l.error + r.error - p.est.error;
        heap.push(Piece { a: p.a, b: m, est: l });
        heap.push(Piece { a: m, b: p.b, est: r });
    }
    // re-sum to shed the drift of incremental updates
    let (value, error) = heap.iter().fold((0.0, 0.0), |(v, e), p| (v + p.est.value, e + p.est.error));
    Estimate { value, error }
}

/// Integrates over consecutive panels `[p_0, p_1], [p_1, p_2], ...`.
pub fn integrate_panels<F: Fn(f64) -> f64>(f: F, points: &[f64], tol: Tolerance) -> Estimate {
    points.windows(2).fold(Estimate { value: 0.0, error: 0.0 }, |acc, w| {
        let e = integrate(&f, w[0], w[1], tol);
        Estimate { value: acc.value + e.value, error: acc.error + e.error }
    })
}

/// Integrates over `[points[0], ∞)`: the panels given by `points`, then
/// geometrically widening tail panels starting at width `scale` until a panel
/// contributes less than `tol.abs`.
pub fn integrate_half_line<F: Fn(f64) -> f64>(f: F, points: &[f64], scale: f64, tol: Tolerance) -> Estimate {
    let mut acc = integrate_panels(&f, points, tol);
    let mut lo = *points.last().expect("at least one panel point");
    let mut width = scale;
    for _ in 0..200 {
        let e = integrate(&f, lo, lo + width, tol);
        acc.value += e.value;
        acc.error += e.error;
        lo += width;
        width *= 1.5;
        if e.value.abs() < tol.abs && e.value.abs() <= tol.rel * acc.value.abs() {
            break;
        }
    }
    acc
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn polynomial_exact() {
        let e = integrate(|x| x.powi(5) - 2.0 * x, 0.0, 2.0, Tolerance::default());
        assert!((e.value - (64.0 / 6.0 - 4.0)).abs() < 1e-13);
    }

    #[test]
    fn exponential_integral() {
        let e = integrate(f64::exp, 0.0, 1.0, Tolerance::default());
        assert!((e.value - (std::f64::consts::E - 1.0)).abs() < 1e-14);
    }

    #[test]
    fn peaked_integrand() {
        let s = 1e-3;
        let g = |x: f64| (-(x - 0.3).powi(2) / (2.0 * s * s)).exp() / (s * (2.0 * std::f64::consts::PI).sqrt());
        let e = integrate(g, 0.0, 1.0, Tolerance::default());
        assert!((e.value - 1.0).abs() < 1e-10, "{}", e.value);
    }

    #[test]
    fn half_line_exponential() {
        let e = integrate_half_line(|x| (-x).exp(), &[0.0, 1.0], 1.0, Tolerance::default());
        assert!((e.value - 1.0).abs() < 1e-12);
    }

    #[test]
    fn empty_interval() {
        assert_eq!(integrate(|x| x, 1.0, 1.0, Tolerance::default()).value, 0.0);
    }
}
