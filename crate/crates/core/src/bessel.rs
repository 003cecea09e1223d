//! Modified Bessel function of the first kind, `I_ν(z)`, for real `ν ≥ 0`
//! and `z ≥ 0`.
//!
//! Small and moderate arguments use the ascending power series (all terms
//! positive, so no cancellation); large arguments use the Hankel asymptotic
//! expansion of the exponentially scaled function `e^{-z} I_ν(z)`.

use crate::error::{domain, Result};

/// Beyond this argument `I_ν` is only available in scaled or log form.
pub const Z_LARGE: f64 = 700.0;

const RESCALE: f64 = 1e280;

fn use_series(nu: f64, z: f64) -> bool {
    z <= 30.0 + nu * nu
}

fn check(nu: f64, z: f64) -> Result<()> {
    if !(nu >= 0.0) || !nu.is_finite() {
        return Err(domain(format!("bessel order must be finite and >= 0, got {nu}")));
    }
    if !(z >= 0.0) {
        return Err(domain(format!("bessel argument must be >= 0, got {z}")));
    }
    Ok(())
}

/// `ln Σ_k w^k / (k! Γ(k+ν+1))`, i.e. `ln[(z/2)^{-ν} I_ν(z)]` with `w = z²/4`.
///
/// This is the form that stays finite as `z → 0` and is what the limit-law
/// kernel needs when one of its two arguments vanishes.
pub fn ln_reduced_series(nu: f64, w: f64) -> f64 {
    ln_series_sum(nu, w) - libm::lgamma(nu + 1.0)
}

/// `ln Σ_k Γ(ν+1) w^k / (k! Γ(k+ν+1))`: the reduced series without its
/// `1/Γ(ν+1)` factor, for callers that cache `lgamma(ν+1)`.
pub fn ln_series_sum(nu: f64, w: f64) -> f64 {
    let mut term = 1.0;
    let mut sum = 1.0;
    let mut offset = 0.0;
    let mut k = 0.0;
    loop {
        term *= w / ((k + 1.0) * (k + nu + 1.0));
        sum += term;
        k += 1.0;
        if sum > RESCALE {
            sum /= RESCALE;
            term /= RESCALE;
            offset += RESCALE.ln();
        }
        if (k + 1.0) * (k + nu + 1.0) > w && term <= sum * 1e-17 {
            break;
        }
        if k > 1e6 {
            break;
        }
    }
    offset + sum.ln()
}

fn scaled_asymptotic(nu: f64, z: f64) -> f64 {
    let mu = 4.0 * nu * nu;
    let mut term = 1.0;
    let mut sum = 1.0;
    let mut prev = f64::INFINITY;
    for k in 1..400 {
        let kf = k as f64;
        let odd = 2.0 * kf - 1.0;
        term *= -(mu - odd * odd) / (8.0 * kf * z);
        let size = term.abs();
        if size > prev {
            break;
        }
        sum += term;
        if size < 1e-17 * sum.abs() {
            break;
        }
        prev = size;
    }
    sum / (2.0 * std::f64::consts::PI * z).sqrt()
}

/// `e^{-z} I_ν(z)`.
pub fn bessel_i_scaled(nu: f64, z: f64) -> Result<f64> {
    check(nu, z)?;
    Ok(scaled_unchecked(nu, z))
}

fn scaled_unchecked(nu: f64, z: f64) -> f64 {
    if z == 0.0 {
        return if nu == 0.0 { 1.0 } else { 0.0 };
    }
    if use_series(nu, z) {
        (nu * (0.5 * z).ln() - z + ln_reduced_series(nu, 0.25 * z * z)).exp()
    } else {
        scaled_asymptotic(nu, z)
    }
}

/// `ln I_ν(z)`; `-∞` at `z = 0` for `ν > 0`.
pub fn ln_bessel_i(nu: f64, z: f64) -> Result<f64> {
    check(nu, z)?;
    if z == 0.0 {
        return Ok(if nu == 0.0 { 0.0 } else { f64::NEG_INFINITY });
    }
    if use_series(nu, z) {
        Ok(nu * (0.5 * z).ln() + ln_reduced_series(nu, 0.25 * z * z))
    } else {
        Ok(scaled_asymptotic(nu, z).ln() + z)
    }
}

/// `I_ν(z)`. Overflows to `+∞` past roughly `z = 709`; use
/// [`bessel_i_scaled`] or [`ln_bessel_i`] for `z > Z_LARGE`.
pub fn bessel_i(nu: f64, z: f64) -> Result<f64> {
    check(nu, z)?;
    if z == 0.0 {
        return Ok(if nu == 0.0 { 1.0 } else { 0.0 });
    }
    if use_series(nu, z) && z < Z_LARGE {
        Ok((nu * (0.5 * z).ln() + ln_reduced_series(nu, 0.25 * z * z)).exp())
    } else {
        Ok(scaled_unchecked(nu, z) * z.exp())
    }
}
