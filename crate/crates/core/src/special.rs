//! Parabolic cylinder functions `D_ν(z)` for `ν ≤ 0`.
//!
//! Evaluated from the integral representation
//!
//! ```text
//! D_ν(z) = e^{-z²/4} / Γ(-ν) ∫_0^∞ t^{-ν-1} e^{-t²/2 - z t} dt,   ν < 0
//! ```
//!
//! in log space, so that very negative orders (large Poisson rates in the
//! Ornstein–Uhlenbeck model) neither overflow `Γ(-ν)` nor underflow the
//! result. Orders close to zero make the integrand singular at the origin;
//! that piece is handled by subtracting the leading `t^{a-1}` behaviour
//! analytically.

use statrs::function::gamma::ln_gamma;

use crate::error::{Error, Result};
use crate::quadrature::{integrate_finite, QuadratureConfig};

/// Drop the integrand once it falls this many e-folds below its maximum.
const LOG_CUTOFF: f64 = 60.0;

fn weber_cfg() -> QuadratureConfig {
    QuadratureConfig {
        abs_tol: 1e-300,
        rel_tol: 1e-13,
        max_subdivisions: 200,
        ..QuadratureConfig::default()
    }
}

/// `ln ∫_0^∞ t^{a-1} e^{-t²/2 - z t} dt` for `a > 0`. NaN on failure.
fn ln_weber_integral(a: f64, z: f64) -> f64 {
    let expo = |t: f64| {
        let lead = if a == 1.0 { 0.0 } else { (a - 1.0) * t.ln() };
        lead - 0.5 * t * t - z * t
    };
    let cfg = weber_cfg();
    if a >= 1.0 {
        // unimodal: single critical point where t² + z t - (a - 1) = 0
        let disc = (z * z + 4.0 * (a - 1.0)).sqrt();
        let peak = if z > 0.0 {
            2.0 * (a - 1.0) / (z + disc)
        } else {
            0.5 * (disc - z)
        };
        let top = if peak > 0.0 { expo(peak) } else { 0.0 };
        let mut left = 0.0;
        if peak > 0.0 {
            let mut t = peak;
            for _ in 0..80 {
                t *= 0.5;
                if expo(t) < top - LOG_CUTOFF {
                    left = t;
                    break;
                }
            }
        }
        let right = right_cutoff(&expo, peak.max(0.0), top);
        let scaled = |t: f64| {
            if t <= 0.0 {
                if a == 1.0 {
                    (-top).exp()
                } else {
                    0.0
                }
            } else {
                (expo(t) - top).exp()
            }
        };
        match integrate_finite(&scaled, left, right, &[peak], &cfg) {
            Ok(j) if j > 0.0 => top + j.ln(),
            _ => f64::NAN,
        }
    } else {
        // 0 < a < 1: singular at the origin.
        let c = if z.abs() > 1.0 { 1.0 / z.abs() } else { 1.0 };
        let near = |t: f64| {
            if t <= 0.0 {
                0.0
            } else {
                t.powf(a - 1.0) * (-0.5 * t * t - z * t).exp_m1()
            }
        };
        let head = match integrate_finite(&near, 0.0, c, &[], &cfg) {
            Ok(v) => c.powf(a) / a + v,
            Err(_) => return f64::NAN,
        };
        // remaining range [c, ∞): at most one interior local maximum
        let disc = z * z - 4.0 * (1.0 - a);
        let mut peak = c;
        if z < 0.0 && disc >= 0.0 {
            let t2 = 0.5 * (-z + disc.sqrt());
            if t2 > c {
                peak = t2;
            }
        }
        let top = expo(c).max(expo(peak));
        let right = right_cutoff(&expo, peak, top);
        let scaled = |t: f64| (expo(t) - top).exp();
        let tail = match integrate_finite(&scaled, c, right, &[peak], &cfg) {
            Ok(v) => v,
            Err(_) => return f64::NAN,
        };
        if !(head > 0.0) {
            return f64::NAN;
        }
        log_add(head.ln(), top + tail.ln())
    }
}

fn right_cutoff(expo: &impl Fn(f64) -> f64, from: f64, top: f64) -> f64 {
    let mut w = 1.0;
    let mut t = from + w;
    for _ in 0..200 {
        if expo(t) < top - LOG_CUTOFF {
            return t;
        }
        w *= 2.0;
        t = from + w;
    }
    t
}

fn log_add(x: f64, y: f64) -> f64 {
    if y == f64::NEG_INFINITY {
        return x;
    }
    if x == f64::NEG_INFINITY {
        return y;
    }
    let (hi, lo) = if x > y { (x, y) } else { (y, x) };
    hi + (lo - hi).exp().ln_1p()
}

/// `ln D_ν(z)` without argument checks; NaN on internal failure. `ν ≤ 0`.
pub(crate) fn ln_pcf_unchecked(nu: f64, z: f64) -> f64 {
    if nu == 0.0 {
        return -0.25 * z * z;
    }
    let a = -nu;
    -0.25 * z * z - ln_gamma(a) + ln_weber_integral(a, z)
}

/// `D_ν'(z) / D_ν(z)` from `D_ν' = -z/2 D_ν + ν D_{ν-1}`. NaN on failure.
pub(crate) fn pcf_log_derivative_unchecked(nu: f64, z: f64) -> f64 {
    if nu == 0.0 {
        return -0.5 * z;
    }
    let ratio = (ln_pcf_unchecked(nu - 1.0, z) - ln_pcf_unchecked(nu, z)).exp();
    -0.5 * z + nu * ratio
}

fn check(nu: f64, z: f64) -> Result<()> {
    if !nu.is_finite() || !z.is_finite() {
        return Err(Error::Domain(format!("D_ν(z) needs finite arguments, got ν={nu}, z={z}")));
    }
    if nu > 0.0 {
        return Err(Error::Unsupported(format!(
            "parabolic cylinder order ν={nu} > 0 is outside the supported range ν ≤ 0"
        )));
    }
    Ok(())
}

/// `ln D_ν(z)` for `ν ≤ 0` (where `D_ν > 0`).
pub fn ln_parabolic_cylinder(nu: f64, z: f64) -> Result<f64> {
    check(nu, z)?;
    let v = ln_pcf_unchecked(nu, z);
    if v.is_nan() {
        return Err(Error::numerical(format!("D_ν(z) quadrature failed at ν={nu}, z={z}")));
    }
    Ok(v)
}

/// The parabolic cylinder function `D_ν(z)` for `ν ≤ 0`.
pub fn parabolic_cylinder(nu: f64, z: f64) -> Result<f64> {
    ln_parabolic_cylinder(nu, z).map(f64::exp)
}

/// Logarithmic derivative `D_ν'(z)/D_ν(z)`.
pub fn parabolic_cylinder_log_derivative(nu: f64, z: f64) -> Result<f64> {
    check(nu, z)?;
    let v = pcf_log_derivative_unchecked(nu, z);
    if !v.is_finite() {
        return Err(Error::numerical(format!("D_ν'(z) failed at ν={nu}, z={z}")));
    }
    Ok(v)
}
