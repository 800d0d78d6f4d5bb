//! Bracketed root finding: geometric bracket search followed by Brent's
//! method.

use serde::Serialize;

use crate::error::{Error, Result};

/// Bracket search and refinement settings.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, serde::Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RootConfig {
    /// Absolute tolerance on the root location, scaled by `1 + |x|`.
    pub x_tol: f64,
    pub max_iterations: usize,
    pub expansion_factor: f64,
    pub max_expansions: usize,
}

impl Default for RootConfig {
    fn default() -> Self {
        Self {
            x_tol: 1e-12,
            max_iterations: 200,
            expansion_factor: 2.0,
            max_expansions: 60,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct RootBracket {
    pub lo: f64,
    pub hi: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct RootResult {
    pub root: f64,
    /// Condition value at `root`.
    pub residual: f64,
    pub bracket: RootBracket,
    pub iterations: usize,
    pub evaluations: usize,
}

/// Widens `[seed, seed + width]` geometrically (upward first, then
/// downward) until the condition changes sign between two evaluated points.
///
/// Points where the condition cannot be evaluated stop the search in that
/// direction.
pub fn expand_bracket<F>(f: &mut F, seed: f64, width: f64, domain: (f64, f64), cfg: &RootConfig) -> Result<(RootBracket, usize)>
where
    F: FnMut(f64) -> Result<f64>,
{
    let mut evals = 0usize;
    let mut eval = |x: f64, evals: &mut usize| -> Option<f64> {
        *evals += 1;
        f(x).ok().filter(|v| v.is_finite())
    };
    let f0 = eval(seed, &mut evals).ok_or_else(|| Error::NoRoot {
        detail: format!("condition could not be evaluated at the seed {seed}"),
    })?;
    if f0 == 0.0 {
        return Ok((RootBracket { lo: seed, hi: seed }, evals));
    }
    // most recent point on each side and its value
    let (mut up, mut fup) = (seed, f0);
    let (mut down, mut fdown) = (seed, f0);
    let (mut up_open, mut down_open) = (true, true);
    let mut step = width;
    for _ in 0..cfg.max_expansions {
        if up_open {
            let x = seed + step;
            if x >= domain.1 {
                up_open = false;
            } else if let Some(v) = eval(x, &mut evals) {
                if v.signum() != fup.signum() || v == 0.0 {
                    return Ok((RootBracket { lo: up, hi: x }, evals));
                }
                up = x;
                fup = v;
            } else {
                up_open = false;
            }
        }
        if down_open {
            let x = seed - step;
            if x <= domain.0 {
                down_open = false;
            } else if let Some(v) = eval(x, &mut evals) {
                if v.signum() != fdown.signum() || v == 0.0 {
                    return Ok((RootBracket { lo: x, hi: down }, evals));
                }
                down = x;
                fdown = v;
            } else {
                down_open = false;
            }
        }
        if !up_open && !down_open {
            break;
        }
        step *= cfg.expansion_factor;
    }
    Err(Error::NoRoot {
        detail: format!(
            "no sign change in [{down:.6e}, {up:.6e}] (condition {fdown:.3e} at the low end, {fup:.3e} at the high end)"
        ),
    })
}

/// Brent's method on a sign-changing bracket.
pub fn brent<F>(f: &mut F, bracket: RootBracket, cfg: &RootConfig) -> Result<RootResult>
where
    F: FnMut(f64) -> Result<f64>,
{
    let (mut a, mut b) = (bracket.lo, bracket.hi);
    let mut fa = f(a)?;
    let mut fb = f(b)?;
    let mut evals = 2;
    if fa == 0.0 {
        return Ok(RootResult {
            root: a,
            residual: 0.0,
            bracket,
            iterations: 0,
            evaluations: evals,
        });
    }
    if fb == 0.0 {
        return Ok(RootResult {
            root: b,
            residual: 0.0,
            bracket,
            iterations: 0,
            evaluations: evals,
        });
    }
    if fa.signum() == fb.signum() {
        return Err(Error::NoRoot {
            detail: format!("bracket [{a}, {b}] does not change sign ({fa:.3e}, {fb:.3e})"),
        });
    }
    let (mut c, mut fc) = (a, fa);
    let mut d = b - a;
    let mut e = d;
    for iter in 1..=cfg.max_iterations {
        if fb.signum() == fc.signum() {
            c = a;
            fc = fa;
            d = b - a;
            e = d;
        }
        if fc.abs() < fb.abs() {
            a = b;
            b = c;
            c = a;
            fa = fb;
            fb = fc;
            fc = fa;
        }
        let tol = 2.0 * f64::EPSILON * b.abs() + 0.5 * cfg.x_tol * (1.0 + b.abs());
        let m = 0.5 * (c - b);
        if m.abs() <= tol || fb == 0.0 {
            return Ok(RootResult {
                root: b,
                residual: fb,
                bracket,
                iterations: iter,
                evaluations: evals,
            });
        }
        if e.abs() >= tol && fa.abs() > fb.abs() {
            let s = fb / fa;
            let (mut p, mut q);
            if a == c {
                p = 2.0 * m * s;
                q = 1.0 - s;
            } else {
                let qa = fa / fc;
                let r = fb / fc;
                p = s * (2.0 * m * qa * (qa - r) - (b - a) * (r - 1.0));
                q = (qa - 1.0) * (r - 1.0) * (s - 1.0);
            }
            if p > 0.0 {
                q = -q;
            } else {
                p = -p;
            }
            if 2.0 * p < (3.0 * m * q - (tol * q).abs()).min((e * q).abs()) {
                e = d;
                d = p / q;
            } else {
                d = m;
                e = m;
            }
        } else {
            d = m;
            e = m;
        }
        a = b;
        fa = fb;
        b += if d.abs() > tol { d } else { tol.copysign(m) };
        fb = f(b)?;
        evals += 1;
    }
    Err(Error::NoRoot {
        detail: format!("Brent iteration did not converge within {} steps", cfg.max_iterations),
    })
}

/// Bracket search from `seed` followed by Brent refinement.
pub fn find_root<F>(mut f: F, seed: f64, width: f64, domain: (f64, f64), cfg: &RootConfig) -> Result<RootResult>
where
    F: FnMut(f64) -> Result<f64>,
{
    let (bracket, n) = expand_bracket(&mut f, seed, width, domain, cfg)?;
    if bracket.lo == bracket.hi {
        return Ok(RootResult {
            root: bracket.lo,
            residual: 0.0,
            bracket,
            iterations: 0,
            evaluations: n,
        });
    }
    let mut r = brent(&mut f, bracket, cfg)?;
    r.evaluations += n;
    Ok(r)
}

/// Number of sign changes of `f` on `n` equally spaced points of
/// `[lo, hi]`, skipping points where it cannot be evaluated.
pub fn count_sign_changes<F>(mut f: F, lo: f64, hi: f64, n: usize) -> usize
where
    F: FnMut(f64) -> Result<f64>,
{
    let mut last: Option<f64> = None;
    let mut changes = 0;
    for i in 0..n {
        let x = lo + (hi - lo) * i as f64 / (n - 1).max(1) as f64;
        if let Ok(v) = f(x) {
            if v == 0.0 || !v.is_finite() {
                continue;
            }
            if let Some(p) = last {
                if p.signum() != v.signum() {
                    changes += 1;
                }
            }
            last = Some(v);
        }
    }
    changes
}
