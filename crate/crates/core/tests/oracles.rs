//! Independent reference values for the Ornstein–Uhlenbeck thresholds.
//!
//! For `dX = -X dt + dW` the increasing fundamental solution has the integral
//! form `ψ_s(x) = ∫_0^∞ t^{s-1} exp(√2 x t - t²/2) dt` and `φ_s(x) = ψ_s(-x)`.
//! With `m'(y) = 2e^{-y²}` every Green-function integral against a
//! piecewise-linear source collapses to a one-dimensional integral over `t`
//! of Gaussian segment masses, which are closed form. The thresholds below
//! come from bisection on the raw (unnormalized) optimality conditions and
//! share no code with the library solvers.

use std::f64::consts::{PI, SQRT_2};

use diffctl::cost::RunningCost;
use diffctl::diffusion::DiffusionModel;
use diffctl::problem::{ProblemKind, ProblemSpec};
use diffctl::solvers::{solve, SolverOptions};
use statrs::function::erf::erfc;

const GAMMA: f64 = 0.1;

/// `∫_a^b e^{-u²} du`, without cancellation in the tails.
fn gauss_mass(a: f64, b: f64) -> f64 {
    let half = 0.5 * PI.sqrt();
    if b <= 0.0 {
        half * (erfc(-b) - erfc(-a))
    } else if a >= 0.0 {
        half * (erfc(a) - erfc(b))
    } else {
        half * (2.0 - erfc(-a) - erfc(b))
    }
}

/// `∫_a^b e^{-(y-c)²} (α + β y) dy`.
fn segment(a: f64, b: f64, c: f64, alpha: f64, beta: f64) -> f64 {
    if a >= b {
        return 0.0;
    }
    let (ua, ub) = (a - c, b - c);
    let ea = if ua.is_finite() { (-ua * ua).exp() } else { 0.0 };
    let eb = if ub.is_finite() { (-ub * ub).exp() } else { 0.0 };
    (alpha + beta * c) * gauss_mass(ua, ub) + 0.5 * beta * (ea - eb)
}

/// The source `|y| - g y`.
#[derive(Clone, Copy)]
struct Kinked {
    g: f64,
}

impl Kinked {
    fn eval(self, y: f64) -> f64 {
        y.abs() - self.g * y
    }

    /// `∫_lo^hi e^{-(y-c)²} f(y) dy`.
    fn weighted(self, lo: f64, hi: f64, c: f64) -> f64 {
        let neg = segment(lo, hi.min(0.0), c, 0.0, -1.0 - self.g);
        let pos = segment(lo.max(0.0), hi, c, 0.0, 1.0 - self.g);
        neg + pos
    }
}

const T_MAX: f64 = 40.0;

/// Tanh–sinh rule for `∫_0^T_MAX f`; it tolerates the `t^{s-1}`
/// endpoint singularity that defeats Newton–Cotes rules.
fn quad(f: impl Fn(f64) -> f64) -> f64 {
    const H: f64 = 1.0 / 256.0;
    const LEVELS: i32 = 6 * 256;
    let half_pi = 0.5 * PI;
    let mut acc = 0.0;
    for k in -LEVELS..=LEVELS {
        let tau = k as f64 * H;
        let u = half_pi * tau.sinh();
        let t = T_MAX / (1.0 + (-2.0 * u).exp());
        let w = T_MAX * half_pi * tau.cosh() / (2.0 * u.cosh().powi(2));
        if w > 0.0 && t > 0.0 && t < T_MAX {
            acc += w * f(t);
        }
    }
    acc * H
}

/// `∫_0^∞ t^{s-1} F(t) dt`.
fn mellin(s: f64, f: impl Fn(f64) -> f64) -> f64 {
    quad(|t| tpow(t, s - 1.0) * f(t))
}

fn tpow(t: f64, p: f64) -> f64 {
    if p == 0.0 {
        1.0
    } else {
        t.powf(p)
    }
}

/// `∫_{-∞}^x ψ_s f m'`.
fn lower_integral(s: f64, f: Kinked, x: f64) -> f64 {
    2.0 * mellin(s, |t| f.weighted(f64::NEG_INFINITY, x, t / SQRT_2))
}

/// `∫_x^∞ φ_s f m'`.
fn upper_integral(s: f64, f: Kinked, x: f64) -> f64 {
    2.0 * mellin(s, |t| f.weighted(x, f64::INFINITY, -t / SQRT_2))
}

/// `ψ_s'(x)/S'(x)` with `S'(x) = e^{x²}`.
fn psi_prime_over_scale(s: f64, x: f64) -> f64 {
    SQRT_2 * mellin(s + 1.0, |t| (-(x - t / SQRT_2).powi(2)).exp())
}

/// `φ_s'(x)/S'(x)`.
fn phi_prime_over_scale(s: f64, x: f64) -> f64 {
    -SQRT_2 * mellin(s + 1.0, |t| (-(x + t / SQRT_2).powi(2)).exp())
}

fn k_raw(r: f64, f: Kinked, x: f64) -> f64 {
    r * lower_integral(r, f, x) - psi_prime_over_scale(r, x) * f.eval(x)
}

fn l_raw(s: f64, f: Kinked, x: f64) -> f64 {
    s * upper_integral(s, f, x) + phi_prime_over_scale(s, x) * f.eval(x)
}

/// `m(-∞, x)`.
fn speed_below(x: f64) -> f64 {
    PI.sqrt() * erfc(-x)
}

/// `∫_{-∞}^x (f(z) - f(x)) m'(z) dz`.
fn h_raw(f: Kinked, x: f64) -> f64 {
    2.0 * f.weighted(f64::NEG_INFINITY, x, 0.0) - f.eval(x) * speed_below(x)
}

fn bisect(f: impl Fn(f64) -> f64, mut lo: f64, mut hi: f64) -> f64 {
    let mut flo = f(lo);
    assert!(flo * f(hi) < 0.0, "oracle bracket [{lo}, {hi}] has no sign change");
    for _ in 0..80 {
        let mid = 0.5 * (lo + hi);
        let fm = f(mid);
        if fm == 0.0 {
            return mid;
        }
        if fm.signum() == flo.signum() {
            lo = mid;
            flo = fm;
        } else {
            hi = mid;
        }
        if hi - lo < 1e-14 {
            break;
        }
    }
    0.5 * (lo + hi)
}

fn theta(r: f64) -> Kinked {
    Kinked { g: GAMMA * (1.0 + r) }
}

fn pi_mu() -> Kinked {
    Kinked { g: GAMMA }
}

fn oracle_singular_discounted(r: f64) -> f64 {
    bisect(|y| k_raw(r, theta(r), y), 0.05, 1.5)
}

fn oracle_singular_ergodic() -> f64 {
    bisect(|b| h_raw(pi_mu(), b), 0.05, 1.5)
}

fn oracle_constrained_discounted(r: f64, lam: f64) -> f64 {
    let th = theta(r);
    bisect(
        |y| psi_prime_over_scale(r, y) * l_raw(r + lam, th, y) + phi_prime_over_scale(r + lam, y) * k_raw(r, th, y),
        0.05,
        1.5,
    )
}

fn oracle_constrained_ergodic(lam: f64) -> f64 {
    let f = pi_mu();
    bisect(|b| speed_below(b) * l_raw(lam, f, b) + phi_prime_over_scale(lam, b) * h_raw(f, b), 0.05, 1.5)
}

fn library(problem: ProblemKind, r: f64, lam: f64) -> f64 {
    let m = DiffusionModel::ornstein_uhlenbeck(1.0).unwrap();
    let spec = ProblemSpec::new(RunningCost::abs(), GAMMA, r, lam, 0.5, problem);
    solve(&m, &spec, &SolverOptions::default()).unwrap().threshold
}

// Frozen from the oracle above.
const Y_S: f64 = 0.452_719_964_657_705;
const B_S: f64 = 0.535_234_705_577_920;
const Y_20: f64 = 0.323_138_272_705_3;
const B_20: f64 = 0.397_942_115_702_5;

#[test]
fn oracle_reproduces_singular_thresholds() {
    let y = oracle_singular_discounted(1.0);
    let b = oracle_singular_ergodic();
    assert!((y - Y_S).abs() < 1e-10, "{y}");
    assert!((b - B_S).abs() < 1e-10, "{b}");
}

#[test]
fn constrained_thresholds_match_oracle() {
    let y = oracle_constrained_discounted(1.0, 20.0);
    let b = oracle_constrained_ergodic(20.0);
    println!("oracle y* = {y:.16}, b* = {b:.16}");
    assert!((y - Y_20).abs() < 1e-10, "{y}");
    assert!((b - B_20).abs() < 1e-10, "{b}");
    let ly = library(ProblemKind::ConstrainedDiscounted, 1.0, 20.0);
    let lb = library(ProblemKind::ConstrainedErgodic, 1.0, 20.0);
    assert!((ly - y).abs() < 1e-8, "{ly} vs {y}");
    assert!((lb - b).abs() < 1e-8, "{lb} vs {b}");
}

#[test]
fn singular_thresholds_match_oracle_across_discounts() {
    for r in [0.3, 1.0, 3.0] {
        let y = oracle_singular_discounted(r);
        let l = library(ProblemKind::SingularDiscounted, r, 1.0);
        assert!((l - y).abs() < 1e-8, "r={r}: {l} vs {y}");
    }
}

#[test]
fn constrained_threshold_matches_oracle_at_small_intensity() {
    let y = oracle_constrained_discounted(1.0, 2.0);
    let l = library(ProblemKind::ConstrainedDiscounted, 1.0, 2.0);
    assert!((l - y).abs() < 1e-8, "{l} vs {y}");
}
