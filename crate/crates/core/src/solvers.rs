//! Optimal thresholds and values for the four control problems.
//!
//! Each optimality condition is solved in a normalized form that has the
//! units of the running cost and no dependence on the scaling of `ψ` or `φ`:
//!
//! | problem                | condition at `x`                         |
//! |------------------------|------------------------------------------|
//! | singular discounted    | `K̂_θ^r/ℓψ_r`                             |
//! | singular ergodic       | `H_low / m(l, x)`                        |
//! | constrained discounted | `-L̂_θ^{r+λ}/ℓφ_{r+λ} - K̂_θ^r/ℓψ_r`      |
//! | constrained ergodic    | `-L̂_{π_μ}^λ/ℓφ_λ - H_low/m(l, x)`        |
//!
//! where `K̂ = S'K/ψ`, `L̂ = S'L/φ` and `ℓ` denotes a logarithmic
//! derivative. Each is the original condition divided by a positive factor.

use std::sync::Arc;

use serde::Serialize;

use crate::audit::{audit_assumptions, search_interval, AuditReport};
use crate::diffusion::DiffusionModel;
use crate::error::{Error, Result};
use crate::fundamental::{fundamental_pair, FundamentalPair};
use crate::greens::{
    functional_h, functional_h_lower_anchored, k_normalized, l_normalized, resolvent_jet, upper_kernel_integral,
    Representation, Side, Source,
};
use crate::problem::{ProblemKind, ProblemSpec};
use crate::quadrature::QuadratureConfig;
use crate::roots::{count_sign_changes, find_root, RootConfig, RootResult};

/// Numerical settings shared by all solvers.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct SolverOptions {
    pub quad: QuadratureConfig,
    pub root: RootConfig,
    /// Multiplies every `ψ` by `.0` and every `φ` by `.1`. Outputs must not
    /// depend on it.
    pub pair_scale: (f64, f64),
}

impl Default for SolverOptions {
    fn default() -> Self {
        Self {
            quad: QuadratureConfig {
                abs_tol: 1e-13,
                rel_tol: 1e-12,
                max_subdivisions: 400,
                ..QuadratureConfig::default()
            },
            root: RootConfig::default(),
            pair_scale: (1.0, 1.0),
        }
    }
}

impl SolverOptions {
    pub fn pair(&self, model: &DiffusionModel, s: f64) -> Result<FundamentalPair> {
        let p = fundamental_pair(model, s)?;
        Ok(if self.pair_scale == (1.0, 1.0) {
            p
        } else {
            p.rescaled(self.pair_scale.0, self.pair_scale.1)
        })
    }
}

/// Agreement between two independent formulas for the same number.
#[derive(Debug, Clone, Serialize)]
pub struct CrossCheck {
    pub name: String,
    pub primary: f64,
    pub alternative: f64,
    pub relative_difference: f64,
}

impl CrossCheck {
    fn new(name: &str, primary: f64, alternative: f64) -> Self {
        Self {
            name: name.to_string(),
            primary,
            alternative,
            relative_difference: (primary - alternative).abs() / primary.abs().max(f64::MIN_POSITIVE),
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct Diagnostics {
    /// Normalized condition at the returned threshold.
    pub residual: f64,
    pub bracket: (f64, f64),
    pub seed: f64,
    pub iterations: usize,
    pub evaluations: usize,
    pub quad_abs_tol: f64,
    pub quad_rel_tol: f64,
    pub root_tol: f64,
    pub cross_checks: Vec<CrossCheck>,
    /// `H` at the threshold with the subtraction taken at the lower
    /// boundary (only when it is finite), for comparison with the
    /// evaluation-point convention used in the condition.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub h_lower_anchored: Option<f64>,
}

#[derive(Debug, Clone, Serialize)]
pub struct Solution {
    pub problem: ProblemKind,
    pub model: String,
    pub threshold: f64,
    pub x0: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub value_at_x0: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub long_run_average: Option<f64>,
    pub diagnostics: Diagnostics,
    #[serde(skip)]
    value_fn: Option<Arc<ValueFunction>>,
}

impl Solution {
    pub fn value_function(&self) -> Option<&ValueFunction> {
        self.value_fn.as_deref()
    }
}

/// Branch data of a discounted value function.
#[derive(Debug, Clone)]
pub struct ValueFunction {
    model: DiffusionModel,
    spec: ProblemSpec,
    threshold: f64,
    quad: QuadratureConfig,
    lower: FundamentalPair,
    /// Coefficient of `ψ(x)/ψ(y*)` subtracted in the lower branch.
    lower_coeff: f64,
    upper: Option<UpperBranch>,
}

#[derive(Debug, Clone)]
struct UpperBranch {
    pair: FundamentalPair,
    coeff: f64,
    shift: f64,
}

impl ValueFunction {
    pub fn threshold(&self) -> f64 {
        self.threshold
    }

    /// The `x < threshold` formula, evaluated at any `x`.
    pub fn lower_branch(&self, x: f64) -> Result<f64> {
        let y = self.threshold;
        let ratio = (self.lower.ln_psi(x) - self.lower.ln_psi(y)).exp();
        match self.spec.problem {
            ProblemKind::SingularDiscounted => {
                let pi = |z: f64| self.spec.cost.eval(z);
                let p = resolvent_jet(&self.lower, Source::new(&pi, self.spec.cost.kinks()), x, &self.quad)?;
                Ok(p.value - ratio * self.lower_coeff)
            }
            _ => {
                let theta = |z: f64| self.spec.theta(&self.model, z);
                let p = resolvent_jet(&self.lower, Source::new(&theta, self.spec.cost.kinks()), x, &self.quad)?;
                Ok(self.spec.gamma * x + p.value - ratio * self.lower_coeff)
            }
        }
    }

    /// The `x ≥ threshold` formula, evaluated at any `x`.
    pub fn upper_branch(&self, x: f64) -> Result<f64> {
        let y = self.threshold;
        match &self.upper {
            None => Ok(self.spec.gamma * x + self.spec.theta(&self.model, y) / self.spec.discount),
            Some(u) => {
                let theta = |z: f64| self.spec.theta(&self.model, z);
                let q = resolvent_jet(&u.pair, Source::new(&theta, self.spec.cost.kinks()), x, &self.quad)?;
                let ratio = (u.pair.ln_phi(x) - u.pair.ln_phi(y)).exp();
                Ok(self.spec.gamma * x + q.value - ratio * u.coeff + u.shift)
            }
        }
    }

    pub fn eval(&self, x: f64) -> Result<f64> {
        if !self.model.contains(x) {
            return Err(Error::Domain(format!("x = {x} is outside the state interval")));
        }
        if x < self.threshold {
            self.lower_branch(x)
        } else {
            self.upper_branch(x)
        }
    }

    /// `|left - right| / (1 + |right|)` at the threshold.
    pub fn continuity_gap(&self) -> Result<f64> {
        let l = self.lower_branch(self.threshold)?;
        let r = self.upper_branch(self.threshold)?;
        Ok((l - r).abs() / (1.0 + r.abs()))
    }

    /// Derivative of the lower branch at the threshold, by Ridders'
    /// extrapolation of central differences. The first step stays clear of
    /// cost kinks.
    pub fn lower_slope_at_threshold(&self) -> Result<f64> {
        const CON: f64 = 1.4;
        const NTAB: usize = 10;
        let y = self.threshold;
        let kink_gap = self
            .spec
            .cost
            .kinks()
            .iter()
            .map(|k| (y - k).abs())
            .fold(f64::INFINITY, f64::min);
        let mut h = (0.2 * self.model.length_scale() * (1.0 + y.abs())).min(0.5 * kink_gap);
        let f = |x: f64| self.lower_branch(x);
        let mut a = [[0.0f64; NTAB]; NTAB];
        a[0][0] = (f(y + h)? - f(y - h)?) / (2.0 * h);
        let (mut best, mut err) = (a[0][0], f64::INFINITY);
        for i in 1..NTAB {
            h /= CON;
            a[0][i] = (f(y + h)? - f(y - h)?) / (2.0 * h);
            let mut fac = CON * CON;
            for j in 1..=i {
                a[j][i] = (a[j - 1][i] * fac - a[j - 1][i - 1]) / (fac - 1.0);
                fac *= CON * CON;
                let e = (a[j][i] - a[j - 1][i]).abs().max((a[j][i] - a[j - 1][i - 1]).abs());
                if e <= err {
                    err = e;
                    best = a[j][i];
                }
            }
            if (a[i][i] - a[i - 1][i - 1]).abs() >= 2.0 * err {
                break;
            }
        }
        Ok(best)
    }
}

/// Evaluates a discounted solution's value function.
pub fn evaluate_value(solution: &Solution, x: f64) -> Result<f64> {
    match &solution.value_fn {
        Some(v) => v.eval(x),
        None => Err(Error::Unsupported(format!(
            "{} has no value function; use long_run_average",
            solution.problem
        ))),
    }
}

/// Precomputed pieces shared by the condition evaluations of one solve.
struct Context<'a> {
    model: &'a DiffusionModel,
    spec: &'a ProblemSpec,
    opts: &'a SolverOptions,
    pair_r: Option<FundamentalPair>,
    pair_hi: Option<FundamentalPair>,
}

impl<'a> Context<'a> {
    fn new(model: &'a DiffusionModel, spec: &'a ProblemSpec, opts: &'a SolverOptions) -> Result<Self> {
        let (pair_r, pair_hi) = match spec.problem {
            ProblemKind::SingularDiscounted => (Some(opts.pair(model, spec.discount)?), None),
            ProblemKind::SingularErgodic => (None, None),
            ProblemKind::ConstrainedDiscounted => (
                Some(opts.pair(model, spec.discount)?),
                Some(opts.pair(model, spec.discount + spec.poisson_rate)?),
            ),
            ProblemKind::ConstrainedErgodic => (None, Some(opts.pair(model, spec.poisson_rate)?)),
        };
        Ok(Self {
            model,
            spec,
            opts,
            pair_r,
            pair_hi,
        })
    }

    fn theta(&self, x: f64) -> f64 {
        self.spec.theta(self.model, x)
    }

    fn pi_mu(&self, x: f64) -> f64 {
        self.spec.pi_mu(self.model, x)
    }

    /// `K̂_θ^r/ℓψ_r` (centered form).
    fn k_over_slope(&self, x: f64) -> Result<f64> {
        let p = self.pair_r.as_ref().expect("discounted context");
        let theta = |z: f64| self.theta(z);
        let k = k_normalized(p, Source::new(&theta, self.spec.cost.kinks()), x, Representation::Centered, &self.opts.quad)?;
        Ok(k / p.psi_log_derivative(x))
    }

    /// `H_low(x) / m(l, x)`.
    fn h_mean(&self, x: f64) -> Result<f64> {
        let h = functional_h(self.model, self.spec, x, Side::Lower, &self.opts.quad)?;
        let m = self.model.speed_measure(self.model.lower(), x, &self.opts.quad)?;
        Ok(h / m)
    }

    /// `-L̂_f/ℓφ` for the upper pair (centered form).
    fn l_over_slope(&self, f: &dyn Fn(f64) -> f64, x: f64) -> Result<f64> {
        let p = self.pair_hi.as_ref().expect("constrained context");
        let l = l_normalized(p, Source::new(f, self.spec.cost.kinks()), x, Representation::Centered, &self.opts.quad)?;
        Ok(-l / p.phi_log_derivative(x))
    }

    fn condition(&self, x: f64) -> Result<f64> {
        match self.spec.problem {
            ProblemKind::SingularDiscounted => self.k_over_slope(x),
            ProblemKind::SingularErgodic => self.h_mean(x),
            ProblemKind::ConstrainedDiscounted => {
                let theta = |z: f64| self.theta(z);
                Ok(self.l_over_slope(&theta, x)? - self.k_over_slope(x)?)
            }
            ProblemKind::ConstrainedErgodic => {
                let pm = |z: f64| self.pi_mu(z);
                Ok(self.l_over_slope(&pm, x)? - self.h_mean(x)?)
            }
        }
    }
}

/// The normalized optimality condition of `spec.problem` at `x`.
pub fn optimality_condition(model: &DiffusionModel, spec: &ProblemSpec, x: f64, opts: &SolverOptions) -> Result<f64> {
    spec.validate(model)?;
    Context::new(model, spec, opts)?.condition(x)
}

fn seed_for(audit: &AuditReport, problem: ProblemKind) -> f64 {
    if problem.is_ergodic() {
        audit.pi_mu_minimizer
    } else {
        audit.theta_minimizer
    }
}

fn preflight(model: &DiffusionModel, spec: &ProblemSpec, expected: ProblemKind) -> Result<AuditReport> {
    if spec.problem != expected {
        return Err(Error::invalid(format!(
            "spec selects {}, solver handles {expected}",
            spec.problem
        )));
    }
    spec.validate(model)?;
    let audit = audit_assumptions(model, spec);
    if expected.is_ergodic() {
        audit.require_recurrent()?;
    }
    Ok(audit)
}

fn root_of(ctx: &Context, seed: f64) -> Result<RootResult> {
    let width = 0.25 * ctx.model.length_scale();
    let domain = (ctx.model.lower(), ctx.model.upper());
    let seed = if seed <= domain.0 { domain.0 + width } else { seed };
    find_root(|x| ctx.condition(x), seed, width, domain, &ctx.opts.root).map_err(|e| match e {
        Error::NoRoot { detail } => Error::NoRoot {
            detail: format!("{}: {detail}", ctx.spec.problem),
        },
        other => other,
    })
}

fn diagnostics(root: &RootResult, seed: f64, opts: &SolverOptions) -> Diagnostics {
    Diagnostics {
        residual: root.residual.abs(),
        bracket: (root.bracket.lo, root.bracket.hi),
        seed,
        iterations: root.iterations,
        evaluations: root.evaluations,
        quad_abs_tol: opts.quad.abs_tol,
        quad_rel_tol: opts.quad.rel_tol,
        root_tol: opts.root.x_tol,
        cross_checks: Vec::new(),
        h_lower_anchored: None,
    }
}

pub fn solve_singular_discounted(model: &DiffusionModel, spec: &ProblemSpec, opts: &SolverOptions) -> Result<Solution> {
    let audit = preflight(model, spec, ProblemKind::SingularDiscounted)?;
    let ctx = Context::new(model, spec, opts)?;
    let seed = seed_for(&audit, spec.problem);
    let root = root_of(&ctx, seed)?;
    let y = root.root;
    let pair = ctx.pair_r.clone().expect("pair");
    let pi = |z: f64| spec.cost.eval(z);
    let p = resolvent_jet(&pair, Source::new(&pi, spec.cost.kinks()), y, &opts.quad)?;
    let vf = ValueFunction {
        model: model.clone(),
        spec: spec.clone(),
        threshold: y,
        quad: opts.quad,
        lower_coeff: (p.d1 - spec.gamma) / pair.psi_log_derivative(y),
        lower: pair,
        upper: None,
    };
    let v0 = vf.eval(spec.x0)?;
    Ok(Solution {
        problem: spec.problem,
        model: model.name(),
        threshold: y,
        x0: spec.x0,
        value_at_x0: Some(v0),
        long_run_average: None,
        diagnostics: diagnostics(&root, seed, opts),
        value_fn: Some(Arc::new(vf)),
    })
}

pub fn solve_singular_ergodic(model: &DiffusionModel, spec: &ProblemSpec, opts: &SolverOptions) -> Result<Solution> {
    let audit = preflight(model, spec, ProblemKind::SingularErgodic)?;
    let ctx = Context::new(model, spec, opts)?;
    let seed = seed_for(&audit, spec.problem);
    let root = root_of(&ctx, seed)?;
    let b = root.root;
    let beta = spec.pi_mu(model, b);
    let alt = crate::greens::speed_average_below(model, spec, b, &opts.quad)?;
    let mut diag = diagnostics(&root, seed, opts);
    diag.cross_checks.push(CrossCheck::new("beta: pi_mu(b) vs speed-weighted mean", beta, alt));
    diag.h_lower_anchored = functional_h_lower_anchored(model, spec, b, &opts.quad);
    Ok(Solution {
        problem: spec.problem,
        model: model.name(),
        threshold: b,
        x0: spec.x0,
        value_at_x0: None,
        long_run_average: Some(beta),
        diagnostics: diag,
        value_fn: None,
    })
}

pub fn solve_constrained_discounted(model: &DiffusionModel, spec: &ProblemSpec, opts: &SolverOptions) -> Result<Solution> {
    let audit = preflight(model, spec, ProblemKind::ConstrainedDiscounted)?;
    let ctx = Context::new(model, spec, opts)?;
    let seed = seed_for(&audit, spec.problem);
    let root = root_of(&ctx, seed)?;
    let y = root.root;
    let pr = ctx.pair_r.clone().expect("pair");
    let pl = ctx.pair_hi.clone().expect("pair");
    let theta = |z: f64| spec.theta(model, z);
    let src = Source::new(&theta, spec.cost.kinks());
    let a = resolvent_jet(&pr, src, y, &opts.quad)?;
    let b = resolvent_jet(&pl, src, y, &opts.quad)?;
    let lphi = pl.phi_log_derivative(y);
    let r = spec.discount;
    let lam = spec.poisson_rate;
    let shift = lam / r * (b.value - b.d1 / lphi);
    let vf = ValueFunction {
        model: model.clone(),
        spec: spec.clone(),
        threshold: y,
        quad: opts.quad,
        lower_coeff: a.d1 / pr.psi_log_derivative(y),
        lower: pr,
        upper: Some(UpperBranch {
            coeff: b.d1 / lphi,
            shift,
            pair: pl,
        }),
    };
    let v0 = vf.eval(spec.x0)?;
    Ok(Solution {
        problem: spec.problem,
        model: model.name(),
        threshold: y,
        x0: spec.x0,
        value_at_x0: Some(v0),
        long_run_average: None,
        diagnostics: diagnostics(&root, seed, opts),
        value_fn: Some(Arc::new(vf)),
    })
}

pub fn solve_constrained_ergodic(model: &DiffusionModel, spec: &ProblemSpec, opts: &SolverOptions) -> Result<Solution> {
    let audit = preflight(model, spec, ProblemKind::ConstrainedErgodic)?;
    let ctx = Context::new(model, spec, opts)?;
    let seed = seed_for(&audit, spec.problem);
    let root = root_of(&ctx, seed)?;
    let b = root.root;
    let beta = crate::greens::speed_average_below(model, spec, b, &opts.quad)?;
    let pair = ctx.pair_hi.as_ref().expect("pair");
    let pm = |z: f64| spec.pi_mu(model, z);
    let iq = upper_kernel_integral(pair, Source::new(&pm, spec.cost.kinks()), b, &opts.quad)?;
    let alt = -spec.poisson_rate * iq / pair.phi_log_derivative(b);
    let mut diag = diagnostics(&root, seed, opts);
    diag.cross_checks
        .push(CrossCheck::new("beta: speed-weighted mean vs resolvent limit form", beta, alt));
    diag.h_lower_anchored = functional_h_lower_anchored(model, spec, b, &opts.quad);
    Ok(Solution {
        problem: spec.problem,
        model: model.name(),
        threshold: b,
        x0: spec.x0,
        value_at_x0: None,
        long_run_average: Some(beta),
        diagnostics: diag,
        value_fn: None,
    })
}

/// Dispatches on `spec.problem`.
pub fn solve(model: &DiffusionModel, spec: &ProblemSpec, opts: &SolverOptions) -> Result<Solution> {
    match spec.problem {
        ProblemKind::SingularDiscounted => solve_singular_discounted(model, spec, opts),
        ProblemKind::SingularErgodic => solve_singular_ergodic(model, spec, opts),
        ProblemKind::ConstrainedDiscounted => solve_constrained_discounted(model, spec, opts),
        ProblemKind::ConstrainedErgodic => solve_constrained_ergodic(model, spec, opts),
    }
}

/// Root of the singular smooth-fit condition
/// `(R_r π)'' ψ_r' - ψ_r'' ((R_r π)' - γ) = 0`, divided by `ψ_r'`.
/// Independent of the `K` formulation; both must give the same barrier.
pub fn smooth_fit_threshold(model: &DiffusionModel, spec: &ProblemSpec, opts: &SolverOptions) -> Result<f64> {
    let spec = spec.with_problem(ProblemKind::SingularDiscounted);
    let audit = preflight(model, &spec, ProblemKind::SingularDiscounted)?;
    let pair = opts.pair(model, spec.discount)?;
    let pi = |z: f64| spec.cost.eval(z);
    let cond = |x: f64| -> Result<f64> {
        let p = resolvent_jet(&pair, Source::new(&pi, spec.cost.kinks()), x, &opts.quad)?;
        let b = pair.psi_branch(x);
        Ok(p.d2 - b.log_d2 / b.log_d1 * (p.d1 - spec.gamma))
    };
    let width = 0.25 * model.length_scale();
    find_root(cond, audit.theta_minimizer, width, (model.lower(), model.upper()), &opts.root).map(|r| r.root)
}

/// Sign changes of the normalized condition on `n` points of the audit's
/// search interval.
pub fn uniqueness_probe(model: &DiffusionModel, spec: &ProblemSpec, opts: &SolverOptions, n: usize) -> Result<usize> {
    spec.validate(model)?;
    let ctx = Context::new(model, spec, opts)?;
    let (lo, hi) = search_interval(model, spec.x0);
    Ok(count_sign_changes(|x| ctx.condition(x), lo, hi, n))
}

/// Expected discounted cost of a barrier or Poisson-threshold policy with
/// an arbitrary threshold `b`, as a function of the starting point.
///
/// Singular barrier: `J = R_r π + a ψ_r(x)/ψ_r(b)` below `b` with
/// `a = (γ - (R_r π)'(b))/ℓψ_r(b)`, and `J(b) + γ(x - b)` above.
///
/// Poisson threshold: `P + a₁ψ_r(x)/ψ_r(b)` below and
/// `Q + A + a₂φ_{r+λ}(x)/φ_{r+λ}(b)` above, with `P = R_r π`,
/// `Q = R_{r+λ} π_γ`, `A = λ(J(b) - γb)/(r + λ)`, and `a₁, a₂` fixed by
/// `C¹` pasting at `b`.
#[derive(Debug, Clone)]
pub struct PolicyValue {
    model: DiffusionModel,
    spec: ProblemSpec,
    threshold: f64,
    quad: QuadratureConfig,
    pair_r: FundamentalPair,
    pair_hi: Option<FundamentalPair>,
    a1: f64,
    a2: f64,
    shift: f64,
    value_at_threshold: f64,
}

impl PolicyValue {
    pub fn new(model: &DiffusionModel, spec: &ProblemSpec, threshold: f64, opts: &SolverOptions) -> Result<Self> {
        spec.validate(model)?;
        if spec.problem.is_ergodic() {
            return Err(Error::Unsupported("policy values are for discounted problems".into()));
        }
        let pair_r = opts.pair(model, spec.discount)?;
        let pi = |z: f64| spec.cost.eval(z);
        let kinks = spec.cost.kinks();
        let p = resolvent_jet(&pair_r, Source::new(&pi, kinks), threshold, &opts.quad)?;
        let lpsi = pair_r.psi_log_derivative(threshold);
        if !spec.problem.is_constrained() {
            let a1 = (spec.gamma - p.d1) / lpsi;
            return Ok(Self {
                model: model.clone(),
                spec: spec.clone(),
                threshold,
                quad: opts.quad,
                pair_r,
                pair_hi: None,
                a1,
                a2: 0.0,
                shift: 0.0,
                value_at_threshold: p.value + a1,
            });
        }
        let (r, lam, g) = (spec.discount, spec.poisson_rate, spec.gamma);
        let pair_hi = opts.pair(model, r + lam)?;
        let pig = |z: f64| spec.pi_gamma(z);
        let q = resolvent_jet(&pair_hi, Source::new(&pig, kinks), threshold, &opts.quad)?;
        let lphi = pair_hi.phi_log_derivative(threshold);
        let c = r / (r + lam);
        let k = lam * g * threshold / (r + lam);
        // a2 = c(P + a1) - Q + k;  a1 ℓψ - a2 ℓφ = Q' - P'
        let a1 = (q.d1 - p.d1 + lphi * (c * p.value - q.value + k)) / (lpsi - c * lphi);
        let a2 = c * (p.value + a1) - q.value + k;
        let jb = p.value + a1;
        Ok(Self {
            model: model.clone(),
            spec: spec.clone(),
            threshold,
            quad: opts.quad,
            pair_r,
            pair_hi: Some(pair_hi),
            a1,
            a2,
            shift: lam * (jb - g * threshold) / (r + lam),
            value_at_threshold: jb,
        })
    }

    pub fn threshold(&self) -> f64 {
        self.threshold
    }

    pub fn eval(&self, x: f64) -> Result<f64> {
        let b = self.threshold;
        let kinks = self.spec.cost.kinks();
        if x <= b {
            if x == b {
                return Ok(self.value_at_threshold);
            }
            let pi = |z: f64| self.spec.cost.eval(z);
            let p = crate::greens::resolvent(&self.pair_r, Source::new(&pi, kinks), x, 0, &self.quad)?;
            return Ok(p + self.a1 * (self.pair_r.ln_psi(x) - self.pair_r.ln_psi(b)).exp());
        }
        match &self.pair_hi {
            None => Ok(self.value_at_threshold + self.spec.gamma * (x - b)),
            Some(ph) => {
                let pig = |z: f64| self.spec.pi_gamma(z);
                let q = crate::greens::resolvent(ph, Source::new(&pig, kinks), x, 0, &self.quad)?;
                Ok(q + self.shift + self.a2 * (ph.ln_phi(x) - ph.ln_phi(b)).exp())
            }
        }
    }

    pub fn model(&self) -> &DiffusionModel {
        &self.model
    }
}

/// Long-run average cost of a barrier (singular) or Poisson-threshold
/// (constrained) policy at an arbitrary threshold `b`.
///
/// Singular: `∫_l^b π_μ m' / m(l, b)`. Constrained:
/// `(S'N + Iφ)/(S'm - ℓφ_λ/λ)` with `N = ∫_l^b π_μ m'`, `m = m(l, b)` and
/// `Iφ = S'(b)∫_b^u φ_λ(y)/φ_λ(b) π_μ m'`.
pub fn ergodic_policy_cost(model: &DiffusionModel, spec: &ProblemSpec, b: f64, opts: &SolverOptions) -> Result<f64> {
    spec.validate(model)?;
    if !spec.problem.is_ergodic() {
        return Err(Error::Unsupported("ergodic policy cost needs an ergodic problem".into()));
    }
    let q = &opts.quad;
    let num = |z: f64| spec.pi_mu(model, z) * model.ln_speed_density(z).exp();
    let n = model.integrate_lower(&num, b, spec.cost.kinks(), q)?;
    let m = model.speed_measure(model.lower(), b, q)?;
    if !spec.problem.is_constrained() {
        return Ok(n / m);
    }
    let pair = opts.pair(model, spec.poisson_rate)?;
    let pm = |z: f64| spec.pi_mu(model, z);
    let iq = upper_kernel_integral(&pair, Source::new(&pm, spec.cost.kinks()), b, q)?;
    let sp = model.ln_scale_density(b).exp();
    Ok((sp * n + iq) / (sp * m - pair.phi_log_derivative(b) / spec.poisson_rate))
}
