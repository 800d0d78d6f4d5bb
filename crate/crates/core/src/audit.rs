//! Report-only checks of the standing assumptions on model and cost.

use serde::Serialize;

use crate::diffusion::DiffusionModel;
use crate::error::{Error, Result};
use crate::problem::ProblemSpec;
use crate::quadrature::QuadratureConfig;

const SCAN_POINTS: usize = 2001;

#[derive(Debug, Clone, Serialize)]
pub struct AuditReport {
    pub model: String,
    pub search_interval: (f64, f64),
    /// `θ_r` decreases then increases on the scan.
    pub theta_unimodal: bool,
    /// Minimizer `x*` of `θ_r`.
    pub theta_minimizer: f64,
    pub pi_mu_unimodal: bool,
    /// Minimizer of `π_μ`, the seed for ergodic problems.
    pub pi_mu_minimizer: f64,
    /// `π ≥ 0` and non-decreasing on the positive part of the scan.
    pub pi_monotone_nonneg: bool,
    /// `∫S'` diverges toward both boundaries.
    pub recurrent: bool,
    /// `m(l, x0) < ∞`.
    pub speed_finite_near_lower: bool,
    pub notes: Vec<String>,
}

impl AuditReport {
    /// Error unless the model is recurrent; required by ergodic solves and
    /// vanishing-discount sweeps.
    pub fn require_recurrent(&self) -> Result<()> {
        if self.recurrent {
            Ok(())
        } else {
            Err(Error::Precondition(format!(
                "{} is not recurrent; ergodic problems and discount sweeps need a recurrent diffusion",
                self.model
            )))
        }
    }
}

/// Interval scanned for unimodality and used to seed root brackets.
pub fn search_interval(model: &DiffusionModel, x0: f64) -> (f64, f64) {
    let (lo, hi) = model.working_interval(x0);
    let (lo, hi) = if matches!(model.kind(), crate::diffusion::ModelKind::Generic(_)) {
        (lo, hi)
    } else {
        let (a, b) = model.working_interval(0.0);
        (a.min(lo), b.max(hi))
    };
    let l = model.lower();
    let eps = 1e-9 * (1.0 + l.abs());
    (lo.max(l + eps), hi)
}

/// `(is unimodal, minimizer)` of `f` on a scan of `[lo, hi]`, with the
/// minimizer polished by golden-section search.
fn unimodal_scan(f: &dyn Fn(f64) -> f64, lo: f64, hi: f64) -> (bool, f64) {
    let n = SCAN_POINTS;
    let xs: Vec<f64> = (0..n).map(|i| lo + (hi - lo) * i as f64 / (n - 1) as f64).collect();
    let vs: Vec<f64> = xs.iter().map(|&x| f(x)).collect();
    let (imin, _) = vs
        .iter()
        .enumerate()
        .fold((0, f64::INFINITY), |acc, (i, &v)| if v < acc.1 { (i, v) } else { acc });
    let scale = vs.iter().fold(0.0f64, |m, v| m.max(v.abs())).max(1.0);
    let slack = 1e-12 * scale;
    let decreasing = vs[..=imin].windows(2).all(|w| w[1] <= w[0] + slack);
    let increasing = vs[imin..].windows(2).all(|w| w[1] >= w[0] - slack);
    // golden section inside the neighbouring cells
    let a0 = xs[imin.saturating_sub(1)];
    let b0 = xs[(imin + 1).min(n - 1)];
    let (mut a, mut b) = (a0, b0);
    let g = 0.5 * (5f64.sqrt() - 1.0);
    let mut c = b - g * (b - a);
    let mut d = a + g * (b - a);
    for _ in 0..100 {
        if f(c) < f(d) {
            b = d;
        } else {
            a = c;
        }
        c = b - g * (b - a);
        d = a + g * (b - a);
    }
    (decreasing && increasing, 0.5 * (a + b))
}

/// Divergence of `∫ S'` toward the lower and upper boundaries.
fn scale_divergence(model: &DiffusionModel, anchor: f64, cfg: &QuadratureConfig) -> (bool, bool) {
    let s = |z: f64| model.ln_scale_density(z).exp();
    let lower = model.integrate_lower(&s, anchor, &[], cfg).is_err();
    let upper = model.integrate_upper(&s, anchor, &[], cfg).is_err();
    (lower, upper)
}

pub fn audit_assumptions(model: &DiffusionModel, spec: &ProblemSpec) -> AuditReport {
    let cfg = QuadratureConfig::default();
    let (lo, hi) = search_interval(model, spec.x0);
    let mut notes = Vec::new();

    let theta = |x: f64| spec.theta(model, x);
    let pi_mu = |x: f64| spec.pi_mu(model, x);
    let (theta_unimodal, theta_minimizer) = unimodal_scan(&theta, lo, hi);
    let (pi_mu_unimodal, pi_mu_minimizer) = unimodal_scan(&pi_mu, lo, hi);
    if !theta_unimodal {
        notes.push(format!("theta_r is not unimodal on [{lo:.4}, {hi:.4}]"));
    }
    if !pi_mu_unimodal {
        notes.push(format!("pi_mu is not unimodal on [{lo:.4}, {hi:.4}]"));
    }

    let pos_lo = lo.max(0.0);
    let mut pi_ok = true;
    let mut prev = f64::NEG_INFINITY;
    for i in 0..SCAN_POINTS {
        let x = pos_lo + (hi - pos_lo) * i as f64 / (SCAN_POINTS - 1) as f64;
        let v = spec.cost.eval(x);
        if !(v >= 0.0) || v < prev - 1e-12 * v.abs().max(1.0) {
            pi_ok = false;
            break;
        }
        prev = v;
    }
    if !pi_ok {
        notes.push("running cost is negative or decreasing somewhere on the positive half-line".into());
    }

    let anchor = if model.contains(spec.x0) { spec.x0 } else { 0.5 * (lo + hi) };
    let (div_lo, div_hi) = scale_divergence(model, anchor, &cfg);
    let recurrent = div_lo && div_hi;
    if !recurrent {
        let side = match (div_lo, div_hi) {
            (false, false) => "both boundaries",
            (false, true) => "the lower boundary",
            _ => "the upper boundary",
        };
        notes.push(format!("scale integral converges toward {side}: the diffusion is transient"));
    }

    let speed_finite_near_lower = model.speed_measure(model.lower(), anchor, &cfg).is_ok();
    if !speed_finite_near_lower {
        notes.push("speed measure is infinite near the lower boundary".into());
    }

    if spec.problem.is_ergodic() {
        // growth condition π(x) ≥ C(x^α - 1): recorded, constants not enforced
        let far = hi.max(1.0);
        let grows = spec.cost.eval(far) > spec.cost.eval(0.5 * far) && spec.cost.eval(far) > 0.0;
        notes.push(format!(
            "growth condition pi(x) >= C(x^a - 1): {} on the scan (constants not enforced)",
            if grows { "cost grows" } else { "cost does not grow" }
        ));
    }

    AuditReport {
        model: model.name(),
        search_interval: (lo, hi),
        theta_unimodal,
        theta_minimizer,
        pi_mu_unimodal,
        pi_mu_minimizer,
        pi_monotone_nonneg: pi_ok,
        recurrent,
        speed_finite_near_lower,
        notes,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cost::RunningCost;
    use crate::problem::ProblemKind;

    #[test]
    fn bm_is_transient_with_unimodal_theta() {
        let m = DiffusionModel::drifted_bm(0.1).unwrap();
        let spec = ProblemSpec::new(RunningCost::quadratic(), 0.001, 0.001, 1.0, 0.0, ProblemKind::SingularDiscounted);
        let rep = audit_assumptions(&m, &spec);
        assert!(!rep.recurrent);
        assert!(rep.theta_unimodal);
        // θ = x² + γ(μ - rx) has its minimum at rγ/2
        assert!((rep.theta_minimizer - 5e-7).abs() < 1e-9, "{}", rep.theta_minimizer);
        assert!(rep.speed_finite_near_lower);
        assert!(rep.require_recurrent().is_err());
    }

    #[test]
    fn ou_is_recurrent() {
        let m = DiffusionModel::ornstein_uhlenbeck(1.0).unwrap();
        let spec = ProblemSpec::new(RunningCost::abs(), 0.1, 1.0, 20.0, 0.0, ProblemKind::ConstrainedErgodic);
        let rep = audit_assumptions(&m, &spec);
        assert!(rep.recurrent);
        assert!(rep.theta_unimodal && rep.pi_mu_unimodal);
        assert!(rep.theta_minimizer.abs() < 1e-9);
        assert!(rep.pi_monotone_nonneg);
        assert!(rep.notes.iter().any(|n| n.contains("growth condition")));
    }

    #[test]
    fn driftless_bm_is_recurrent() {
        let m = DiffusionModel::drifted_bm(0.0).unwrap();
        let spec = ProblemSpec::new(RunningCost::quadratic(), 0.1, 0.1, 1.0, 0.0, ProblemKind::SingularDiscounted);
        assert!(audit_assumptions(&m, &spec).recurrent);
    }

    #[test]
    fn non_monotone_cost_is_flagged() {
        let m = DiffusionModel::ornstein_uhlenbeck(1.0).unwrap();
        let spec = ProblemSpec::new(
            RunningCost::expression("(x-2)^2").unwrap(),
            0.1,
            1.0,
            1.0,
            0.0,
            ProblemKind::SingularDiscounted,
        );
        assert!(!audit_assumptions(&m, &spec).pi_monotone_nonneg);
    }
}
