//! Parameter sweeps toward the frequent-intervention (`λ → ∞`) and
//! vanishing-discount (`r → 0`) limits, and the functional limits behind
//! them.

use std::fmt::Write as _;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::audit::audit_assumptions;
use crate::diffusion::DiffusionModel;
use crate::error::{Error, Result};
use crate::greens::{functional_h, k_normalized, l_normalized, resolvent, Representation, Side, Source};
use crate::problem::{ProblemKind, ProblemSpec};
use crate::solvers::{evaluate_value, solve, SolverOptions};

pub const CSV_HEADER: &str = "axis,param,threshold,target_threshold,threshold_gap,value,target_value,value_gap";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SweepAxis {
    Lambda,
    Discount,
}

impl SweepAxis {
    pub fn as_str(self) -> &'static str {
        match self {
            SweepAxis::Lambda => "lambda",
            SweepAxis::Discount => "discount",
        }
    }

    /// `λ = 2^k, k = 0..10` or `r = 10^-k, k = 0..4`.
    pub fn default_grid(self) -> Vec<f64> {
        match self {
            SweepAxis::Lambda => (0..=10).map(|k| 2f64.powi(k)).collect(),
            SweepAxis::Discount => (0..=4).map(|k| 10f64.powi(-k)).collect(),
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct SweepRow {
    pub param: f64,
    pub threshold: f64,
    pub target_threshold: f64,
    pub threshold_gap: f64,
    /// `V(x0)` or `β` for λ-sweeps, `r·V(x0)` for discount sweeps.
    pub value: f64,
    pub target_value: f64,
    pub value_gap: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct SweepDiagnostics {
    pub threshold_gaps: Vec<f64>,
    pub value_gaps: Vec<f64>,
    pub threshold_gaps_decreasing: bool,
    pub value_gaps_decreasing: bool,
    /// Least-squares slope of `log gap` against `log param`, sign-adjusted
    /// so that a positive number means convergence.
    pub threshold_order: Option<f64>,
    pub value_order: Option<f64>,
    pub warnings: Vec<String>,
}

#[derive(Debug, Clone, Serialize)]
pub struct SweepResult {
    pub axis: SweepAxis,
    /// Problem solved at each grid point.
    pub problem: ProblemKind,
    /// Problem providing the targets.
    pub target_problem: ProblemKind,
    pub rows: Vec<SweepRow>,
    pub diagnostics: SweepDiagnostics,
}

impl SweepResult {
    pub fn to_csv(&self) -> String {
        let mut out = String::from(CSV_HEADER);
        out.push('\n');
        for r in &self.rows {
            let _ = writeln!(
                out,
                "{},{},{},{},{},{},{},{}",
                self.axis.as_str(),
                r.param,
                r.threshold,
                r.target_threshold,
                r.threshold_gap,
                r.value,
                r.target_value,
                r.value_gap
            );
        }
        out
    }
}

fn strictly_decreasing(xs: &[f64]) -> bool {
    xs.windows(2).all(|w| w[1] < w[0])
}

fn order_estimate(params: &[f64], gaps: &[f64], axis: SweepAxis) -> Option<f64> {
    let pts: Vec<(f64, f64)> = params
        .iter()
        .zip(gaps)
        .filter(|(_, g)| **g > 0.0 && g.is_finite())
        .map(|(p, g)| (p.ln(), g.ln()))
        .collect();
    if pts.len() < 2 {
        return None;
    }
    let n = pts.len() as f64;
    let mx = pts.iter().map(|p| p.0).sum::<f64>() / n;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / n;
    let sxy: f64 = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    let sxx: f64 = pts.iter().map(|p| (p.0 - mx).powi(2)).sum();
    let slope = sxy / sxx;
    Some(match axis {
        SweepAxis::Lambda => -slope,
        SweepAxis::Discount => slope,
    })
}

fn diagnose(axis: SweepAxis, rows: &[SweepRow]) -> SweepDiagnostics {
    let params: Vec<f64> = rows.iter().map(|r| r.param).collect();
    let tg: Vec<f64> = rows.iter().map(|r| r.threshold_gap).collect();
    let vg: Vec<f64> = rows.iter().map(|r| r.value_gap).collect();
    let mut warnings = Vec::new();
    let td = strictly_decreasing(&tg);
    let vd = strictly_decreasing(&vg);
    if !td {
        warnings.push("threshold gaps are not strictly decreasing along the grid".into());
    }
    if !vd {
        warnings.push("value gaps are not strictly decreasing along the grid".into());
    }
    if let (Some(f), Some(l)) = (tg.first(), tg.last()) {
        if !(l < f) {
            warnings.push(format!("final threshold gap {l:.3e} is not below the first {f:.3e}"));
        }
    }
    SweepDiagnostics {
        threshold_order: order_estimate(&params, &tg, axis),
        value_order: order_estimate(&params, &vg, axis),
        threshold_gaps: tg,
        value_gaps: vg,
        threshold_gaps_decreasing: td,
        value_gaps_decreasing: vd,
        warnings,
    }
}

fn check_grid(grid: &[f64], increasing: bool) -> Result<()> {
    if grid.len() < 4 {
        return Err(Error::invalid(format!("sweep grids need at least 4 points, got {}", grid.len())));
    }
    if grid.iter().any(|g| !(g.is_finite() && *g > 0.0)) {
        return Err(Error::invalid("sweep grid values must be finite and positive"));
    }
    let ordered = grid.windows(2).all(|w| if increasing { w[1] > w[0] } else { w[1] < w[0] });
    if !ordered {
        let dir = if increasing { "increasing" } else { "decreasing" };
        return Err(Error::invalid(format!("sweep grid must be strictly {dir}")));
    }
    Ok(())
}

/// Headline number of a solution: `V(x0)` when discounted, `β` otherwise.
fn headline(sol: &crate::solvers::Solution) -> Result<f64> {
    match sol.long_run_average {
        Some(b) => Ok(b),
        None => evaluate_value(sol, sol.x0),
    }
}

/// Solves the constrained problem for each `λ` of an increasing grid and
/// compares with the singular problem. Ergodic if `spec.problem` is.
pub fn sweep_lambda(model: &DiffusionModel, spec: &ProblemSpec, grid: &[f64], opts: &SolverOptions) -> Result<SweepResult> {
    check_grid(grid, true)?;
    let problem = if spec.problem.is_ergodic() {
        ProblemKind::ConstrainedErgodic
    } else {
        ProblemKind::ConstrainedDiscounted
    };
    let target_problem = problem.singular_counterpart();
    let target = solve(model, &spec.with_problem(target_problem), opts)?;
    let tv = headline(&target)?;
    let rows = grid
        .par_iter()
        .map(|&lam| {
            let s = spec.with_problem(problem).with_poisson_rate(lam);
            let sol = solve(model, &s, opts).map_err(|e| e.at("lambda", lam))?;
            let v = headline(&sol).map_err(|e| e.at("lambda", lam))?;
            Ok(SweepRow {
                param: lam,
                threshold: sol.threshold,
                target_threshold: target.threshold,
                threshold_gap: (sol.threshold - target.threshold).abs(),
                value: v,
                target_value: tv,
                value_gap: (v - tv).abs(),
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(SweepResult {
        axis: SweepAxis::Lambda,
        problem,
        target_problem,
        diagnostics: diagnose(SweepAxis::Lambda, &rows),
        rows,
    })
}

/// Solves the discounted problem (singular or constrained, following
/// `spec.problem`) for each `r` of a decreasing grid and compares threshold
/// and `r·V(x0)` with the ergodic counterpart.
pub fn sweep_discount(model: &DiffusionModel, spec: &ProblemSpec, grid: &[f64], opts: &SolverOptions) -> Result<SweepResult> {
    check_grid(grid, false)?;
    audit_assumptions(model, spec).require_recurrent()?;
    let problem = if spec.problem.is_constrained() {
        ProblemKind::ConstrainedDiscounted
    } else {
        ProblemKind::SingularDiscounted
    };
    let target_problem = problem.ergodic_counterpart();
    let target = solve(model, &spec.with_problem(target_problem), opts)?;
    let beta = headline(&target)?;
    let rows = grid
        .par_iter()
        .map(|&r| {
            let s = spec.with_problem(problem).with_discount(r);
            let sol = solve(model, &s, opts).map_err(|e| e.at("discount", r))?;
            let v = r * headline(&sol).map_err(|e| e.at("discount", r))?;
            Ok(SweepRow {
                param: r,
                threshold: sol.threshold,
                target_threshold: target.threshold,
                threshold_gap: (sol.threshold - target.threshold).abs(),
                value: v,
                target_value: beta,
                value_gap: (v - beta).abs(),
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(SweepResult {
        axis: SweepAxis::Discount,
        problem,
        target_problem,
        diagnostics: diagnose(SweepAxis::Discount, &rows),
        rows,
    })
}

#[derive(Debug, Clone, Serialize)]
pub struct LimitRow {
    pub param: f64,
    pub x: f64,
    pub quantity: String,
    pub value: f64,
    pub target: f64,
    pub gap: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct LimitReport {
    pub axis: SweepAxis,
    pub rows: Vec<LimitRow>,
    /// `(quantity, x)` series whose gap does not shrink along the grid.
    pub non_monotone: Vec<(String, f64)>,
}

impl LimitReport {
    /// Gap sequence of one quantity at one point, in grid order.
    pub fn series(&self, quantity: &str, x: f64) -> Vec<f64> {
        self.rows
            .iter()
            .filter(|r| r.quantity == quantity && r.x == x)
            .map(|r| r.gap)
            .collect()
    }
}

/// Ratios `K/(sψ_s)` and `L/(sφ_s)` with source `θ_r`.
///
/// Along `λ` (with `s = r + λ`) both tend to zero; along `r` (with `s = r`)
/// they tend to `H_low(x)` and `H_up(x)`.
pub fn functional_limit_report(
    model: &DiffusionModel,
    spec: &ProblemSpec,
    xs: &[f64],
    axis: SweepAxis,
    grid: &[f64],
    opts: &SolverOptions,
) -> Result<LimitReport> {
    spec.validate(model)?;
    if axis == SweepAxis::Discount {
        audit_assumptions(model, spec).require_recurrent()?;
    }
    let q = &opts.quad;
    let targets: Vec<(f64, f64)> = match axis {
        SweepAxis::Lambda => vec![(0.0, 0.0); xs.len()],
        SweepAxis::Discount => xs
            .iter()
            .map(|&x| Ok((functional_h(model, spec, x, Side::Lower, q)?, functional_h(model, spec, x, Side::Upper, q)?)))
            .collect::<Result<_>>()?,
    };
    let per_param = grid
        .par_iter()
        .map(|&p| {
            let (s, spec_p) = match axis {
                SweepAxis::Lambda => (spec.discount + p, spec.clone()),
                SweepAxis::Discount => (p, spec.with_discount(p)),
            };
            let pair = opts.pair(model, s).map_err(|e| e.at(axis.as_str(), p))?;
            let theta = |z: f64| spec_p.theta(model, z);
            let src = Source::new(&theta, spec.cost.kinks());
            let mut rows = Vec::with_capacity(2 * xs.len());
            for (&x, &(h_lo, h_up)) in xs.iter().zip(&targets) {
                let sp = model.ln_scale_density(x).exp();
                let k = k_normalized(&pair, src, x, Representation::Centered, q).map_err(|e| e.at(axis.as_str(), p))?;
                let l = l_normalized(&pair, src, x, Representation::Centered, q).map_err(|e| e.at(axis.as_str(), p))?;
                for (name, v, t) in [("K", k / (s * sp), h_lo), ("L", l / (s * sp), h_up)] {
                    rows.push(LimitRow {
                        param: p,
                        x,
                        quantity: name.to_string(),
                        value: v,
                        target: t,
                        gap: (v - t).abs(),
                    });
                }
            }
            Ok(rows)
        })
        .collect::<Result<Vec<_>>>()?;
    let rows: Vec<LimitRow> = per_param.into_iter().flatten().collect();
    let mut report = LimitReport {
        axis,
        rows,
        non_monotone: Vec::new(),
    };
    for &x in xs {
        for name in ["K", "L"] {
            let g = report.series(name, x);
            if !g.windows(2).all(|w| w[1] <= w[0]) {
                report.non_monotone.push((name.to_string(), x));
            }
        }
    }
    Ok(report)
}

#[derive(Debug, Clone, Serialize)]
pub struct FellerRow {
    pub lambda: f64,
    /// `max_x |λ(R_{r+λ}θ_r)(x) - θ_r(x)|`.
    pub sup_residual: f64,
    pub argmax: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct FellerReport {
    pub rows: Vec<FellerRow>,
    pub decreasing: bool,
    /// Slope of `log residual` against `log λ`, negated.
    pub order: Option<f64>,
}

/// Sup-norm distance between `λR_{r+λ}θ_r` and `θ_r` on `xs`, per `λ`.
pub fn feller_approx_report(
    model: &DiffusionModel,
    spec: &ProblemSpec,
    lambdas: &[f64],
    xs: &[f64],
    opts: &SolverOptions,
) -> Result<FellerReport> {
    spec.validate(model)?;
    if xs.is_empty() {
        return Err(Error::invalid("feller report needs at least one x"));
    }
    let theta = |z: f64| spec.theta(model, z);
    let rows = lambdas
        .par_iter()
        .map(|&lam| {
            let pair = opts.pair(model, spec.discount + lam).map_err(|e| e.at("lambda", lam))?;
            let src = Source::new(&theta, spec.cost.kinks());
            let mut best = (0.0f64, xs[0]);
            for &x in xs {
                let r = resolvent(&pair, src, x, 0, &opts.quad).map_err(|e| e.at("lambda", lam))?;
                let d = (lam * r - theta(x)).abs();
                if d > best.0 {
                    best = (d, x);
                }
            }
            Ok(FellerRow {
                lambda: lam,
                sup_residual: best.0,
                argmax: best.1,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let res: Vec<f64> = rows.iter().map(|r| r.sup_residual).collect();
    Ok(FellerReport {
        decreasing: strictly_decreasing(&res),
        order: order_estimate(lambdas, &res, SweepAxis::Lambda),
        rows,
    })
}

/// Two routes to the singular ergodic threshold: `y*_s(r)` at a small
/// discount and `b*(λ)` at a large intensity.
#[derive(Debug, Clone, Serialize)]
pub struct CommutingSquare {
    pub discount: f64,
    pub lambda: f64,
    pub via_discount: f64,
    pub via_lambda: f64,
    pub corner: f64,
    pub gap: f64,
}

pub fn commuting_square(
    model: &DiffusionModel,
    spec: &ProblemSpec,
    small_r: f64,
    large_lambda: f64,
    opts: &SolverOptions,
) -> Result<CommutingSquare> {
    let a = solve(
        model,
        &spec.with_problem(ProblemKind::SingularDiscounted).with_discount(small_r),
        opts,
    )?;
    let b = solve(
        model,
        &spec
            .with_problem(ProblemKind::ConstrainedErgodic)
            .with_poisson_rate(large_lambda),
        opts,
    )?;
    let c = solve(model, &spec.with_problem(ProblemKind::SingularErgodic), opts)?;
    Ok(CommutingSquare {
        discount: small_r,
        lambda: large_lambda,
        via_discount: a.threshold,
        via_lambda: b.threshold,
        corner: c.threshold,
        gap: (a.threshold - b.threshold).abs(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cost::RunningCost;

    fn ou(problem: ProblemKind) -> (DiffusionModel, ProblemSpec) {
        (
            DiffusionModel::ornstein_uhlenbeck(1.0).unwrap(),
            ProblemSpec::new(RunningCost::abs(), 0.1, 1.0, 20.0, 0.5, problem),
        )
    }

    #[test]
    fn bm_lambda_gaps_are_closed_form() {
        let m = DiffusionModel::drifted_bm(0.1).unwrap();
        let spec = ProblemSpec::new(RunningCost::quadratic(), 0.001, 0.001, 1.0, 0.0, ProblemKind::ConstrainedDiscounted);
        let grid = [0.5, 1.0, 5.0, 20.0, 100.0];
        let res = sweep_lambda(&m, &spec, &grid, &SolverOptions::default()).unwrap();
        for row in &res.rows {
            let s = 0.001 + row.param;
            let gap = 1.0 / (0.1 - (2.0 * s + 0.01f64).sqrt());
            assert!((row.threshold_gap - gap.abs()).abs() < 1e-8, "{row:?}");
        }
        assert!(res.diagnostics.threshold_gaps_decreasing);
        let csv = res.to_csv();
        assert!(csv.starts_with(CSV_HEADER));
        assert_eq!(csv.lines().count(), 6);
    }

    #[test]
    fn grids_are_validated() {
        let (m, spec) = ou(ProblemKind::ConstrainedDiscounted);
        let o = SolverOptions::default();
        assert!(sweep_lambda(&m, &spec, &[1.0], &o).is_err());
        assert!(sweep_lambda(&m, &spec, &[1.0, 2.0, 2.0, 3.0], &o).is_err());
        assert!(sweep_discount(&m, &spec, &[0.1, 1.0, 2.0, 3.0], &o).is_err());
    }

    #[test]
    fn transient_model_rejected_in_discount_sweep() {
        let m = DiffusionModel::drifted_bm(0.1).unwrap();
        let spec = ProblemSpec::new(RunningCost::quadratic(), 0.001, 0.001, 1.0, 0.0, ProblemKind::SingularDiscounted);
        let e = sweep_discount(&m, &spec, &[1.0, 0.1, 0.01, 0.001], &SolverOptions::default()).unwrap_err();
        assert!(e.is_precondition());
    }

    #[test]
    fn feller_residual_is_exact_for_affine_yield() {
        // driftless BM annihilates affine functions, so λR_{r+λ}θ = λθ/(r+λ)
        // and the residual is r|θ|/(r+λ)
        let m = DiffusionModel::drifted_bm(0.0).unwrap();
        let spec = ProblemSpec::new(
            RunningCost::expression("2").unwrap(),
            0.2,
            0.5,
            1.0,
            0.0,
            ProblemKind::SingularDiscounted,
        );
        let xs = [-1.0, 0.0, 1.0];
        let rep = feller_approx_report(&m, &spec, &[10.0, 100.0, 1000.0], &xs, &SolverOptions::default()).unwrap();
        for row in &rep.rows {
            let sup = xs.iter().map(|&x| spec.theta(&m, x).abs()).fold(0.0, f64::max);
            let exact = 0.5 * sup / (0.5 + row.lambda);
            assert!((row.sup_residual - exact).abs() < 1e-9 * (1.0 + exact), "{row:?} vs {exact}");
        }
        assert!(rep.decreasing);
        assert!((rep.order.unwrap() - 1.0).abs() < 0.05);
    }

    #[test]
    fn lambda_limits_of_functionals_decay() {
        let (m, spec) = ou(ProblemKind::ConstrainedDiscounted);
        let rep = functional_limit_report(&m, &spec, &[0.5], SweepAxis::Lambda, &[10.0, 100.0, 1000.0], &SolverOptions::default())
            .unwrap();
        let l = rep.series("L", 0.5);
        assert!(l.windows(2).all(|w| w[1] < w[0]), "{l:?}");
    }
}
