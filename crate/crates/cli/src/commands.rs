use std::path::Path;

use diffctl::asymptotics::{functional_limit_report, sweep_discount, sweep_lambda, SweepAxis, SweepResult};
use diffctl::audit::{audit_assumptions, AuditReport};
use diffctl::diffusion::DiffusionModel;
use diffctl::fundamental::fundamental_pair;
use diffctl::greens::{auxiliary_identity_residuals, natural_boundary_residuals, representation_agreement, resolvent_equation_residual, Source};
use diffctl::problem::ProblemKind;
use diffctl::quadrature::QuadratureConfig;
use diffctl::simulate::{estimate_cost, event_log, events_to_csv, simulate_family, CostEstimate, Policy, SimConfig};
use diffctl::solvers::{ergodic_policy_cost, solve, PolicyValue, Solution};
use serde::Serialize;

use crate::config::{ExperimentConfig, Format, SimBlock};
use crate::output::{csv_as_table, to_json, Table};
use crate::CliError;

/// How a command that ran to completion judged its own result.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Verdict {
    Pass,
    /// Assumptions of the theory do not hold for the configured inputs.
    AuditFailed,
    /// A numerical check exceeded its tolerance.
    CheckFailed,
}

pub struct Outcome {
    pub text: String,
    pub verdict: Verdict,
}

impl Outcome {
    fn pass(text: String) -> Self {
        Self {
            text,
            verdict: Verdict::Pass,
        }
    }
}

fn sci(x: f64) -> String {
    format!("{x:.3e}")
}

// ---------------------------------------------------------------- solve

#[derive(Serialize)]
struct SolveBody<'a> {
    #[serde(flatten)]
    solution: &'a Solution,
    residual: f64,
}

pub fn solve_cmd(cfg: &ExperimentConfig, format: Format) -> Result<Outcome, CliError> {
    let model = cfg.model.build()?;
    let spec = cfg.spec(cfg.problem()?)?;
    let sol = solve(&model, &spec, &cfg.solver_options())?;
    let headline = sol.value_at_x0.or(sol.long_run_average).unwrap_or(f64::NAN);
    let text = match format {
        Format::Json => to_json(
            "solve",
            &SolveBody {
                solution: &sol,
                residual: sol.diagnostics.residual,
            },
            cfg,
        )?,
        Format::Csv => format!(
            "problem,threshold,x0,value,residual\n{},{},{},{},{}\n",
            sol.problem, sol.threshold, sol.x0, headline, sol.diagnostics.residual
        ),
        Format::Table => {
            let mut t = Table::default();
            t.row("problem", sol.problem).row("model", &sol.model).row("threshold", format!("{:.10}", sol.threshold));
            match (sol.value_at_x0, sol.long_run_average) {
                (Some(v), _) => t.row(format!("value at x0 = {}", sol.x0), format!("{v:.10}")),
                (None, Some(b)) => t.row("long-run average", format!("{b:.10}")),
                _ => &mut t,
            };
            t.row("residual", sci(sol.diagnostics.residual))
                .row("bracket", format!("[{:.6}, {:.6}]", sol.diagnostics.bracket.0, sol.diagnostics.bracket.1))
                .row("iterations", sol.diagnostics.iterations);
            for c in &sol.diagnostics.cross_checks {
                t.row(format!("check {}", c.name), format!("rel diff {}", sci(c.relative_difference)));
            }
            t.render()
        }
    };
    Ok(Outcome::pass(text))
}

// ---------------------------------------------------------------- sweep

/// Problem swept along `axis` when the config does not name one: the
/// discounted variant whenever a discount rate is given.
fn sweep_problem(cfg: &ExperimentConfig, axis: SweepAxis) -> ProblemKind {
    if let Some(p) = cfg.problem {
        return p;
    }
    match axis {
        SweepAxis::Lambda if cfg.r.is_some() => ProblemKind::ConstrainedDiscounted,
        SweepAxis::Lambda => ProblemKind::ConstrainedErgodic,
        SweepAxis::Discount if cfg.lambda.is_some() => ProblemKind::ConstrainedDiscounted,
        SweepAxis::Discount => ProblemKind::SingularDiscounted,
    }
}

pub fn sweep_cmd(cfg: &ExperimentConfig, axis: Option<SweepAxis>, format: Format) -> Result<Outcome, CliError> {
    let axis = axis
        .or(cfg.sweep.as_ref().map(|s| s.axis))
        .ok_or_else(|| CliError::Config("sweep needs `--axis` or a `sweep.axis` entry".into()))?;
    let grid = cfg
        .sweep
        .as_ref()
        .filter(|s| s.axis == axis)
        .and_then(|s| s.grid.clone())
        .unwrap_or_else(|| axis.default_grid());
    let problem = sweep_problem(cfg, axis);
    let model = cfg.model.build()?;
    let opts = cfg.solver_options();
    let res: SweepResult = match axis {
        SweepAxis::Lambda => {
            let mut c = cfg.clone();
            c.lambda = c.lambda.or(grid.first().copied());
            sweep_lambda(&model, &c.spec(problem)?, &grid, &opts)?
        }
        SweepAxis::Discount => {
            let mut c = cfg.clone();
            c.r = c.r.or(grid.first().copied());
            sweep_discount(&model, &c.spec(problem)?, &grid, &opts)?
        }
    };
    for w in &res.diagnostics.warnings {
        eprintln!("warning: {w}");
    }
    let text = match format {
        Format::Csv => res.to_csv(),
        Format::Json => to_json("sweep", &res, cfg)?,
        Format::Table => {
            let mut out = csv_as_table(&res.to_csv());
            let d = &res.diagnostics;
            let order = |o: Option<f64>| o.map_or("n/a".to_string(), |v| format!("{v:.3}"));
            out.push_str(&format!(
                "\n{} vs {}: threshold gaps decreasing {}, order {}; value gaps decreasing {}, order {}\n",
                res.problem,
                res.target_problem,
                d.threshold_gaps_decreasing,
                order(d.threshold_order),
                d.value_gaps_decreasing,
                order(d.value_order)
            ));
            out
        }
    };
    Ok(Outcome::pass(text))
}

// ---------------------------------------------------------------- simulate

#[derive(Serialize)]
struct SimulateBody {
    problem: ProblemKind,
    threshold: f64,
    analytic: f64,
    estimate: CostEstimate,
    z_score: f64,
    sigmas: f64,
    pass: bool,
    interventions_per_unit_time: f64,
}

pub fn simulate_cmd(cfg: &ExperimentConfig, format: Format, log_path: Option<&Path>) -> Result<Outcome, CliError> {
    let problem = cfg.problem()?;
    let model = cfg.model.build()?;
    let spec = cfg.spec(problem)?;
    let opts = cfg.solver_options();
    let block: SimBlock = cfg.sim.clone().unwrap_or_else(|| serde_json::from_str("{}").expect("defaults"));
    let threshold = match block.threshold {
        Some(t) => t,
        None => solve(&model, &spec, &opts)?.threshold,
    };
    let ergodic = problem.is_ergodic();
    let sim = SimConfig {
        dt: block.dt,
        horizon: block.horizon,
        n_paths: block.n_paths,
        seed: block.seed,
        policy: if problem.is_constrained() {
            Policy::PoissonImpulse {
                threshold,
                lambda: spec.poisson_rate,
            }
        } else {
            Policy::Reflect { barrier: threshold }
        },
        discount: if ergodic { 0.0 } else { spec.discount },
        x0: spec.x0,
        burn_in: block.burn_in,
        discretization: block.discretization,
    };
    sim.validate()?;

    let (stats, analytic) = if ergodic {
        let s = simulate_family(&model, &spec, &[threshold], &sim, None)?;
        (s, ergodic_policy_cost(&model, &spec, threshold, &opts)?)
    } else {
        // the analytic policy value doubles as the continuation value at the horizon
        let pv = PolicyValue::new(&model, &spec, threshold, &opts)?;
        let terminal = |_: usize, x: f64| pv.eval(x).unwrap_or(f64::NAN);
        let s = simulate_family(&model, &spec, &[threshold], &sim, Some(&terminal))?;
        (s, pv.eval(spec.x0)?)
    };
    let estimate = estimate_cost(&stats[0])?;
    let z = estimate.z_score(analytic);
    let pass = z <= block.sigmas;

    if let Some(p) = log_path {
        let events = event_log(&model, &spec, &sim, 0)?;
        crate::output::emit(Some(p.to_path_buf()), &events_to_csv(&events))?;
    }

    let body = SimulateBody {
        problem,
        threshold,
        analytic,
        z_score: z,
        sigmas: block.sigmas,
        pass,
        interventions_per_unit_time: stats[0].intervention_rate(sim.horizon),
        estimate,
    };
    let text = match format {
        Format::Json => to_json("simulate", &body, cfg)?,
        Format::Csv => format!(
            "problem,threshold,analytic,mean,std_error,z_score,pass\n{},{},{},{},{},{},{}\n",
            problem, threshold, analytic, body.estimate.mean, body.estimate.std_error, z, pass
        ),
        Format::Table => {
            let mut t = Table::default();
            t.row("problem", problem)
                .row("threshold", format!("{threshold:.10}"))
                .row("analytic", format!("{analytic:.8}"))
                .row(
                    "estimate",
                    format!("{:.8} ± {:.2e} ({} paths)", body.estimate.mean, body.estimate.std_error, body.estimate.n_paths),
                )
                .row("z-score", format!("{z:.3} (limit {})", block.sigmas))
                .row("result", if pass { "PASS" } else { "FAIL" });
            t.render()
        }
    };
    Ok(Outcome {
        text,
        verdict: if pass { Verdict::Pass } else { Verdict::CheckFailed },
    })
}

// ---------------------------------------------------------------- verify

#[derive(Debug, Clone, Serialize)]
pub struct CheckRow {
    pub name: String,
    pub value: f64,
    pub tolerance: f64,
    pub pass: bool,
}

impl CheckRow {
    fn new(name: &str, value: f64, tolerance: f64) -> Self {
        Self {
            name: name.to_string(),
            value,
            tolerance,
            pass: value <= tolerance,
        }
    }
}

#[derive(Serialize)]
struct VerifyBody {
    points: Vec<f64>,
    checks: Vec<CheckRow>,
    pass: bool,
}

fn default_points(model: &DiffusionModel, x0: f64) -> Vec<f64> {
    let h = model.length_scale();
    [-0.7, 0.4, 1.2].iter().map(|k| x0 + k * h).filter(|x| model.contains(*x)).collect()
}

pub fn verify_cmd(cfg: &ExperimentConfig, format: Format) -> Result<Outcome, CliError> {
    let model = cfg.model.build()?;
    let block = cfg.verify.clone().unwrap_or_else(|| serde_json::from_str("{}").expect("defaults"));
    let tol = block.tolerances;
    let points = block.points.clone().unwrap_or_else(|| default_points(&model, cfg.x0));
    if points.is_empty() {
        return Err(CliError::Config("verify needs at least one evaluation point".into()));
    }
    let spec = cfg.spec(ProblemKind::ConstrainedDiscounted)?;
    spec.validate(&model)?;
    let opts = cfg.solver_options();
    let precise = cfg.quadrature.apply(QuadratureConfig::precise());
    let nested = cfg.quadrature.apply(QuadratureConfig::default().with_rel_tol(block.nested_rel_tol));

    let pi = |z: f64| spec.cost.eval(z);
    let kinks = spec.cost.kinks();
    let mut resolvent = 0.0f64;
    for &x in &points {
        resolvent = resolvent.max(resolvent_equation_residual(&model, Source::new(&pi, kinks), 0.3, 0.7, x, &nested)?);
    }

    let l1 = auxiliary_identity_residuals(&model, &spec, &points, &precise)?;

    let theta = |z: f64| spec.theta(&model, z);
    let (mut reps, mut natural) = (0.0f64, 0.0f64);
    for rate in [spec.discount, spec.discount + spec.poisson_rate] {
        let pair = fundamental_pair(&model, rate)?;
        for &x in &points {
            let (k, l) = representation_agreement(&pair, Source::new(&theta, kinks), x, &precise)?;
            reps = reps.max(k).max(l);
            let (a, b) = natural_boundary_residuals(&pair, x, &precise)?;
            natural = natural.max(a).max(b);
        }
    }

    let mut checks = vec![
        CheckRow::new("resolvent-equation", resolvent, tol.resolvent_equation),
        CheckRow::new("generator-identity", l1.generator, tol.auxiliary_identities),
        CheckRow::new("resolvent-shift", l1.resolvent_shift, tol.auxiliary_identities),
        CheckRow::new("feller-link", l1.feller_link, tol.auxiliary_identities),
        CheckRow::new("integral-vs-derivative", reps, tol.representations),
        CheckRow::new("natural-boundary", natural, tol.natural_boundary),
    ];

    // limiting ratios: count of series whose gap fails to shrink
    let lam = functional_limit_report(&model, &spec, &[cfg.x0], SweepAxis::Lambda, &[10.0, 100.0, 1000.0], &opts)?;
    checks.push(CheckRow::new("ratio-limits-lambda", lam.non_monotone.len() as f64, 0.0));
    if audit_assumptions(&model, &spec).recurrent {
        let disc = functional_limit_report(&model, &spec, &[cfg.x0], SweepAxis::Discount, &[0.1, 0.01, 0.001], &opts)?;
        checks.push(CheckRow::new("ratio-limits-discount", disc.non_monotone.len() as f64, 0.0));
    }

    let pass = checks.iter().all(|c| c.pass);
    let body = VerifyBody { points, checks, pass };
    let text = match format {
        Format::Json => to_json("verify", &body, cfg)?,
        Format::Csv => {
            let mut s = String::from("check,value,tolerance,pass\n");
            for c in &body.checks {
                s.push_str(&format!("{},{},{},{}\n", c.name, c.value, c.tolerance, c.pass));
            }
            s
        }
        Format::Table => {
            let mut t = Table::default();
            for c in &body.checks {
                t.row(
                    &c.name,
                    format!("{:<10} (tol {}) {}", sci(c.value), sci(c.tolerance), if c.pass { "PASS" } else { "FAIL" }),
                );
            }
            t.render()
        }
    };
    Ok(Outcome {
        text,
        verdict: if pass { Verdict::Pass } else { Verdict::CheckFailed },
    })
}

// ---------------------------------------------------------------- audit

#[derive(Serialize)]
struct AuditBody<'a> {
    problem: Option<ProblemKind>,
    report: &'a AuditReport,
    pass: bool,
}

/// Which audit findings disqualify the configured problem. Without a
/// problem, everything but recurrence must hold.
fn audit_passes(rep: &AuditReport, problem: Option<ProblemKind>) -> bool {
    let shape = match problem {
        Some(p) if p.is_ergodic() => rep.pi_mu_unimodal && rep.recurrent,
        Some(_) => rep.theta_unimodal,
        None => rep.theta_unimodal && rep.pi_mu_unimodal,
    };
    shape && rep.pi_monotone_nonneg
}

pub fn audit_cmd(cfg: &ExperimentConfig, format: Format) -> Result<Outcome, CliError> {
    let model = cfg.model.build()?;
    let problem = cfg.problem;
    let kind = problem.unwrap_or(if cfg.r.is_some() {
        ProblemKind::SingularDiscounted
    } else {
        ProblemKind::SingularErgodic
    });
    let spec = cfg.spec(kind)?;
    let rep = audit_assumptions(&model, &spec);
    let pass = audit_passes(&rep, problem);
    let text = match format {
        Format::Json => to_json(
            "audit",
            &AuditBody {
                problem,
                report: &rep,
                pass,
            },
            cfg,
        )?,
        Format::Csv => format!(
            "model,theta_unimodal,theta_minimizer,pi_mu_unimodal,pi_mu_minimizer,pi_monotone_nonneg,recurrent,speed_finite_near_lower,pass\n\"{}\",{},{},{},{},{},{},{},{}\n",
            rep.model,
            rep.theta_unimodal,
            rep.theta_minimizer,
            rep.pi_mu_unimodal,
            rep.pi_mu_minimizer,
            rep.pi_monotone_nonneg,
            rep.recurrent,
            rep.speed_finite_near_lower,
            pass
        ),
        Format::Table => {
            let mut t = Table::default();
            t.row("model", &rep.model)
                .row("search interval", format!("[{:.4}, {:.4}]", rep.search_interval.0, rep.search_interval.1))
                .row("theta unimodal", format!("{} (min at {:.6})", rep.theta_unimodal, rep.theta_minimizer))
                .row("pi_mu unimodal", format!("{} (min at {:.6})", rep.pi_mu_unimodal, rep.pi_mu_minimizer))
                .row("pi nonneg, nondecreasing", rep.pi_monotone_nonneg)
                .row("recurrent", rep.recurrent)
                .row("finite speed near lower", rep.speed_finite_near_lower);
            for n in &rep.notes {
                t.row("note", n);
            }
            t.row("result", if pass { "PASS" } else { "FAIL" });
            t.render()
        }
    };
    Ok(Outcome {
        text,
        verdict: if pass { Verdict::Pass } else { Verdict::AuditFailed },
    })
}
