use std::fmt;

use serde::{Deserialize, Serialize};

use crate::cost::RunningCost;
use crate::diffusion::DiffusionModel;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ProblemKind {
    SingularDiscounted,
    SingularErgodic,
    ConstrainedDiscounted,
    ConstrainedErgodic,
}

impl ProblemKind {
    pub const ALL: [ProblemKind; 4] = [
        ProblemKind::SingularDiscounted,
        ProblemKind::SingularErgodic,
        ProblemKind::ConstrainedDiscounted,
        ProblemKind::ConstrainedErgodic,
    ];

    pub fn is_ergodic(self) -> bool {
        matches!(self, ProblemKind::SingularErgodic | ProblemKind::ConstrainedErgodic)
    }

    pub fn is_constrained(self) -> bool {
        matches!(self, ProblemKind::ConstrainedDiscounted | ProblemKind::ConstrainedErgodic)
    }

    /// The problem obtained by removing the Poisson constraint.
    pub fn singular_counterpart(self) -> ProblemKind {
        match self {
            ProblemKind::ConstrainedDiscounted => ProblemKind::SingularDiscounted,
            ProblemKind::ConstrainedErgodic => ProblemKind::SingularErgodic,
            other => other,
        }
    }

    /// The long-run-average problem matching a discounted one.
    pub fn ergodic_counterpart(self) -> ProblemKind {
        match self {
            ProblemKind::SingularDiscounted => ProblemKind::SingularErgodic,
            ProblemKind::ConstrainedDiscounted => ProblemKind::ConstrainedErgodic,
            other => other,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            ProblemKind::SingularDiscounted => "singular-discounted",
            ProblemKind::SingularErgodic => "singular-ergodic",
            ProblemKind::ConstrainedDiscounted => "constrained-discounted",
            ProblemKind::ConstrainedErgodic => "constrained-ergodic",
        }
    }
}

impl fmt::Display for ProblemKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Cost data and rates of one control problem.
#[derive(Debug, Clone, PartialEq)]
pub struct ProblemSpec {
    pub cost: RunningCost,
    /// Proportional control cost `γ`.
    pub gamma: f64,
    /// Discount rate `r`; unused by ergodic problems.
    pub discount: f64,
    /// Poisson intensity `λ`; unused by singular problems.
    pub poisson_rate: f64,
    /// Evaluation point for values.
    pub x0: f64,
    pub problem: ProblemKind,
}

impl ProblemSpec {
    pub fn new(cost: RunningCost, gamma: f64, discount: f64, poisson_rate: f64, x0: f64, problem: ProblemKind) -> Self {
        Self {
            cost,
            gamma,
            discount,
            poisson_rate,
            x0,
            problem,
        }
    }

    pub fn with_problem(&self, problem: ProblemKind) -> Self {
        Self { problem, ..self.clone() }
    }

    pub fn with_discount(&self, r: f64) -> Self {
        Self {
            discount: r,
            ..self.clone()
        }
    }

    pub fn with_poisson_rate(&self, lambda: f64) -> Self {
        Self {
            poisson_rate: lambda,
            ..self.clone()
        }
    }

    pub fn validate(&self, model: &DiffusionModel) -> Result<()> {
        if !(self.gamma > 0.0 && self.gamma.is_finite()) {
            return Err(Error::invalid(format!("gamma must be positive, got {}", self.gamma)));
        }
        if !self.problem.is_ergodic() && !(self.discount > 0.0 && self.discount.is_finite()) {
            return Err(Error::invalid(format!("discount rate must be positive, got {}", self.discount)));
        }
        if self.problem.is_constrained() && !(self.poisson_rate > 0.0 && self.poisson_rate.is_finite()) {
            return Err(Error::invalid(format!(
                "Poisson rate must be positive, got {}",
                self.poisson_rate
            )));
        }
        if !model.contains(self.x0) {
            return Err(Error::Domain(format!("x0 = {} is outside the state interval", self.x0)));
        }
        Ok(())
    }

    /// `θ_r(x) = π(x) + γ(μ(x) - r x)`
    pub fn theta(&self, model: &DiffusionModel, x: f64) -> f64 {
        self.cost.eval(x) + self.gamma * (model.drift(x) - self.discount * x)
    }

    /// `π_μ(x) = π(x) + γ μ(x)`
    pub fn pi_mu(&self, model: &DiffusionModel, x: f64) -> f64 {
        self.cost.eval(x) + self.gamma * model.drift(x)
    }

    /// `π_γ(x) = λγx + π(x)`
    pub fn pi_gamma(&self, x: f64) -> f64 {
        self.poisson_rate * self.gamma * x + self.cost.eval(x)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn yield_functions_match_closed_forms() {
        let bm = DiffusionModel::drifted_bm(0.1).unwrap();
        let spec = ProblemSpec::new(RunningCost::quadratic(), 0.001, 0.001, 1.0, 0.0, ProblemKind::SingularDiscounted);
        for x in [-2.0, 0.0, 3.0] {
            let want = x * x + 0.001 * (0.1 - 0.001 * x);
            assert!((spec.theta(&bm, x) - want).abs() < 1e-15);
        }
        let ou = DiffusionModel::ornstein_uhlenbeck(1.0).unwrap();
        let spec = ProblemSpec::new(RunningCost::abs(), 0.1, 1.0, 20.0, 0.0, ProblemKind::ConstrainedDiscounted);
        for x in [-1.5, 0.2, 2.0] {
            assert!((spec.theta(&ou, x) - (x.abs() - 0.2 * x)).abs() < 1e-15);
            assert!((spec.pi_mu(&ou, x) - (x.abs() - 0.1 * x)).abs() < 1e-15);
            assert!((spec.pi_gamma(x) - (2.0 * x + x.abs())).abs() < 1e-15);
        }
    }

    #[test]
    fn theta_tends_to_pi_mu_as_discount_vanishes() {
        let ou = DiffusionModel::ornstein_uhlenbeck(1.0).unwrap();
        let spec = ProblemSpec::new(RunningCost::abs(), 0.1, 1e-8, 1.0, 0.0, ProblemKind::SingularDiscounted);
        for i in 0..=20 {
            let x = -5.0 + 0.5 * i as f64;
            assert!((spec.theta(&ou, x) - spec.pi_mu(&ou, x)).abs() < 1e-8);
        }
    }

    #[test]
    fn validation() {
        let bm = DiffusionModel::drifted_bm(0.1).unwrap();
        let ok = ProblemSpec::new(RunningCost::quadratic(), 0.001, 0.001, 1.0, 0.0, ProblemKind::ConstrainedDiscounted);
        assert!(ok.validate(&bm).is_ok());
        assert!(ok.with_poisson_rate(0.0).validate(&bm).is_err());
        assert!(ok.with_discount(-1.0).validate(&bm).is_err());
        assert!(ok
            .with_problem(ProblemKind::SingularErgodic)
            .with_discount(0.0)
            .validate(&bm)
            .is_ok());
    }
}
