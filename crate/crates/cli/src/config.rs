//! Experiment configuration files.
//!
//! One JSON document describes one experiment. Unknown keys anywhere in the
//! document are rejected, and every error names the offending key path
//! together with the line and column.

use std::path::Path;

use diffctl::asymptotics::SweepAxis;
use diffctl::cost::{CostSpec, RunningCost};
use diffctl::diffusion::{DiffusionModel, LowerBoundary};
use diffctl::problem::{ProblemKind, ProblemSpec};
use diffctl::quadrature::QuadratureConfig;
use diffctl::simulate::Discretization;
use diffctl::solvers::SolverOptions;
use serde::{Deserialize, Serialize};

use crate::CliError;

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum ModelConfig {
    DriftedBm {
        mu: f64,
    },
    OrnsteinUhlenbeck {
        kappa: f64,
    },
    Generic {
        drift: String,
        volatility: String,
        #[serde(default = "neg_infinity")]
        lower: LowerBoundary,
        /// Finite interval on which the coefficients are tabulated.
        working: (f64, f64),
    },
}

fn neg_infinity() -> LowerBoundary {
    LowerBoundary::NegInfinity
}

impl ModelConfig {
    pub fn build(&self) -> diffctl::Result<DiffusionModel> {
        match self {
            ModelConfig::DriftedBm { mu } => DiffusionModel::drifted_bm(*mu),
            ModelConfig::OrnsteinUhlenbeck { kappa } => DiffusionModel::ornstein_uhlenbeck(*kappa),
            ModelConfig::Generic {
                drift,
                volatility,
                lower,
                working,
            } => DiffusionModel::generic(drift, volatility, *lower, *working),
        }
    }
}

/// Sparse overrides on top of the solver's default quadrature settings.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct QuadratureOverrides {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub abs_tol: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub rel_tol: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub max_subdivisions: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub panel_width: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub max_panels: Option<usize>,
}

impl QuadratureOverrides {
    pub fn apply(&self, base: QuadratureConfig) -> QuadratureConfig {
        QuadratureConfig {
            abs_tol: self.abs_tol.unwrap_or(base.abs_tol),
            rel_tol: self.rel_tol.unwrap_or(base.rel_tol),
            max_subdivisions: self.max_subdivisions.unwrap_or(base.max_subdivisions),
            panel_width: self.panel_width.unwrap_or(base.panel_width),
            max_panels: self.max_panels.unwrap_or(base.max_panels),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepBlock {
    pub axis: SweepAxis,
    /// Defaults to the axis' standard grid.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub grid: Option<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimBlock {
    #[serde(default = "default_dt")]
    pub dt: f64,
    #[serde(default = "default_horizon")]
    pub horizon: f64,
    #[serde(default = "default_paths")]
    pub n_paths: usize,
    #[serde(default = "default_seed")]
    pub seed: u64,
    #[serde(default)]
    pub discretization: Discretization,
    #[serde(default = "default_burn_in")]
    pub burn_in: f64,
    /// Policy level to simulate; the solver's threshold when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub threshold: Option<f64>,
    /// Acceptance band in standard errors.
    #[serde(default = "default_sigmas")]
    pub sigmas: f64,
}

fn default_dt() -> f64 {
    1e-2
}
fn default_horizon() -> f64 {
    2000.0
}
fn default_paths() -> usize {
    10_000
}
fn default_seed() -> u64 {
    0x5eed
}
fn default_burn_in() -> f64 {
    0.1
}
fn default_sigmas() -> f64 {
    3.0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct VerifyBlock {
    /// Evaluation points; a few points around `x0` when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub points: Option<Vec<f64>>,
    #[serde(default)]
    pub tolerances: VerifyTolerances,
    /// Relative tolerance of the doubly nested resolvent integral.
    #[serde(default = "default_nested_rel_tol")]
    pub nested_rel_tol: f64,
}

fn default_nested_rel_tol() -> f64 {
    1e-10
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct VerifyTolerances {
    pub resolvent_equation: f64,
    pub auxiliary_identities: f64,
    pub representations: f64,
    pub natural_boundary: f64,
}

impl Default for VerifyTolerances {
    fn default() -> Self {
        Self {
            resolvent_equation: 1e-7,
            auxiliary_identities: 1e-5,
            representations: 1e-6,
            natural_boundary: 1e-7,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum Format {
    Csv,
    Json,
    Table,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputBlock {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub format: Option<Format>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub path: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub schema_version: u32,
    pub model: ModelConfig,
    pub cost: CostSpec,
    pub gamma: f64,
    /// Discount rate; required by discounted problems.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub r: Option<f64>,
    /// Poisson intensity; required by constrained problems.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub lambda: Option<f64>,
    #[serde(default)]
    pub x0: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub problem: Option<ProblemKind>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sweep: Option<SweepBlock>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sim: Option<SimBlock>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub verify: Option<VerifyBlock>,
    #[serde(default, skip_serializing_if = "is_default")]
    pub quadrature: QuadratureOverrides,
    /// Root-location tolerance.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub root_tol: Option<f64>,
    #[serde(default, skip_serializing_if = "is_default")]
    pub output: OutputBlock,
}

fn is_default<T: Default + PartialEq>(v: &T) -> bool {
    *v == T::default()
}

impl ExperimentConfig {
    pub fn from_str(text: &str) -> Result<Self, CliError> {
        let de = &mut serde_json::Deserializer::from_str(text);
        let cfg: Self = serde_path_to_error::deserialize(de).map_err(|e| {
            let path = e.path().to_string();
            CliError::Config(format!("at key `{path}`: {}", e.into_inner()))
        })?;
        if cfg.schema_version != SCHEMA_VERSION {
            return Err(CliError::Config(format!(
                "schema_version {} is not supported (expected {SCHEMA_VERSION})",
                cfg.schema_version
            )));
        }
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::Io(format!("{}: {e}", path.display())))?;
        Self::from_str(&text).map_err(|e| match e {
            CliError::Config(m) => CliError::Config(format!("{}: {m}", path.display())),
            other => other,
        })
    }

    pub fn problem(&self) -> Result<ProblemKind, CliError> {
        self.problem
            .ok_or_else(|| CliError::Config("this command needs a `problem` entry".into()))
    }

    /// Problem data for `problem`. Rates the problem does not use may be
    /// absent and are then filled with placeholders that nothing reads.
    pub fn spec(&self, problem: ProblemKind) -> Result<ProblemSpec, CliError> {
        let r = match (self.r, problem.is_ergodic()) {
            (Some(r), _) => r,
            (None, true) => 1.0,
            (None, false) => return Err(CliError::Config(format!("`r` is required for {problem}"))),
        };
        let lambda = match (self.lambda, problem.is_constrained()) {
            (Some(l), _) => l,
            (None, false) => 1.0,
            (None, true) => return Err(CliError::Config(format!("`lambda` is required for {problem}"))),
        };
        let cost = RunningCost::new(self.cost.clone())?;
        Ok(ProblemSpec::new(cost, self.gamma, r, lambda, self.x0, problem))
    }

    pub fn solver_options(&self) -> SolverOptions {
        let mut opts = SolverOptions::default();
        opts.quad = self.quadrature.apply(opts.quad);
        if let Some(t) = self.root_tol {
            opts.root.x_tol = t;
        }
        opts
    }
}
