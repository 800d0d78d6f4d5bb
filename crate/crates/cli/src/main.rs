use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use diffctl::asymptotics::SweepAxis;

mod commands;
mod config;
mod output;

use commands::Verdict;
use config::{ExperimentConfig, Format, SimBlock};

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("config error: {0}")]
    Config(String),
    #[error("i/o error: {0}")]
    Io(String),
    #[error(transparent)]
    Core(#[from] diffctl::Error),
}

impl CliError {
    fn exit_code(&self) -> u8 {
        match self {
            CliError::Core(e) if !e.is_precondition() => 3,
            _ => 2,
        }
    }
}

#[derive(Parser)]
#[command(name = "diffctl", version, about = "Threshold policies for controlled one-dimensional diffusions")]
struct Cli {
    #[command(subcommand)]
    command: Command,

    /// Experiment configuration (JSON).
    #[arg(long, global = true, value_name = "PATH")]
    config: Option<PathBuf>,

    /// Output file; defaults to `$DIFFCTL_OUT_DIR/<command>.<ext>` or stdout.
    #[arg(long, global = true, value_name = "PATH")]
    out: Option<PathBuf>,

    #[arg(long, global = true, value_enum)]
    format: Option<Format>,

    /// Master seed for simulations.
    #[arg(long, global = true)]
    seed: Option<u64>,

    /// Relative quadrature tolerance.
    #[arg(long = "tol-quad", global = true, value_name = "X")]
    tol_quad: Option<f64>,

    /// Root-location tolerance.
    #[arg(long = "tol-root", global = true, value_name = "X")]
    tol_root: Option<f64>,

    /// Worker threads for sweeps and simulation.
    #[arg(long, global = true, value_name = "N")]
    threads: Option<usize>,
}

#[derive(Clone, Copy, ValueEnum)]
enum Axis {
    Lambda,
    Discount,
}

#[derive(Subcommand)]
enum Command {
    /// Optimal threshold and value of one problem.
    Solve,
    /// Thresholds along a grid of intensities or discount rates.
    Sweep {
        #[arg(long, value_enum)]
        axis: Option<Axis>,
    },
    /// Monte Carlo estimate of the policy cost against the analytic value.
    Simulate {
        /// Also write the event log of the first path as CSV.
        #[arg(long, value_name = "PATH")]
        event_log: Option<PathBuf>,
    },
    /// Identity residuals of the resolvent and the threshold functionals.
    Verify,
    /// Assumption checks for the configured model and cost.
    Audit,
}

impl Command {
    fn name(&self) -> &'static str {
        match self {
            Command::Solve => "solve",
            Command::Sweep { .. } => "sweep",
            Command::Simulate { .. } => "simulate",
            Command::Verify => "verify",
            Command::Audit => "audit",
        }
    }

    fn default_format(&self) -> Format {
        match self {
            Command::Sweep { .. } => Format::Csv,
            _ => Format::Json,
        }
    }
}

/// Folds command-line overrides into the config so that the echoed config
/// alone reproduces the run.
fn apply_overrides(cfg: &mut ExperimentConfig, cli: &Cli) {
    if let Some(t) = cli.tol_quad {
        cfg.quadrature.rel_tol = Some(t);
    }
    if let Some(t) = cli.tol_root {
        cfg.root_tol = Some(t);
    }
    if let Some(seed) = cli.seed {
        let sim = cfg
            .sim
            .get_or_insert_with(|| serde_json::from_str::<SimBlock>("{}").expect("defaults"));
        sim.seed = seed;
    }
}

fn run(cli: &Cli) -> Result<Verdict, CliError> {
    let path = cli
        .config
        .as_ref()
        .ok_or_else(|| CliError::Config("--config PATH is required".into()))?;
    let mut cfg = ExperimentConfig::load(path)?;
    apply_overrides(&mut cfg, cli);
    if let Some(n) = cli.threads {
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| CliError::Config(format!("--threads: {e}")))?;
    }
    let name = cli.command.name();
    let format = output::resolve_format(cli.format, &cfg, cli.command.default_format());
    let outcome = match &cli.command {
        Command::Solve => commands::solve_cmd(&cfg, format)?,
        Command::Sweep { axis } => {
            let axis = axis.map(|a| match a {
                Axis::Lambda => SweepAxis::Lambda,
                Axis::Discount => SweepAxis::Discount,
            });
            commands::sweep_cmd(&cfg, axis, format)?
        }
        Command::Simulate { event_log } => commands::simulate_cmd(&cfg, format, event_log.as_deref())?,
        Command::Verify => commands::verify_cmd(&cfg, format)?,
        Command::Audit => commands::audit_cmd(&cfg, format)?,
    };
    output::emit(output::destination(cli.out.clone(), &cfg, name, format), &outcome.text)?;
    Ok(outcome.verdict)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(&cli) {
        Ok(Verdict::Pass) => ExitCode::SUCCESS,
        Ok(Verdict::AuditFailed) => {
            eprintln!("{}: audit failed", cli.command.name());
            ExitCode::from(2)
        }
        Ok(Verdict::CheckFailed) => {
            eprintln!("{}: check failed", cli.command.name());
            ExitCode::from(3)
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
