use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Parser, Subcommand};
use fracneumann::sweep::{self, ExperimentKind, RunContext, SweepConfig};

/// Sweeps and solves for the kinetic-to-nonlocal Neumann diffusion limit.
///
/// Exit status: 0 when every declared assertion passes, 1 when one fails,
/// 2 on configuration or numerical errors.
#[derive(Debug, Parser)]
#[command(name = "fracneumann", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
    /// Configuration file (TOML, or JSON with a .json extension); built-in
    /// defaults for the chosen experiment when absent.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Overrides the configured seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Worker threads (default: all cores).
    #[arg(long, global = true)]
    threads: Option<usize>,
    /// Directory for the CSV and JSON reports.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Also write intermediate fields as CSV under --out.
    #[arg(long, global = true)]
    emit_fields: bool,
    /// Print the JSON report instead of the summary.
    #[arg(long, global = true)]
    json: bool,
}

#[derive(Debug, Clone, Copy, Subcommand)]
enum Command {
    /// ‖L_ε ψ - L ψ‖ and ‖D_ε ψ - D ψ‖ over the ε list.
    Operators,
    /// Fitted exponent of the boundary-layer corrector norm.
    Corrector,
    /// Weighted L² distance between φ^ε and ψ.
    Phieps,
    /// Monte Carlo ρ^ε against the macroscopic evolution.
    Limit,
    /// Discrete energy inequality along discrete-velocity trajectories.
    Energy,
    /// Pairwise agreement of the equivalent operator forms.
    Forms,
    /// Stationary problem (M + B) φ = M ρ_in.
    Stationary,
    /// Implicit Euler evolution of the macroscopic equation.
    Evolve,
}

impl Command {
    fn kind(self) -> ExperimentKind {
        match self {
            Command::Operators => ExperimentKind::OperatorConvergence,
            Command::Corrector => ExperimentKind::CorrectorScaling,
            Command::Phieps => ExperimentKind::PhiEpsL2,
            Command::Limit => ExperimentKind::KineticVsMacro,
            Command::Energy => ExperimentKind::EnergyAudit,
            Command::Forms => ExperimentKind::FormEquivalence,
            Command::Stationary => ExperimentKind::Stationary,
            Command::Evolve => ExperimentKind::Evolve,
        }
    }
}

fn execute(cli: &Cli) -> Result<bool> {
    if let Some(n) = cli.threads {
        sweep::init_threads(n)?;
    }
    let kind = cli.command.kind();
    let mut config = match &cli.config {
        Some(path) => SweepConfig::from_path_as(path, kind).with_context(|| format!("loading {}", path.display()))?,
        None => SweepConfig::preset(kind),
    };
    if let Some(seed) = cli.seed {
        config.seed = seed;
    }
    config.validate()?;
    let ctx = RunContext { out: cli.out.clone(), emit_fields: cli.emit_fields };
    let report = sweep::run(&config, &ctx).with_context(|| format!("running {}", kind.name()))?;
    if cli.json {
        println!("{}", serde_json::to_string_pretty(&report)?);
    } else {
        print!("{}", report.summary());
        if let Some(dir) = &cli.out {
            println!("reports written to {}", dir.display());
        }
    }
    Ok(report.passed)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match execute(&cli) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}
