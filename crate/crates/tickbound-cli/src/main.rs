//! tickbound: survival curves, tick statistics, parameter sweeps, invariant
//! suites, and Monte Carlo trajectories for ticking-clock models.

mod commands;
mod grid;
mod manifest;

use std::path::PathBuf;
use std::time::Instant;

use clap::{Args, Parser, Subcommand};
use tickbound::IntegrationConfig;

use commands::CmdError;

#[derive(Parser)]
#[command(name = "tickbound", version, about = "Ticking-clock simulation toolkit")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Evolve the no-tick state and write the survival time series.
    Simulate(SimulateArgs),
    /// Print tick statistics for a model file or closed-form oracle file.
    Stats(StatsArgs),
    /// Tabulate accuracy against resolution over a parameter grid.
    Sweep(SweepArgs),
    /// Run the randomized-ensemble invariant suite.
    Verify(VerifyArgs),
    /// Sample stochastic tick trajectories and cross-check the engine.
    Trajectories(TrajectoriesArgs),
}

/// Integration settings shared by every subcommand; unset flags keep the
/// command's base profile.
#[derive(Args)]
struct ConfigArgs {
    /// Absolute integration tolerance.
    #[arg(long)]
    abs_tol: Option<f64>,
    /// Relative integration tolerance.
    #[arg(long)]
    rel_tol: Option<f64>,
    /// Survival level at which the evolution counts as converged.
    #[arg(long)]
    survival_cutoff: Option<f64>,
    /// Hard cap on integration time.
    #[arg(long)]
    max_horizon: Option<f64>,
}

impl ConfigArgs {
    fn apply(&self, mut base: IntegrationConfig) -> Result<IntegrationConfig, CmdError> {
        if let Some(v) = self.abs_tol {
            base.abs_tol = v;
        }
        if let Some(v) = self.rel_tol {
            base.rel_tol = v;
        }
        if let Some(v) = self.survival_cutoff {
            base.survival_cutoff = v;
        }
        if let Some(v) = self.max_horizon {
            base.max_horizon = Some(v);
        }
        if !(base.abs_tol > 0.0 && base.rel_tol > 0.0) {
            return Err(CmdError::usage("tolerances must be positive"));
        }
        if !(base.survival_cutoff > 0.0 && base.survival_cutoff < 1.0) {
            return Err(CmdError::usage("--survival-cutoff must lie in (0, 1)"));
        }
        if let Some(h) = base.max_horizon {
            if !(h > 0.0 && h.is_finite()) {
                return Err(CmdError::usage("--max-horizon must be positive and finite"));
            }
        }
        Ok(base)
    }
}

#[derive(Args)]
struct SimulateArgs {
    /// Model document to evolve.
    #[arg(long)]
    model: PathBuf,
    /// Output path prefix; writes <prefix>_timeseries.csv and <prefix>_manifest.json.
    #[arg(long)]
    out: String,
    #[command(flatten)]
    config: ConfigArgs,
}

#[derive(Args)]
struct StatsArgs {
    /// Model document or oracle document to evaluate.
    #[arg(long)]
    model: PathBuf,
    #[command(flatten)]
    config: ConfigArgs,
}

#[derive(Args)]
struct SweepArgs {
    /// Model family to sweep: ladder, erlang, or heaviside.
    #[arg(value_name = "BUILDER")]
    builder: String,
    /// Output CSV path; the manifest lands next to it.
    #[arg(long)]
    out: String,
    /// Ladder dimension grid ("2..6" or "2,4,6").
    #[arg(long)]
    d: Option<String>,
    /// Erlang event-count grid.
    #[arg(long)]
    m: Option<String>,
    /// Heaviside onset-time grid.
    #[arg(long)]
    t0: Option<String>,
    /// Machine-ladder interaction strength grid.
    #[arg(long)]
    g: Option<String>,
    /// Cold-qubit splitting grid.
    #[arg(long)]
    omega_c: Option<String>,
    /// Hot-qubit splitting grid.
    #[arg(long)]
    omega_h: Option<String>,
    /// Ladder spacing grid.
    #[arg(long)]
    omega_l: Option<String>,
    /// Cold-bath coupling grid.
    #[arg(long)]
    gamma_c: Option<String>,
    /// Hot-bath coupling grid.
    #[arg(long)]
    gamma_h: Option<String>,
    /// Tick decay rate grid (also the oracle rate for erlang/heaviside).
    #[arg(long)]
    gamma_tick: Option<String>,
    /// Cold inverse-temperature grid.
    #[arg(long)]
    beta_c: Option<String>,
    /// Hot inverse-temperature grid.
    #[arg(long)]
    beta_h: Option<String>,
    #[command(flatten)]
    config: ConfigArgs,
}

#[derive(Args)]
struct VerifyArgs {
    /// Ensemble seed; model i uses seed + i.
    #[arg(long, default_value_t = 7)]
    seed: u64,
    /// Number of random models to check.
    #[arg(long, default_value_t = 200)]
    n_models: usize,
    /// Flip the sign of the tick anticommutator term to prove the suite
    /// catches the breakage.
    #[arg(long)]
    injected_bug: bool,
    #[command(flatten)]
    config: ConfigArgs,
}

#[derive(Args)]
struct TrajectoriesArgs {
    /// Model document to sample.
    #[arg(long)]
    model: PathBuf,
    /// Number of trajectories.
    #[arg(long)]
    n_traj: usize,
    /// Base RNG seed; trajectory i uses stream i.
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Ticks recorded per trajectory before it stops.
    #[arg(long, default_value_t = 1)]
    max_ticks: usize,
    /// Output path prefix; writes <prefix>_ticks.txt, <prefix>_estimates.json,
    /// and <prefix>_manifest.json.
    #[arg(long)]
    out: String,
    #[command(flatten)]
    config: ConfigArgs,
}

fn main() {
    std::process::exit(run());
}

fn run() -> i32 {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(err) => {
            // help and version are not failures; everything else is usage
            let code = i32::from(err.use_stderr());
            let _ = err.print();
            return code;
        }
    };
    let started = Instant::now();
    let result = match &cli.command {
        Command::Simulate(args) => commands::simulate(args, started),
        Command::Stats(args) => commands::stats(args, started),
        Command::Sweep(args) => commands::sweep(args, started),
        Command::Verify(args) => commands::verify(args, started),
        Command::Trajectories(args) => commands::trajectories(args, started),
    };
    match result {
        Ok(()) => 0,
        Err(err) => {
            if !err.message.is_empty() {
                eprintln!("error: {}", err.message);
            }
            err.code
        }
    }
}
