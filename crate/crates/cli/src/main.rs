use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use gridclust_core::error::GridError;
use gridclust_core::grid_model::DEFAULT_RHO_TOLERANCE;
use gridclust_core::network_reduction::LoadMode;

mod commands;
mod output;

#[derive(Parser, Debug)]
#[command(
    name = "gridclust",
    version,
    about = "Critical-cluster stability analysis for droop-controlled inverter microgrids"
)]
pub struct Cli {
    #[command(flatten)]
    pub global: Global,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Args, Debug, Clone)]
pub struct Global {
    /// How loads enter the susceptance matrix: lines-only or shunt-absorbed.
    #[arg(long, global = true, default_value = "lines-only")]
    pub load_mode: LoadMode,
    /// Power-filter cut-off in rad/s; overrides the grid file.
    #[arg(long, global = true)]
    pub omega_c: Option<f64>,
    /// Print machine-readable JSON instead of text (errors included).
    #[arg(long, global = true)]
    pub json: bool,
    /// Worker threads for sweeps (default: all cores).
    #[arg(long, global = true)]
    pub jobs: Option<usize>,
    /// Relative tolerance for the common line R/X ratio.
    #[arg(long, global = true, default_value_t = DEFAULT_RHO_TOLERANCE)]
    pub rho_tolerance: f64,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Full assessment; exit code 0 = stable, 2 = unstable, 1 = error.
    Analyze(commands::AnalyzeArgs),
    /// Critical eigenvalue mu_cr for given (rho, k), or a map over a grid.
    Mucr(commands::MucrArgs),
    /// Ranked sensitivities of one cluster to line lengths and droops.
    Sensitivities(commands::SensitivitiesArgs),
    /// Spectrum versus one line length or droop gain.
    Sweep(commands::SweepArgs),
    /// Linear step response of the full model.
    Simulate(commands::SimulateArgs),
    /// Eigenvalues of the full state matrix, paired with the cluster modes.
    Oracle(commands::OracleArgs),
    /// Kron-reduced susceptance matrix over the inverter buses.
    Reduce(commands::ReduceArgs),
    /// Human-readable summary combining analyze, oracle and sensitivities.
    Report(commands::ReportArgs),
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match commands::run(&cli) {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            let kind = e.downcast_ref::<GridError>().map_or("error", GridError::kind);
            if cli.global.json {
                let msg = serde_json::json!({
                    "error": { "kind": kind, "message": format!("{e:#}") }
                });
                println!("{msg}");
            } else {
                eprintln!("error: {e:#}");
            }
            ExitCode::from(1)
        }
    }
}
