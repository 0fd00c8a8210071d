//! `dgmm` command-line entry point.

mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use config::EstimatorChoice;

#[derive(Debug, Parser)]
#[command(name = "dgmm", version, about = "Debiased GMM for proxy-variable production functions")]
struct Cli {
    #[command(flatten)]
    global: GlobalArgs,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Clone, Args)]
pub struct GlobalArgs {
    /// TOML file with `[simulate]`, `[estimate]`, `[montecarlo]` and `[lasso_check]` tables.
    #[arg(long, global = true, value_name = "PATH")]
    pub config: Option<PathBuf>,
    /// Master seed; overrides the config file.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Worker threads (results do not depend on this).
    #[arg(long, global = true)]
    pub workers: Option<usize>,
    /// Ridge first stage, 200 replications and 50 bootstrap draws.
    #[arg(long, global = true)]
    pub fast: bool,
    /// Also write binned standardized estimates (montecarlo).
    #[arg(long, global = true)]
    pub histogram: bool,
    /// Output directory.
    #[arg(long, global = true, value_name = "DIR", default_value = ".")]
    pub out: PathBuf,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Simulate a capital-only panel and write it as CSV.
    Simulate {
        #[arg(long)]
        n: Option<usize>,
        #[arg(long)]
        design: Option<usize>,
    },
    /// Estimate the production function on a panel CSV.
    Estimate {
        /// Long-format panel (`firm_id,period,<variables>`).
        panel: Option<PathBuf>,
        #[arg(long, value_enum)]
        estimator: Option<EstimatorChoice>,
    },
    /// Replication study comparing the debiased and plug-in estimators.
    Montecarlo {
        #[arg(long)]
        design: Option<usize>,
        /// Sample size; repeat for several table rows.
        #[arg(long)]
        n: Vec<usize>,
        #[arg(long)]
        reps: Option<usize>,
    },
    /// Synthetic check of the penalized instrument solver.
    LassoCheck {
        #[arg(long)]
        n: Vec<usize>,
        #[arg(long)]
        reps: Option<usize>,
    },
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = commands::configure_workers(cli.global.workers).and_then(|()| match cli.command {
        Command::Simulate { n, design } => commands::simulate(&cli.global, n, design),
        Command::Estimate { panel, estimator } => commands::estimate(&cli.global, panel, estimator),
        Command::Montecarlo { design, n, reps } => commands::montecarlo(&cli.global, design, n, reps),
        Command::LassoCheck { n, reps } => commands::lasso_check(&cli.global, n, reps),
    });
    match result {
        Ok(paths) => {
            for p in paths {
                println!("{}", p.display());
            }
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(if e.is_usage() { 2 } else { 1 })
        }
    }
}
