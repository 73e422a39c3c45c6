use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use rdsctl_cli::config::{key_help, Overrides};
use rdsctl_cli::{exit, run, Command};

/// Identification, second-moment synthesis and EnKF closed-loop simulation
/// of linear random dynamical systems.
#[derive(Parser)]
#[command(name = "rdsctl", version, after_help = key_help())]
struct Cli {
    #[command(subcommand)]
    command: Cmd,

    /// Config file; relative paths inside it are resolved against its directory.
    #[arg(long, global = true, env = "RDSCTL_CONFIG", value_name = "PATH")]
    config: Option<PathBuf>,

    /// Base seed of every random stream.
    #[arg(long, global = true, env = "RDSCTL_SEED", value_name = "N")]
    seed: Option<u64>,

    /// Monte Carlo paths.
    #[arg(long, global = true, env = "RDSCTL_PATHS", value_name = "N")]
    paths: Option<usize>,

    /// Output directory.
    #[arg(long, global = true, env = "RDSCTL_OUT", value_name = "DIR")]
    out: Option<PathBuf>,

    /// Upper end of the rate bisection when analyzing a fixed gain.
    #[arg(long, global = true, env = "RDSCTL_LAMBDA_MAX", value_name = "X")]
    lambda_max: Option<f64>,

    /// Skip the SVG plots.
    #[arg(long, global = true, env = "RDSCTL_NO_PLOTS")]
    no_plots: bool,
}

#[derive(Subcommand, Clone, Copy)]
enum Cmd {
    /// Estimate the parameter distribution: model.txt, gram.txt, trace.csv.
    Identify,
    /// Synthesize the rate-optimal gain: gain.txt, report.txt.
    Synthesize,
    /// Certify the rate of a fixed gain: analysis.txt.
    Analyze,
    /// Monte Carlo closed loop: rms.csv, paths/*.csv, summary.txt, plots/*.svg.
    Simulate,
    /// The networked experiment end to end with a pass/fail table.
    ReproducePaper,
    /// Redraw plots/*.svg from the CSV files in the output directory.
    Plot,
}

impl From<Cmd> for Command {
    fn from(c: Cmd) -> Self {
        match c {
            Cmd::Identify => Command::Identify,
            Cmd::Synthesize => Command::Synthesize,
            Cmd::Analyze => Command::Analyze,
            Cmd::Simulate => Command::Simulate,
            Cmd::ReproducePaper => Command::ReproducePaper,
            Cmd::Plot => Command::Plot,
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::new().filter_or("RDSCTL_LOG", "info")).init();
    let cli = Cli::parse();
    let overrides = Overrides {
        seed: cli.seed,
        paths: cli.paths,
        out: cli.out,
        lambda_max: cli.lambda_max,
        no_plots: cli.no_plots,
    };
    match run(cli.command.into(), cli.config.as_deref(), &overrides) {
        Ok(()) => ExitCode::from(exit::OK),
        Err(e) => {
            eprintln!("rdsctl: {e}");
            ExitCode::from(e.code)
        }
    }
}
