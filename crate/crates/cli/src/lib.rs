//! The `rdsctl` command-line front end: configuration, commands, exit
//! codes and SVG plots. The binary in `main.rs` only parses arguments.

pub mod commands;
pub mod config;
pub mod exit;
pub mod plot;

use config::{Overrides, RunConfig};
use exit::CliResult;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Command {
    Identify,
    Synthesize,
    Analyze,
    Simulate,
    ReproducePaper,
    Plot,
}

/// Loads the configuration, applies the flags and runs `command`.
pub fn run(command: Command, config: Option<&std::path::Path>, overrides: &Overrides) -> CliResult<()> {
    let mut cfg = RunConfig::load(config)?;
    cfg.apply(overrides)?;
    match command {
        Command::Identify => commands::cmd_identify(&cfg),
        Command::Synthesize => commands::cmd_synthesize(&cfg),
        Command::Analyze => commands::cmd_analyze(&cfg),
        Command::Simulate => commands::cmd_simulate(&cfg),
        Command::ReproducePaper => commands::cmd_reproduce(&cfg),
        Command::Plot => commands::cmd_plot(&cfg),
    }
}
