//! Library side of the `roughbridge` command-line driver.

pub mod commands;
pub mod config;
pub mod selftest;

use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("validation error: {0}")]
    Validation(String),
    #[error(transparent)]
    Core(#[from] roughbridge::Error),
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
}

impl CliError {
    /// 2 validation, 3 numerical failure, 4 I/O.
    pub fn exit_code(&self) -> i32 {
        use roughbridge::Error as E;
        match self {
            CliError::Validation(_) => 2,
            CliError::Io(_) => 4,
            CliError::Core(e) => match e {
                E::InvalidArgument(_) | E::Shape(_) | E::Index(_) => 2,
                E::Io(_) | E::Format(_) => 4,
                _ => 3,
            },
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Command {
    Sample,
    Lift,
    Solve,
    Bridge,
    Rate,
    Varadhan,
    ProbeTail,
}

/// Load the config, apply the seed override and run one subcommand.
pub fn run(
    command: Command,
    config: &std::path::Path,
    out: Option<PathBuf>,
    seed: Option<u64>,
) -> Result<Vec<PathBuf>, CliError> {
    let mut cfg = config::ExperimentConfig::load(config)?;
    if let Some(s) = seed {
        cfg.seed = s;
    }
    let out = out
        .or_else(|| cfg.output_dir.clone().map(PathBuf::from))
        .unwrap_or_else(|| PathBuf::from("out"));
    let run = commands::Run::new(cfg, out)?;
    match command {
        Command::Sample => commands::cmd_sample(&run),
        Command::Lift => commands::cmd_lift(&run),
        Command::Solve => commands::cmd_solve(&run),
        Command::Bridge => commands::cmd_bridge(&run),
        Command::Rate => commands::cmd_rate(&run),
        Command::Varadhan => commands::cmd_varadhan(&run),
        Command::ProbeTail => commands::cmd_probe_tail(&run),
    }
}
