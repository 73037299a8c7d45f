use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use roughbridge_cli::{run, selftest, CliError, Command};

#[derive(Parser)]
#[command(name = "roughbridge", version, about = "Fractional diffusion bridges and small-noise asymptotics")]
struct Cli {
    #[command(subcommand)]
    command: Cmd,
    /// Experiment config (JSON)
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Output directory
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Root seed, overriding the config
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Worker threads
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[arg(long, short, global = true)]
    verbose: bool,
}

#[derive(Subcommand, Clone, Copy)]
enum Cmd {
    /// Sample fBm ensembles
    Sample,
    /// Lift paths to rough paths
    Lift,
    /// Solve driven equations
    Solve,
    /// Kernel-conditioned bridge consistency report
    Bridge,
    /// Endpoint rate function
    Rate,
    /// Small-noise density sweep
    Varadhan,
    /// Tail probabilities of the homogeneous norm
    ProbeTail,
    /// Built-in oracle checks
    Selftest,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = if cli.verbose { "debug" } else { "warn" };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();
    if let Some(n) = cli.threads {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n).build_global() {
            eprintln!("cannot configure thread pool: {e}");
            return ExitCode::from(2);
        }
    }
    let result = match cli.command {
        Cmd::Selftest => run_selftest(cli.seed.unwrap_or(0), cli.out),
        cmd => {
            let Some(config) = cli.config else {
                eprintln!("validation error: --config is required");
                return ExitCode::from(2);
            };
            let command = match cmd {
                Cmd::Sample => Command::Sample,
                Cmd::Lift => Command::Lift,
                Cmd::Solve => Command::Solve,
                Cmd::Bridge => Command::Bridge,
                Cmd::Rate => Command::Rate,
                Cmd::Varadhan => Command::Varadhan,
                Cmd::ProbeTail => Command::ProbeTail,
                Cmd::Selftest => unreachable!(),
            };
            run(command, &config, cli.out, cli.seed).map(|files| {
                for f in files {
                    println!("{}", f.display());
                }
                true
            })
        }
    };
    match result {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(e) => {
            eprintln!("{e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}

fn run_selftest(seed: u64, out: Option<PathBuf>) -> Result<bool, CliError> {
    let checks = selftest::run(seed)?;
    let table = selftest::table(&checks);
    print!("{table}");
    if let Some(dir) = out {
        std::fs::create_dir_all(&dir)?;
        std::fs::write(dir.join("selftest.txt"), &table)?;
    }
    Ok(checks.iter().all(|c| c.pass))
}
