use std::fs;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use kirigami::experiments::{self, RunError};
use kirigami::{ConfigError, RunConfig};

/// Slit-opening solver for rhombi-slit kirigami.
///
/// Settings come from an optional `key = value` file followed by
/// `--key value` overrides, e.g.
/// `kirigami run --case mixed --nx 32 --dirichlet-ramp 0.3,0.5`.
#[derive(Parser)]
#[command(version, about)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(clap::Args)]
struct Common {
    /// Configuration file with one `key = value` per line.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Overrides such as `--case auxetic --epsilon 0.1`.
    #[arg(trailing_var_arg = true, allow_hyphen_values = true)]
    overrides: Vec<String>,
}

#[derive(Subcommand)]
enum Command {
    /// Solve once and write VTK, CSV and a text report.
    Run(Common),
    /// Mesh-refinement study over `levels` uniform refinements.
    Study(Common),
    /// Solve for every value in `epsilons`.
    Sweep(Common),
}

fn load(common: &Common) -> Result<RunConfig, RunError> {
    let text = match &common.config {
        Some(path) => Some(fs::read_to_string(path).map_err(|source| RunError::Io {
            path: path.clone(),
            source,
        })?),
        None => None,
    };
    let name = common
        .config
        .as_ref()
        .map(|p| p.display().to_string())
        .unwrap_or_default();
    let file = text.as_deref().map(|t| (name.as_str(), t));
    let config = RunConfig::load(file, &common.overrides)?;
    config.validate()?;
    Ok(config)
}

fn execute(command: &Command) -> Result<i32, RunError> {
    match command {
        Command::Run(common) => {
            let config = load(common)?;
            let outcome = experiments::run(&config)?;
            print!("{}", outcome.report_text);
            Ok(outcome.exit_code())
        }
        Command::Study(common) => {
            let config = load(common)?;
            let rows = experiments::convergence_study(&config)?;
            experiments::write_study(&config, &rows)?;
            print!("{}", experiments::study_csv(&rows));
            Ok(if rows.iter().all(|r| r.converged) {
                0
            } else {
                2
            })
        }
        Command::Sweep(common) => {
            let config = load(common)?;
            let rows = experiments::epsilon_sweep(&config, &config.epsilons)?;
            experiments::write_sweep(&config, &rows)?;
            print!("{}", experiments::sweep_csv(&rows));
            Ok(if rows.iter().all(|r| r.converged) {
                0
            } else {
                2
            })
        }
    }
}

fn configure_threads() -> Result<(), RunError> {
    if let Ok(value) = std::env::var("KIRIGAMI_THREADS") {
        let threads: usize = value.parse().map_err(|_| {
            ConfigError::Invalid(format!(
                "KIRIGAMI_THREADS must be a positive integer, got {value:?}"
            ))
        })?;
        rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build_global()
            .map_err(|e| ConfigError::Invalid(e.to_string()))?;
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    let code = configure_threads()
        .and_then(|()| execute(&cli.command))
        .unwrap_or_else(|e| {
            eprintln!("error: {e}");
            e.exit_code()
        });
    ExitCode::from(code as u8)
}
