use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use slcontrol_cli::{cmd_dump, cmd_simulate, cmd_solve, cmd_study, config_threads, init_threads, Options};

#[derive(Parser)]
#[command(name = "slcontrol", version, about = "Semi-Lagrangian stochastic optimal control solver")]
struct Cli {
    /// Directory for output artifacts (overrides `output_dir` in the config).
    #[arg(long, global = true)]
    output_dir: Option<PathBuf>,
    /// Worker threads for parallel sweeps and Monte Carlo runs.
    #[arg(long, global = true)]
    threads: Option<usize>,
    /// Suppress progress messages.
    #[arg(long, global = true)]
    quiet: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Solve for the value function and policy.
    Solve { config: PathBuf },
    /// Closed-loop Monte Carlo evaluation of a solved value field.
    Simulate { config: PathBuf, value: PathBuf },
    /// Grid refinement study against a benchmark's reference solution.
    Study { config: PathBuf },
    /// Print grid metadata and value range of a value.json file.
    Dump { value: PathBuf },
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let opts = Options {
        output_dir: cli.output_dir,
        quiet: cli.quiet,
    };
    let config_path = match &cli.command {
        Command::Solve { config } | Command::Simulate { config, .. } | Command::Study { config } => {
            Some(config.clone())
        }
        Command::Dump { .. } => None,
    };
    init_threads(cli.threads.or_else(|| config_path.as_deref().and_then(config_threads)));

    let result = match &cli.command {
        Command::Solve { config } => cmd_solve(config, &opts),
        Command::Simulate { config, value } => cmd_simulate(config, value, &opts),
        Command::Study { config } => cmd_study(config, &opts),
        Command::Dump { value } => cmd_dump(value).map(|text| {
            print!("{text}");
            0
        }),
    };
    match result {
        Ok(code) => ExitCode::from(code as u8),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
