use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use rmn_cli::CliError;

#[derive(Parser)]
#[command(name = "rmn", version, about = "Robust adaptive LQR experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the Monte Carlo regret experiment and write summary tables.
    Run {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        workers: Option<usize>,
    },
    /// Solve the robust Riccati design for a config and print P, K, c_gamma.
    Solve {
        #[arg(long)]
        config: PathBuf,
    },
    /// Bootstrap the model covariance of a recorded trajectory.
    Bootstrap {
        #[arg(long)]
        trajectory: PathBuf,
        #[arg(long)]
        resamples: usize,
        #[arg(long)]
        seed: u64,
    },
}

fn dispatch(cli: Cli) -> Result<(), CliError> {
    let mut stdout = std::io::stdout().lock();
    match cli.command {
        Command::Run {
            config,
            seed,
            out,
            workers,
        } => {
            let res = rmn_cli::run(&config, seed, &out, workers)?;
            for a in &res.manifest.arms {
                eprintln!(
                    "{}: {} completed, {} aborted, {} fallbacks",
                    a.arm, a.completed, a.aborted, a.fallbacks
                );
            }
            eprintln!(
                "wrote {} ({:.1}s)",
                out.display(),
                res.manifest.wall_clock_seconds
            );
            Ok(())
        }
        Command::Solve { config } => rmn_cli::solve(&config, &mut stdout),
        Command::Bootstrap {
            trajectory,
            resamples,
            seed,
        } => rmn_cli::bootstrap(&trajectory, resamples, seed, &mut stdout),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match dispatch(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
