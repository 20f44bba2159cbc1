use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use frontier::harness::{cli_compare, cli_eval, cli_sweep, cli_train, cli_verify};

/// Frontier-band exploration experiments: train agents under vector-field
/// reward shaping on the 2-d box world, evaluate checkpoints, verify the
/// analytic invariants, and compare or sweep runs.
#[derive(Parser)]
#[command(name = "frontier", version, about, max_term_width = 100)]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Train all seeds of a config and write the run directory.
    Train {
        /// Path to the TOML run config.
        config: PathBuf,
        /// Dotted-path overrides, e.g. --set shaping.u_mid=0.45 (repeatable).
        #[arg(long = "set", value_name = "PATH=VALUE")]
        set: Vec<String>,
    },
    /// Roll out a frozen checkpoint from a run directory (read-only).
    Eval {
        /// Run directory produced by `train`.
        run_dir: PathBuf,
        /// Checkpoint path, relative to the run directory unless absolute.
        checkpoint: PathBuf,
        #[arg(long, default_value_t = 40)]
        episodes: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Sample actions instead of taking the deterministic policy mean.
        #[arg(long)]
        stochastic: bool,
    },
    /// Run the analytic check suite; exit 0 iff every check passes.
    Verify {
        config: PathBuf,
        #[arg(long = "set", value_name = "PATH=VALUE")]
        set: Vec<String>,
    },
    /// Side-by-side diagnostics medians of two completed runs.
    Compare {
        run_a: PathBuf,
        run_b: PathBuf,
    },
    /// One training run per value of a single scalar config field.
    Sweep {
        config: PathBuf,
        /// Dotted path of the swept field, e.g. shaping.u_mid.
        #[arg(long)]
        axis: String,
        /// Values to sweep, comma-separated or repeated.
        #[arg(long, value_delimiter = ',')]
        values: Vec<String>,
        #[arg(long = "set", value_name = "PATH=VALUE")]
        set: Vec<String>,
    },
}

fn run(cli: Cli) -> frontier::Result<u8> {
    match cli.cmd {
        Cmd::Train { config, set } => {
            cli_train(&config, &set)?;
            Ok(0)
        }
        Cmd::Eval {
            run_dir,
            checkpoint,
            episodes,
            seed,
            stochastic,
        } => {
            cli_eval(&run_dir, &checkpoint, episodes, seed, !stochastic)?;
            Ok(0)
        }
        Cmd::Verify { config, set } => {
            let summary = cli_verify(&config, &set)?;
            Ok(if summary.all_passed() { 0 } else { 1 })
        }
        Cmd::Compare { run_a, run_b } => {
            cli_compare(&run_a, &run_b)?;
            Ok(0)
        }
        Cmd::Sweep {
            config,
            axis,
            values,
            set,
        } => {
            cli_sweep(&config, &axis, &values, &set)?;
            Ok(0)
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
