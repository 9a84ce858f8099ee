use std::fs;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use roughvol_cli::commands::{self, CliError};
use roughvol_cli::config::RunConfig;
use roughvol_cli::output::Sink;
use roughvol_cli::SchemaError;

#[derive(Parser)]
#[command(name = "roughvol", version, about = "Rough Bergomi Monte Carlo experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,

    /// Run configuration (versioned JSON).
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    /// Output directory; overrides `output_dir` in the config.
    #[arg(long, global = true)]
    out: Option<PathBuf>,

    /// Seed; overrides `seed` in the config.
    #[arg(long, global = true)]
    seed: Option<u64>,

    /// Worker threads, 0 = one per core.
    #[arg(long, global = true, env = "ROUGHVOL_THREADS")]
    threads: Option<usize>,
}

#[derive(Subcommand, Clone, Copy)]
enum Command {
    /// Terminal log-prices and their summary statistics.
    Simulate,
    /// Fit or construct the sum-of-exponentials kernel.
    FitKernel,
    /// Implied-volatility smiles.
    Smile,
    /// Smile RMSE of a model against rBergomi over a (terms, steps) grid.
    Compare,
    /// ATM skew term structure and its power-law fit.
    Skew,
}

fn run(cli: Cli) -> Result<Vec<PathBuf>, CliError> {
    let path = cli
        .config
        .ok_or_else(|| SchemaError::single("--config", "a configuration file is required"))?;
    let text = fs::read_to_string(&path).map_err(|e| CliError::Io { path: path.clone(), source: e })?;
    let mut cfg = RunConfig::from_json(&text)?;
    if let Some(seed) = cli.seed {
        cfg.seed = seed;
    }
    let out = cli.out.or_else(|| cfg.output_dir.clone()).unwrap_or_else(|| PathBuf::from("."));
    let mut sink = Sink::new(out.clone()).map_err(|e| CliError::Io { path: out, source: e })?;
    match cli.command {
        Command::Simulate => commands::simulate(&cfg, &mut sink),
        Command::FitKernel => commands::fit_kernel(&cfg, &mut sink),
        Command::Smile => commands::smile(&cfg, &mut sink),
        Command::Compare => commands::compare(&cfg, &mut sink),
        Command::Skew => commands::skew(&cfg, &mut sink),
    }?;
    Ok(sink.written().to_vec())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    if let Some(n) = cli.threads {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n).build_global() {
            eprintln!("error: cannot start thread pool: {e}");
            return ExitCode::from(3);
        }
    }
    match run(cli) {
        Ok(files) => {
            for f in files {
                println!("{}", f.display());
            }
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprint!("error: {e}");
            if !e.to_string().ends_with('\n') {
                eprintln!();
            }
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
