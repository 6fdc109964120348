use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use rotsecagg_harness::{bandwidth_report, run_experiment, sweep, ExperimentConfig, HarnessError};

#[derive(Parser)]
#[command(name = "rotsecagg", version, about = "Autotuned rotated secure aggregation experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run one experiment and write its metrics CSV.
    Run {
        #[arg(long)]
        config: PathBuf,
        /// key=value, parsed as a TOML value. Repeatable.
        #[arg(long = "override", value_name = "KEY=VALUE")]
        overrides: Vec<String>,
        /// Output directory, replacing `out_dir` from the config.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Bits per entry for the clip baseline, k = n*levels secure sum and the fixed-k pipeline.
    Bandwidth {
        #[arg(long)]
        users: u64,
        /// Bits per clipped value, so levels = 2^bits.
        #[arg(long)]
        bits: u32,
        /// Modulus of the autotuned pipeline.
        #[arg(long, default_value_t = 256)]
        modulus: u64,
        #[arg(long, default_value_t = 1)]
        dim: u64,
    },
    /// Run the config once per value of one key.
    Sweep {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        param: String,
        #[arg(long, value_delimiter = ',', required = true)]
        values: Vec<String>,
        #[arg(long = "override", value_name = "KEY=VALUE")]
        overrides: Vec<String>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

fn load(path: &Path, overrides: &[String], out: Option<PathBuf>) -> Result<ExperimentConfig, HarnessError> {
    let mut cfg = ExperimentConfig::load(path)?.apply_overrides(overrides)?;
    if let Some(out) = out {
        cfg.out_dir = out;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn bad_arg(field: &str, message: &str) -> HarnessError {
    HarnessError::Config { field: field.into(), message: message.into() }
}

fn execute(cli: Cli) -> Result<(), HarnessError> {
    match cli.command {
        Command::Run { config, overrides, out } => {
            let cfg = load(&config, &overrides, out)?;
            let path = run_experiment(&cfg)?;
            println!("{}", path.display());
        }
        Command::Bandwidth { users, bits, modulus, dim } => {
            if users == 0 {
                return Err(bad_arg("users", "must be at least 1"));
            }
            if !(1..=63).contains(&bits) {
                return Err(bad_arg("bits", "must be in [1, 63]"));
            }
            if modulus < 2 || dim == 0 {
                return Err(bad_arg("modulus", "modulus must be at least 2 and dim at least 1"));
            }
            println!("{}", bandwidth_report(users, 1u64 << bits, modulus, dim));
        }
        Command::Sweep { config, param, values, overrides, out } => {
            let cfg = load(&config, &overrides, out)?;
            for path in sweep(&cfg, &param, &values)? {
                println!("{}", path.display());
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    match execute(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            match e {
                HarnessError::Config { .. } => ExitCode::from(2),
                _ => ExitCode::from(1),
            }
        }
    }
}
