use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, ValueEnum};
use smallcell_dpp::config::{parse_config, parse_config_str, Overrides};
use smallcell_dpp::output::run_experiment;

#[derive(Clone, Copy, Debug, ValueEnum)]
enum Toggle {
    On,
    Off,
}

/// Run drift-plus-penalty streaming experiments and write CSV bundles.
#[derive(Debug, Parser)]
#[command(name = "dppsim", version)]
struct Args {
    /// Experiment configuration (TOML). Built-in defaults when omitted.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    /// Number of slots to simulate.
    #[arg(long)]
    slots: Option<u64>,
    /// Comma-separated values of V, one run each.
    #[arg(long, value_delimiter = ',')]
    v: Option<Vec<f64>>,
    /// Output directory.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Write the per-slot trace.
    #[arg(long)]
    trace: Option<Toggle>,
}

fn main() -> ExitCode {
    let args = Args::parse();
    let overrides = Overrides {
        seed: args.seed,
        slots: args.slots,
        v: args.v,
        out: args.out,
        trace: args.trace.map(|t| matches!(t, Toggle::On)),
    };
    let spec = match &args.config {
        Some(path) => parse_config(path, &overrides),
        None => parse_config_str("", std::path::Path::new("."), &overrides),
    };
    let result = spec.and_then(|spec| run_experiment(&spec));
    match result {
        Ok(dirs) => {
            for d in dirs {
                println!("{}", d.display());
            }
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("dppsim: {e}");
            ExitCode::from(if e.is_config() { 1 } else { 2 })
        }
    }
}
