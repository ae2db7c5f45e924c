//! Command-line front end.

use std::ffi::OsString;
use std::path::PathBuf;

use clap::{Parser, ValueEnum};

use super::config::ConfigFile;
use super::presets::{run_preset, run_single, write_report};
use crate::error::Result;
use crate::federation::Algorithm;

/// Output root used when neither `--out-dir` nor the environment variable is set.
pub const DEFAULT_OUT_DIR: &str = "fedbal_out";
pub const OUT_DIR_ENV: &str = "FEDBAL_OUT_DIR";

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum AlgorithmArg {
    Fedavg,
    Fedsgd,
    Fedprox,
}

impl From<AlgorithmArg> for Algorithm {
    fn from(a: AlgorithmArg) -> Self {
        match a {
            AlgorithmArg::Fedavg => Algorithm::FedAvg,
            AlgorithmArg::Fedsgd => Algorithm::FedSgd,
            AlgorithmArg::Fedprox => Algorithm::FedProx,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum OnOff {
    On,
    Off,
}

/// Federated training simulator with class-imbalance-aware worker selection.
#[derive(Debug, Parser)]
#[command(name = "fedbal", version, about)]
struct Cli {
    /// JSON configuration file.
    #[arg(long)]
    config: PathBuf,
    /// alpha_sweep, noniid, noniid_unbalanced, intensity_sweep or central_vs_fed.
    #[arg(long)]
    preset: Option<String>,
    /// Seed for both the federation and the data; overrides the file.
    #[arg(long)]
    seed: Option<u64>,
    /// Output root; defaults to $FEDBAL_OUT_DIR, then ./fedbal_out.
    #[arg(long)]
    out_dir: Option<PathBuf>,
    #[arg(long)]
    rounds: Option<usize>,
    #[arg(long, value_enum)]
    algorithm: Option<AlgorithmArg>,
    #[arg(long, value_enum)]
    bal: Option<OnOff>,
}

/// Parse `args` (including the program name), run, and return the exit code.
pub fn run_cli<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return e.exit_code();
        }
    };
    match execute(&cli) {
        Ok(files) => {
            for f in files {
                log::info!("wrote {}", f.display());
            }
            0
        }
        Err(e) => {
            eprintln!("error: {e}");
            1
        }
    }
}

fn execute(cli: &Cli) -> Result<Vec<PathBuf>> {
    let mut file = ConfigFile::load(&cli.config)?;
    if let Some(p) = &cli.preset {
        file.preset = Some(p.clone());
    }
    if let Some(seed) = cli.seed {
        file.seed = Some(seed);
        file.data.seed = Some(seed);
    }
    if let Some(r) = cli.rounds {
        file.rounds = Some(r);
    }
    if let Some(a) = cli.algorithm {
        file.algorithm = Some(a.into());
    }
    if let Some(b) = cli.bal {
        file.bal = Some(b == OnOff::On);
    }
    let cfg = file.resolve()?;
    let out_dir = cli
        .out_dir
        .clone()
        .or_else(|| std::env::var_os(OUT_DIR_ENV).map(PathBuf::from))
        .unwrap_or_else(|| PathBuf::from(DEFAULT_OUT_DIR));
    let report = match cfg.preset {
        Some(p) => run_preset(p, &cfg)?,
        None => run_single(&cfg)?,
    };
    write_report(&report, &out_dir)
}
