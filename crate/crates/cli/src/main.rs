//! `kvroof`: KV-offload prefill analysis from the command line.
//!
//! Exit codes: 0 success, 2 usage error, 3 data error.

mod commands;
mod manifest;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use kvroof_core::BandwidthMode;

#[derive(Parser, Debug)]
#[command(
    name = "kvroof",
    version,
    about = "Roofline and scheduling analysis of KV-cache-offloaded prefill"
)]
pub struct Cli {
    #[command(flatten)]
    pub common: Common,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Args, Debug, Clone)]
pub struct Common {
    /// Catalog JSON; the bundled catalog is used when absent
    #[arg(long, global = true, env = "KVROOF_CATALOG")]
    pub catalog: Option<PathBuf>,
    /// Host-link bandwidth figure
    #[arg(long, global = true, value_enum, default_value_t = Bandwidth::Sustained)]
    pub bandwidth: Bandwidth,
    /// Output path (file, or directory for `simulate`); stdout when absent
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    /// Print raw SI values (FLOP/B, B/FLOP) instead of table units
    #[arg(long, global = true)]
    pub si: bool,
    /// RNG seed for stream synthesis
    #[arg(long, global = true, default_value_t = 0)]
    pub seed: u64,
}

#[derive(ValueEnum, Debug, Clone, Copy, PartialEq, Eq)]
pub enum Bandwidth {
    Peak,
    Sustained,
}

impl From<Bandwidth> for BandwidthMode {
    fn from(b: Bandwidth) -> Self {
        match b {
            Bandwidth::Peak => BandwidthMode::Peak,
            Bandwidth::Sustained => BandwidthMode::Sustained,
        }
    }
}

#[derive(ValueEnum, Debug, Clone, Copy, PartialEq, Eq)]
pub enum Format {
    Table,
    Csv,
    Json,
}

#[derive(ValueEnum, Debug, Clone, Copy, PartialEq, Eq)]
pub enum TraceKind {
    Conversation,
    Document,
}

#[derive(ValueEnum, Debug, Clone, Copy, PartialEq, Eq)]
pub enum PolicyArg {
    Fifo,
    UtilizationAware,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Print the catalog in effect
    Catalog,
    /// κ_M, κ_HW and κ_crit for model × hardware pairs
    Kappa {
        /// Model name; repeat for several, all when omitted
        #[arg(long = "model")]
        models: Vec<String>,
        /// Hardware name; repeat for several, all when omitted
        #[arg(long = "hw")]
        hardware: Vec<String>,
        /// Override compute throughput of the selected hardware (FLOP/s)
        #[arg(long)]
        compute: Option<f64>,
        /// Override sustained link bandwidth of the selected hardware (B/s)
        #[arg(long)]
        sustained_bw: Option<f64>,
        #[arg(long, value_enum, default_value_t = Format::Table)]
        format: Format,
    },
    /// Roofline series over a κ_ratio sweep, as CSV
    Roofline {
        #[arg(long)]
        model: String,
        /// Hardware name; repeat for several, all when omitted
        #[arg(long = "hw")]
        hardware: Vec<String>,
        #[arg(long, default_value_t = 0.1)]
        min: f64,
        #[arg(long, default_value_t = 1e5)]
        max: f64,
        #[arg(long, default_value_t = 16)]
        points_per_decade: u32,
    },
    /// Expand a trace into requests and summarize T, K and κ_ratio
    Analyze {
        trace: PathBuf,
        #[arg(long, value_enum)]
        kind: TraceKind,
        #[arg(long, value_enum, default_value_t = Format::Table)]
        format: Format,
    },
    /// Synthesize a Poisson request stream from a workload profile
    Synth {
        /// Built-in profile name (sharegpt, narrativeqa, finqa)
        #[arg(long, conflicts_with = "profile_file")]
        profile: Option<String>,
        /// Profile JSON file
        #[arg(long)]
        profile_file: Option<PathBuf>,
        #[arg(long)]
        rps: f64,
        /// Stream length in seconds
        #[arg(long)]
        duration: f64,
    },
    /// Run the iteration-level scheduler on a request stream
    Simulate {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        stream: PathBuf,
        #[arg(long, value_enum, default_value_t = PolicyArg::Fifo)]
        policy: PolicyArg,
        /// Run FIFO and utilization-aware on the same stream
        #[arg(long)]
        compare: bool,
    },
}

pub enum CliError {
    Usage(String),
    Data(String),
}

impl CliError {
    fn code(&self) -> u8 {
        match self {
            CliError::Usage(_) => 2,
            CliError::Data(_) => 3,
        }
    }
}

pub fn data<E: std::fmt::Display>(e: E) -> CliError {
    CliError::Data(e.to_string())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match commands::run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let (CliError::Usage(msg) | CliError::Data(msg)) = &e;
            eprintln!("error: {msg}");
            ExitCode::from(e.code())
        }
    }
}
