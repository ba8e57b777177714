use std::net::SocketAddr;
use std::path::PathBuf;
use std::str::FromStr;

use clap::{Parser, Subcommand, ValueEnum};

#[derive(Debug, Parser)]
#[command(name = "stez", version, about = "Liquid-staking ledger simulator")]
pub struct Cli {
    /// Report format.
    #[arg(long, value_enum, default_value_t = Format::Json, global = true)]
    pub format: Format,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum Format {
    Json,
    Table,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Run a scenario and write its event log.
    Run {
        #[arg(long)]
        scenario: PathBuf,
        /// Where to write the JSON-lines event log.
        #[arg(long)]
        log: PathBuf,
        /// Abort on the first rejected operation.
        #[arg(long)]
        strict: bool,
        /// JSON object merged over the scenario's params.
        #[arg(long)]
        params: Option<PathBuf>,
    },
    /// Audit an event log; with --scenario also re-run and compare.
    Check {
        #[arg(long)]
        log: PathBuf,
        #[arg(long)]
        scenario: Option<PathBuf>,
        #[arg(long)]
        strict: bool,
        #[arg(long)]
        params: Option<PathBuf>,
    },
    /// Exchange-rate quote and indicative NAV at a block.
    Nav {
        #[arg(long)]
        log: PathBuf,
        #[arg(long)]
        block: u64,
        /// Holdings in token units.
        #[arg(long, default_value_t = 0)]
        holdings: u64,
        /// FX rate as a decimal, or @path to a file holding one.
        #[arg(long)]
        fx: Option<String>,
    },
    /// Attribute the rate change over a window of blocks.
    Reconcile {
        #[arg(long)]
        log: PathBuf,
        /// Window as t0:t1.
        #[arg(long)]
        window: Window,
        #[arg(long, default_value_t = stez_core::nav::DEFAULT_TOLERANCE_BP)]
        tolerance_bp: u64,
    },
    /// Serve the read-only query API over a stepped scenario.
    Serve {
        #[arg(long)]
        scenario: PathBuf,
        #[arg(long, default_value = "127.0.0.1:8080")]
        listen: SocketAddr,
        #[arg(long)]
        strict: bool,
        #[arg(long)]
        params: Option<PathBuf>,
        /// Delay between blocks in milliseconds; 0 runs to the end at once.
        #[arg(long, default_value_t = 0)]
        block_ms: u64,
    },
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Window {
    pub t0: u64,
    pub t1: u64,
}

impl FromStr for Window {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let (a, b) = s.split_once(':').ok_or_else(|| format!("expected t0:t1, got {s:?}"))?;
        let t0 = a.trim().parse().map_err(|_| format!("bad window start {a:?}"))?;
        let t1 = b.trim().parse().map_err(|_| format!("bad window end {b:?}"))?;
        if t0 > t1 {
            return Err(format!("window start {t0} is after its end {t1}"));
        }
        Ok(Window { t0, t1 })
    }
}
