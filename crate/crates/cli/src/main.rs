use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use footfix_core::Error;

mod commands;

/// Foot-contact restoration toolkit: synthesize, corrupt, score, train,
/// restore and band-analyze motion sequences.
#[derive(Debug, Parser)]
#[command(name = "footfix", version)]
struct Cli {
    /// JSON run configuration; missing fields take their defaults.
    #[arg(long, global = true, env = "FOOTFIX_CONFIG")]
    config: Option<PathBuf>,
    /// Run seed; overrides the configuration's.
    #[arg(long, global = true, env = "FOOTFIX_SEED")]
    seed: Option<u64>,
    /// JSON skeleton document (default: built-in SMPL body).
    #[arg(long, global = true, env = "FOOTFIX_SKELETON")]
    skeleton: Option<PathBuf>,
    /// Worker threads (default: all cores).
    #[arg(long, global = true, env = "FOOTFIX_JOBS")]
    jobs: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Generate a clean walking corpus.
    Synth {
        #[arg(long)]
        out: PathBuf,
        /// Number of sequences (overrides synth.count).
        #[arg(long)]
        count: Option<usize>,
        /// Frames per sequence (overrides synth.gait.len).
        #[arg(long)]
        frames: Option<usize>,
    },
    /// Inject artifacts into a corpus; writes a labels sidecar per file.
    Corrupt {
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Score a corpus: one JSON line per sequence on stdout plus a summary file.
    Metrics {
        #[arg(long)]
        input: PathBuf,
        /// Summary file (default: <input>/metrics.json).
        #[arg(long)]
        summary: Option<PathBuf>,
    },
    /// Train a restoration model on a clean corpus.
    Train {
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        checkpoint: PathBuf,
        /// Loss log, one JSON line per step (default: <checkpoint>.loss.jsonl).
        #[arg(long)]
        log: Option<PathBuf>,
    },
    /// Restore a corpus with a trained model.
    Restore {
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Per-band spectral energy of one sequence.
    Bands {
        #[arg(long)]
        input: PathBuf,
        /// Band count (overrides spectral.bands).
        #[arg(long)]
        bands: Option<usize>,
        /// Write each band's signal as `<stem>.band<k>.mseq` here.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Print the resolved run configuration.
    Config,
}

/// Exit status: 2 invalid input or configuration, 3 unreadable or malformed
/// file, 4 numeric failure.
fn exit_code(e: &Error) -> u8 {
    match e {
        Error::Format { .. } | Error::Io { .. } => 3,
        Error::Divergence { .. } | Error::NonFinite(_) | Error::SingularRotation(_) | Error::ZeroSignal => 4,
        _ => 2,
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::new().filter_or("FOOTFIX_LOG", "warn")).init();
    let cli = Cli::parse();
    match commands::run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}
