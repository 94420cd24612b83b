use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use nat_core::{Discrepancy, Shape};

mod commands;
mod config;
mod output;

use config::ModeSel;

/// Noise-aware training experiments for saliency estimation.
#[derive(Debug, Parser)]
#[command(name = "nat-bench", version = concat!("v", env!("CARGO_PKG_VERSION")))]
struct Cli {
    /// Worker threads; defaults to the number of cores.
    #[arg(long, global = true, env = "NAT_BENCH_THREADS", value_parser = clap::value_parser!(u32).range(1..))]
    threads: Option<u32>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Args)]
struct Common {
    /// Output directory.
    #[arg(long, default_value = "nat-out")]
    out: PathBuf,
    /// JSON config (or a previous run manifest); flags take precedence.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Base seed for every random stream.
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Debug, Args)]
struct InputArgs {
    /// Dataset directory from `synth`, or a FIXCSV file.
    #[arg(long)]
    input: Option<PathBuf>,
    /// Grid shape WxH; read from the dataset when omitted.
    #[arg(long)]
    grid: Option<Shape>,
    /// Blur sigma in cells for measured maps.
    #[arg(long)]
    sigma: Option<f64>,
}

#[derive(Debug, Args)]
struct ExperimentArgs {
    #[arg(long, value_parser = clap::value_parser!(u64).range(1..))]
    frames: Option<u64>,
    /// Number of emulated videos (frame groups).
    #[arg(long, value_parser = clap::value_parser!(u64).range(1..))]
    videos: Option<u64>,
    /// Fixations per frame.
    #[arg(long, value_parser = clap::value_parser!(u64).range(1..))]
    observers: Option<u64>,
    #[arg(long)]
    grid: Option<Shape>,
    #[arg(long)]
    sigma: Option<f64>,
    /// kld, neg_cc, neg_nss or mix:a,b,c.
    #[arg(long)]
    discrepancy: Option<Discrepancy>,
    /// Bootstrap realizations per frame.
    #[arg(long, value_parser = clap::value_parser!(u64).range(2..))]
    realizations: Option<u64>,
    #[arg(long)]
    iterations: Option<u64>,
    #[arg(long)]
    learning_rate: Option<f64>,
    #[arg(long, value_parser = clap::value_parser!(u64).range(1..))]
    record_every: Option<u64>,
    #[arg(long)]
    mode: Option<ModeSel>,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Generate synthetic truths and fixations.
    Synth {
        #[command(flatten)]
        common: Common,
        #[arg(long, value_parser = clap::value_parser!(u64).range(1..))]
        frames: Option<u64>,
        #[arg(long, value_parser = clap::value_parser!(u64).range(1..))]
        videos: Option<u64>,
        /// Fixations per frame, one per observer.
        #[arg(long, value_parser = clap::value_parser!(u64).range(1..))]
        observers: Option<u64>,
        #[arg(long)]
        grid: Option<Shape>,
        #[arg(long)]
        sigma: Option<f64>,
    },
    /// Build measured maps, or KDE gold-standard maps, from fixations.
    Reconstruct {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        input: InputArgs,
        /// Fit a KDE bandwidth and uniform weight per frame.
        #[arg(long)]
        gold_standard: bool,
    },
    /// Estimate bootstrap noise statistics per frame.
    Stats {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        input: InputArgs,
        #[arg(long)]
        discrepancy: Option<Discrepancy>,
        #[arg(long, value_parser = clap::value_parser!(u64).range(2..))]
        realizations: Option<u64>,
    },
    /// Train per-frame predictors with TT and/or NAT.
    Train {
        #[command(flatten)]
        common: Common,
        /// Dataset directory; frames are synthesized when omitted.
        #[arg(long)]
        input: Option<PathBuf>,
        #[command(flatten)]
        experiment: ExperimentArgs,
    },
    /// Compare TT and NAT over observer and video counts.
    Compare {
        #[command(flatten)]
        common: Common,
        /// Fixations per frame; repeat for several values.
        #[arg(long = "n", value_parser = clap::value_parser!(u64).range(1..))]
        n_values: Vec<u64>,
        /// Video counts; repeat for several values.
        #[arg(long = "v", value_parser = clap::value_parser!(u64).range(1..))]
        v_values: Vec<u64>,
        #[command(flatten)]
        experiment: ExperimentArgs,
    },
    /// The 1D toy study: discrepancy statistics for two fixed truths.
    Toy {
        #[command(flatten)]
        common: Common,
        #[arg(long = "n", value_parser = clap::value_parser!(u64).range(1..))]
        n_values: Vec<u64>,
        #[arg(long, value_parser = clap::value_parser!(u64).range(2..))]
        realizations: Option<u64>,
    },
    /// Inter-observer consistency curve averaged over frames.
    Ioc {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        input: InputArgs,
        #[arg(long, value_parser = clap::value_parser!(u64).range(1..))]
        realizations: Option<u64>,
        /// Use every k-th frame.
        #[arg(long, value_parser = clap::value_parser!(u64).range(1..))]
        stride: Option<u64>,
    },
    /// Score a predicted SGRID against a reference SGRID.
    Metrics {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        predicted: Option<PathBuf>,
        #[arg(long)]
        reference: Option<PathBuf>,
        /// FIXCSV with fixations for NSS and AUC.
        #[arg(long)]
        fixations: Option<PathBuf>,
        /// Frame of the FIXCSV to use; defaults to the only frame present.
        #[arg(long)]
        frame: Option<u64>,
    },
}

/// Error caused by the invocation rather than the data.
#[derive(Debug)]
pub struct UsageError(pub String);

impl std::fmt::Display for UsageError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for UsageError {}

pub fn usage(msg: impl Into<String>) -> anyhow::Error {
    UsageError(msg.into()).into()
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let mut pool = rayon::ThreadPoolBuilder::new();
    if let Some(k) = cli.threads {
        pool = pool.num_threads(k as usize);
    }
    let result = match pool.build() {
        Ok(pool) => pool.install(|| commands::run(cli.command)),
        Err(e) => Err(e.into()),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            if e.downcast_ref::<UsageError>().is_some() {
                ExitCode::from(2)
            } else {
                ExitCode::from(1)
            }
        }
    }
}
