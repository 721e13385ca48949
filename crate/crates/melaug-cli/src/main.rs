//! `melaug` — mel-spectrogram extraction, augmentation, Griffin-Lim
//! inversion, objective metrics and the DPD hyperparameter search.

mod commands;
mod config;

use std::path::PathBuf;

use clap::{Parser, Subcommand};

use commands::{CliError, DpdSearchArgs};
use config::ToolConfig;

#[derive(Parser)]
#[command(
    name = "melaug",
    version,
    about = "Mel-spectrogram augmentation toolkit with DPD hyperparameter search"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Extract a log-mel spectrogram (MELS file) from a 16-bit PCM WAV.
    Extract {
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        config: Option<PathBuf>,
    },
    /// Apply one augmentation policy to a MELS file.
    ///
    /// Parameters: tw/tlc/lc take a fraction (e.g. 0.08), fw a bin count,
    /// tm/fm a width,count pair like "T=4,Nt=2" or "4,2". With --policy tlc,
    /// --pair-in/--pair-out stretch a source/target pair by one shared ratio.
    Augment {
        #[arg(long)]
        policy: String,
        #[arg(long)]
        param: String,
        /// Seed for the policy draws; runs are reproducible, never
        /// wall-clock seeded.
        #[arg(long)]
        seed: u64,
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long = "pair-in")]
        pair_in: Option<PathBuf>,
        #[arg(long = "pair-out")]
        pair_out: Option<PathBuf>,
    },
    /// Decode a MELS file back to a WAV with Griffin-Lim.
    Invert {
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Griffin-Lim iterations (default 60).
        #[arg(long)]
        iters: Option<usize>,
        #[arg(long)]
        config: Option<PathBuf>,
    },
    /// Print utterance count, mean frame count and mel bins for a manifest.
    Stats {
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long)]
        config: Option<PathBuf>,
    },
    /// Run the DPD hyperparameter search and write the report TSV.
    ///
    /// Live mode decodes and transcribes every trial (requires --manifest,
    /// a configured transcriber and --seed). Offline mode recomputes the
    /// report from recorded trials (--measurements-in plus --mean-tau).
    DpdSearch {
        #[arg(long)]
        manifest: Option<PathBuf>,
        #[arg(long)]
        config: Option<PathBuf>,
        /// all, or one of tm|fm|tw|fw|tlc|lc.
        #[arg(long, default_value = "all")]
        policy: String,
        #[arg(long = "out-report")]
        out_report: PathBuf,
        #[arg(long = "measurements-in")]
        measurements_in: Option<PathBuf>,
        #[arg(long = "measurements-out")]
        measurements_out: Option<PathBuf>,
        #[arg(long)]
        seed: Option<u64>,
        /// Mean frame count E(tau) of the dataset (offline mode).
        #[arg(long = "mean-tau")]
        mean_tau: Option<f64>,
        /// Mel bin count (offline mode; defaults to extraction.n_mels).
        #[arg(long)]
        nu: Option<usize>,
        /// Evaluate trials on a thread pool; reports are identical either way.
        #[arg(long)]
        parallel: bool,
    },
    /// Objective metrics: character/word error rate and mel-cepstral
    /// distortion.
    Metrics {
        #[command(subcommand)]
        metric: MetricCommand,
    },
}

#[derive(Subcommand)]
enum MetricCommand {
    /// Character error rate between two UTF-8 text files.
    Cer {
        #[arg(long)]
        hyp: PathBuf,
        #[arg(long = "ref")]
        reference: PathBuf,
    },
    /// Word error rate between two UTF-8 text files.
    Wer {
        #[arg(long)]
        hyp: PathBuf,
        #[arg(long = "ref")]
        reference: PathBuf,
    },
    /// Mel-cepstral distortion (dB) between two MELS files.
    Mcd {
        #[arg(long)]
        a: PathBuf,
        #[arg(long)]
        b: PathBuf,
        /// Cepstral order K (default 13, coefficient 0 excluded from the
        /// distance).
        #[arg(long)]
        order: Option<usize>,
        #[arg(long)]
        config: Option<PathBuf>,
    },
}

fn load_config(path: &Option<PathBuf>) -> Result<ToolConfig, CliError> {
    match path {
        Some(p) => config::load_config(p).map_err(CliError::Usage),
        None => Ok(ToolConfig::default()),
    }
}

fn run(cli: Cli) -> Result<(), CliError> {
    match cli.command {
        Command::Extract { input, out, config } => {
            commands::cmd_extract(&input, &out, &load_config(&config)?)
        }
        Command::Augment {
            policy,
            param,
            seed,
            input,
            out,
            pair_in,
            pair_out,
        } => commands::cmd_augment(
            &policy,
            &param,
            seed,
            &input,
            &out,
            pair_in.as_deref(),
            pair_out.as_deref(),
        ),
        Command::Invert {
            input,
            out,
            iters,
            config,
        } => commands::cmd_invert(&input, &out, iters, &load_config(&config)?),
        Command::Stats { manifest, config } => {
            commands::cmd_stats(&manifest, &load_config(&config)?)
        }
        Command::DpdSearch {
            manifest,
            config,
            policy,
            out_report,
            measurements_in,
            measurements_out,
            seed,
            mean_tau,
            nu,
            parallel,
        } => {
            let cfg = load_config(&config)?;
            let args = DpdSearchArgs {
                manifest,
                policy,
                out_report,
                measurements_in,
                measurements_out,
                seed,
                mean_tau,
                nu,
                parallel,
            };
            commands::cmd_dpd_search(&args, &cfg)
        }
        Command::Metrics { metric } => match metric {
            MetricCommand::Cer { hyp, reference } => {
                commands::cmd_metrics_cer(&hyp, &reference, false)
            }
            MetricCommand::Wer { hyp, reference } => {
                commands::cmd_metrics_cer(&hyp, &reference, true)
            }
            MetricCommand::Mcd {
                a,
                b,
                order,
                config,
            } => commands::cmd_metrics_mcd(&a, &b, order, &load_config(&config)?),
        },
    }
}

fn main() {
    // clap itself exits with code 2 on argument errors
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => {}
        Err(CliError::Usage(msg)) => {
            eprintln!("error: {msg}");
            eprintln!("run 'melaug --help' for usage");
            std::process::exit(2);
        }
        Err(CliError::Runtime(msg)) => {
            eprintln!("error: {msg}");
            std::process::exit(1);
        }
    }
}
