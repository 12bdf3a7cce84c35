use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};
use syncurator_core::{Channel, Composition, Ratio, ScoringWeights, Stage};

#[derive(Debug, Parser)]
#[command(
    name = "syncurator",
    version,
    about = "Score, curate and evaluate paired portrait videos from landmark streams"
)]
pub struct Cli {
    #[command(flatten)]
    pub global: GlobalArgs,

    #[command(subcommand)]
    pub command: Command,
}

/// Run-configuration overrides shared by every subcommand.
#[derive(Debug, Clone, Default, Args)]
pub struct GlobalArgs {
    /// TOML or JSON config file; a previous output file reuses its config echo.
    #[arg(long, global = true, env = "SYNCURATOR_CONFIG", value_name = "PATH")]
    pub config: Option<PathBuf>,

    /// Channel weights as speech,gaze,blink,pose (rescaled to sum 1).
    #[arg(long, global = true, value_name = "S,G,B,P")]
    pub weights: Option<ScoringWeights>,

    /// Zero one channel's weight and renormalize the rest.
    #[arg(long, global = true, value_name = "NAME")]
    pub drop_channel: Option<Channel>,

    #[arg(long, global = true)]
    pub composition: Option<Composition>,

    #[arg(long, global = true, value_name = "N")]
    pub target_size: Option<usize>,

    /// Edited-to-identical ratio of the filtered manifest.
    #[arg(long, global = true, value_name = "A:B")]
    pub ratio: Option<Ratio>,

    #[arg(long, global = true, value_name = "N")]
    pub seed: Option<u64>,

    /// Minimum per-view face and pose detection coverage.
    #[arg(long, global = true, value_name = "FRACTION")]
    pub coverage_threshold: Option<f64>,

    /// Worker threads (default: logical cores).
    #[arg(long, global = true, value_name = "N")]
    pub jobs: Option<usize>,

    /// Output directory.
    #[arg(long, global = true, value_name = "DIR", default_value = ".")]
    pub out: PathBuf,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Score landmark pairs and write scores.json.
    Score {
        /// Pair files, or directories searched for *.pair.json.
        #[arg(required = true)]
        inputs: Vec<PathBuf>,
    },
    /// Rank scored pairs and write manifest.json.
    Filter {
        /// A scores.json written by `score`.
        #[arg(long)]
        scores: PathBuf,
    },
    /// Evaluate synchronization and embedding metrics; writes metrics.json and metrics.csv.
    Eval {
        /// Pair files, or directories searched for *.pair.json.
        #[arg(long, num_args = 1..)]
        pairs: Vec<PathBuf>,
        /// Embedding files, or directories searched for *.emb.json.
        #[arg(long, num_args = 1..)]
        embeddings: Vec<PathBuf>,
        /// Include per-frame metric values.
        #[arg(long)]
        traces: bool,
    },
    /// Generate a synthetic dataset of desynchronized pairs.
    Synth(SynthArgs),
    /// Export per-stage channel signals of one pair as long-format CSV.
    Trace {
        pair: PathBuf,
        /// Stages to export (default: all).
        #[arg(long, value_delimiter = ',')]
        stage: Vec<Stage>,
        /// Channels to export (default: all).
        #[arg(long, value_delimiter = ',')]
        channel: Vec<Channel>,
    },
    /// Merge scores, manifest and metrics into report.json.
    Report {
        #[arg(long)]
        scores: PathBuf,
        #[arg(long)]
        manifest: Option<PathBuf>,
        #[arg(long)]
        metrics: Option<PathBuf>,
    },
}

#[derive(Debug, Clone, Args)]
pub struct SynthArgs {
    /// Injected lags of the edited pairs.
    #[arg(
        long,
        value_delimiter = ',',
        default_value = "0,1,2,3,4,5,6,7,8,9",
        allow_negative_numbers = true
    )]
    pub lags: Vec<i64>,
    /// Seeds per lag; seeds run 0..N.
    #[arg(long, default_value_t = 20)]
    pub seeds: u64,
    /// Additional unperturbed identical pairs.
    #[arg(long, default_value_t = 0)]
    pub identical: u64,
    #[arg(long, default_value_t = 0.0)]
    pub noise: f64,
    #[arg(long, default_value_t = 0.0)]
    pub dropout: f64,
    #[arg(long, default_value_t = 81)]
    pub frames: usize,
    #[arg(long, default_value_t = 20.0)]
    pub fps: f64,
    /// Also write synthetic embedding bundles.
    #[arg(long)]
    pub embeddings: bool,
    /// Write embeddings as a JSON header plus float32 payload.
    #[arg(long, requires = "embeddings")]
    pub binary: bool,
}
