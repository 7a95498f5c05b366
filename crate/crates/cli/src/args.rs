use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::{Deserialize, Serialize};

/// Record, replay, simulate and reconstruct 14-channel EEG streams.
///
/// Log verbosity is taken from the SBS_LOG environment variable
/// (error, warn, info, debug, trace). Exit status is 0 on success, 1 on a
/// runtime error and 2 on a usage or configuration error.
#[derive(Debug, Parser)]
#[command(name = "sbs", version)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a synthetic stream and its ground truth.
    Sim(SimArgs),
    /// Capture a source to an SBSR file.
    Record(RecordArgs),
    /// Re-emit a recording to a file or to a TCP client.
    Replay(ReplayArgs),
    /// Run source reconstruction and ROI power tracking.
    Reconstruct(ReconstructArgs),
    /// Train a CSP + classifier model, with cross-validation.
    BciTrain(BciTrainArgs),
    /// Score a trained model on a stream.
    BciEval(BciEvalArgs),
    /// Packet timing, sampling-rate and loss statistics.
    TimingReport(TimingArgs),
    /// Repeat a run from its provenance file.
    Rerun(RerunArgs),
    /// Forward model utilities.
    #[command(subcommand)]
    Model(ModelCommand),
}

#[derive(Debug, Subcommand)]
pub enum ModelCommand {
    /// Write the synthetic head model to a file.
    Export(ModelExportArgs),
}

/// Where packets come from. Unset options keep their defaults.
#[derive(Debug, Clone, Default, Args, Serialize, Deserialize)]
pub struct SourceArgs {
    /// file:PATH, tcp:HOST:PORT or sim:SCENARIO (erd, ideal, lossy,
    /// compensated) [default: sim:erd]
    #[arg(long)]
    pub source: Option<String>,
    /// Replay speed for recorded timestamps; 0 reads as fast as possible
    /// [default: 0]
    #[arg(long)]
    pub speed: Option<f64>,
    /// Seed for simulated sources and any resampling [default: 1]
    #[arg(long)]
    pub seed: Option<u64>,
    /// Trials in simulated cue protocols [default: 200]
    #[arg(long)]
    pub trials: Option<usize>,
    /// Length of simulated streams without a cue protocol, seconds
    /// [default: 600]
    #[arg(long)]
    pub duration: Option<f64>,
    /// Cortical mesh size of the synthetic head model [default: 1028]
    #[arg(long)]
    pub vertices: Option<usize>,
    /// Forward model file (from `sbs model export`) instead of the
    /// synthetic head
    #[arg(long)]
    pub model: Option<PathBuf>,
    /// Log stream statistics every this many seconds of stream time
    #[arg(long, value_name = "SECONDS")]
    pub stats_every: Option<f64>,
}

#[derive(Debug, Clone, Args, Serialize, Deserialize)]
pub struct SimArgs {
    /// erd, ideal, lossy or compensated
    #[arg(long, default_value = "erd")]
    pub scenario: String,
    #[arg(long, default_value_t = 200)]
    pub trials: usize,
    #[arg(long, default_value_t = 1)]
    pub seed: u64,
    /// Stream length for scenarios without a cue protocol, seconds
    #[arg(long, default_value_t = 600.0)]
    pub duration: f64,
    #[arg(long, default_value_t = 1028)]
    pub vertices: usize,
    /// Output stream; ground truth goes next to it as .truth.json
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub json: bool,
}

#[derive(Debug, Clone, Args, Serialize, Deserialize)]
pub struct RecordArgs {
    #[command(flatten)]
    pub src: SourceArgs,
    #[arg(long)]
    pub out: PathBuf,
    /// Stop after this many packets
    #[arg(long)]
    pub max_packets: Option<u64>,
    #[arg(long)]
    pub json: bool,
}

#[derive(Debug, Clone, Args, Serialize, Deserialize)]
pub struct ReplayArgs {
    pub file: PathBuf,
    /// Pace by recorded timestamps at this speed; 0 for no pacing
    #[arg(long, default_value_t = 1.0)]
    pub speed: f64,
    /// Write the replayed stream to a file
    #[arg(long, conflicts_with = "serve", required_unless_present = "serve")]
    pub out: Option<PathBuf>,
    /// Listen on HOST:PORT and stream to each connecting client in turn
    #[arg(long, value_name = "HOST:PORT")]
    pub serve: Option<String>,
    /// Clients to serve before exiting
    #[arg(long, default_value_t = 1, requires = "serve")]
    pub clients: usize,
    #[arg(long)]
    pub json: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Method {
    /// Minimum norm, identity prior
    Mn,
    /// Graph-Laplacian smoothness prior
    Loreta,
}

#[derive(Debug, Clone, Args, Serialize, Deserialize)]
pub struct ReconstructArgs {
    /// Pipeline configuration JSON; flags override its fields
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[command(flatten)]
    pub src: SourceArgs,
    /// Comma-separated ROI names
    #[arg(long, value_delimiter = ',')]
    pub rois: Vec<String>,
    #[arg(long, value_enum)]
    pub method: Option<Method>,
    /// LORETA neighbour weight
    #[arg(long)]
    pub smoothness: Option<f64>,
    /// Samples between posterior updates
    #[arg(long)]
    pub hop: Option<usize>,
    /// Samples between hyperparameter adaptations
    #[arg(long)]
    pub adapt_every: Option<usize>,
    /// Trials per class in the trial averages
    #[arg(long)]
    pub max_trials: Option<usize>,
    /// Directory for CSV, SVG and provenance output
    #[arg(long)]
    pub out_dir: Option<PathBuf>,
    /// Publish results to subscribers on HOST:PORT
    #[arg(long, value_name = "HOST:PORT")]
    pub serve: Option<String>,
    #[arg(long)]
    pub json: bool,
}

#[derive(Debug, Clone, Args, Serialize, Deserialize)]
pub struct EpochArgs {
    /// Band-pass before CSP, LOW-HIGH in Hz
    #[arg(long, default_value = "8-32")]
    pub band: String,
    /// Analysis interval relative to the cue, START:END in seconds
    #[arg(long, default_value = "0.75:2")]
    pub interval: String,
    /// Epoch extent around each cue, PRE:POST in seconds
    #[arg(long, default_value = "1:3")]
    pub epoch: String,
}

#[derive(Debug, Clone, Args, Serialize, Deserialize)]
pub struct BciTrainArgs {
    #[command(flatten)]
    pub src: SourceArgs,
    #[command(flatten)]
    pub epochs: EpochArgs,
    /// Filter pairs kept from each end of the CSP spectrum
    #[arg(long, default_value_t = 3)]
    pub csp_m: usize,
    /// lda or qda
    #[arg(long, default_value = "lda")]
    pub classifier: String,
    #[arg(long, default_value_t = 5)]
    pub folds: usize,
    #[arg(long, default_value_t = 10)]
    pub repeats: usize,
    /// Comma-separated training-set sizes for the learning curve
    #[arg(long, value_delimiter = ',')]
    pub train_sizes: Vec<usize>,
    /// Randomly permute class labels before training (chance control)
    #[arg(long)]
    pub shuffle_labels: bool,
    /// Skip cross-validation
    #[arg(long)]
    pub no_cv: bool,
    /// Trained model JSON
    #[arg(long)]
    pub out: PathBuf,
    /// Cross-validation accuracy table
    #[arg(long)]
    pub cv_out: Option<PathBuf>,
    #[arg(long)]
    pub json: bool,
}

#[derive(Debug, Clone, Args, Serialize, Deserialize)]
pub struct BciEvalArgs {
    /// Model JSON written by bci-train
    #[arg(value_name = "MODEL")]
    pub bci_model: PathBuf,
    #[command(flatten)]
    pub src: SourceArgs,
    /// Epoch extent around each cue, PRE:POST in seconds
    #[arg(long, default_value = "1:3")]
    pub epoch: String,
    /// Per-trial predictions CSV
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long)]
    pub json: bool,
}

#[derive(Debug, Clone, Args, Serialize, Deserialize)]
pub struct TimingArgs {
    #[command(flatten)]
    pub src: SourceArgs,
    /// Packets per group when measuring inter-arrival distances
    #[arg(long, default_value_t = 4)]
    pub frame_size: usize,
    /// Nominal rate for the expected distance; the measured mean if unset
    #[arg(long)]
    pub expected_rate: Option<f64>,
    /// Timestamp resolution for the rate interval, seconds
    #[arg(long, default_value_t = 1e-3)]
    pub resolution: f64,
    /// Group distances and running mean as CSV
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long)]
    pub json: bool,
}

#[derive(Debug, Clone, Args)]
pub struct RerunArgs {
    pub provenance: PathBuf,
    /// Write outputs here instead of over the originals
    #[arg(long)]
    pub out_dir: Option<PathBuf>,
    #[arg(long)]
    pub json: bool,
}

#[derive(Debug, Clone, Args, Serialize, Deserialize)]
pub struct ModelExportArgs {
    #[arg(long, default_value_t = 1028)]
    pub vertices: usize,
    /// Comma-separated electrode labels [default: the 14-channel montage]
    #[arg(long, value_delimiter = ',')]
    pub channels: Vec<String>,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub json: bool,
}
