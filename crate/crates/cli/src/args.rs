use std::path::PathBuf;

use clap::{Args as ClapArgs, Parser, Subcommand, ValueEnum};

#[derive(Debug, Parser)]
#[command(name = "duetgen", version, about = "Clean duet pose data, train the duet model, generate and evaluate partners")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Repair detection files and write cleaned sequences.
    Preprocess(PreprocessArgs),
    /// Train a model and write a checkpoint and per-epoch report.
    Train(TrainArgs),
    /// Generate a partner for a leader sequence, or a whole duet.
    Generate(GenerateArgs),
    /// Horizon MSE of partner rollouts on test sequences.
    Evaluate(EvaluateArgs),
    /// Write a synthetic duet, optionally as corrupted detections.
    Synth(SynthArgs),
}

#[derive(Debug, ClapArgs)]
pub struct PreprocessArgs {
    /// Detection file(s), one JSON object per frame.
    #[arg(long = "in", required = true, num_args = 1..)]
    pub inputs: Vec<PathBuf>,
    /// Output file for one input; output directory for several.
    #[arg(long)]
    pub out: PathBuf,
    /// Fraction of low-frequency DCT coefficients kept per channel.
    #[arg(long, default_value_t = 0.25)]
    pub dct_keep: f64,
    /// Joints per detected person.
    #[arg(long, default_value_t = 29)]
    pub joints: usize,
    #[arg(long, default_value_t = 30.0)]
    pub fps: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum ModelSize {
    /// d_model 64, 8 heads, latent 64.
    Paper,
    /// d_model 16, 4 heads, latent 8.
    Desk,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum StyleArg {
    Mirror,
    Orbit,
    LeadFollow,
}

#[derive(Debug, ClapArgs)]
pub struct TrainArgs {
    /// Cleaned sequence files to train on.
    #[arg(long, num_args = 1.., required_unless_present = "synthetic")]
    pub data: Vec<PathBuf>,
    /// Train on generated duets instead of files.
    #[arg(long, conflicts_with = "data")]
    pub synthetic: bool,
    #[arg(long, value_enum, default_value_t = StyleArg::LeadFollow)]
    pub synthetic_style: StyleArg,
    #[arg(long, default_value_t = 4)]
    pub synthetic_count: usize,
    #[arg(long, default_value_t = 320)]
    pub synthetic_frames: usize,
    /// Joints per dancer for synthetic data.
    #[arg(long, default_value_t = 4)]
    pub synthetic_joints: usize,
    /// TOML file with `[train]` and `[model]` tables; flags override it.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long, value_enum, default_value_t = ModelSize::Desk)]
    pub model: ModelSize,
    #[arg(long, default_value = "model.ckpt")]
    pub checkpoint: PathBuf,
    #[arg(long, default_value = "train_report.csv")]
    pub report: PathBuf,
    /// Also write `<checkpoint>.epoch<N>` after every epoch.
    #[arg(long)]
    pub save_every_epoch: bool,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Probability of a FOCUSED (dancer VAEs only) step.
    #[arg(long)]
    pub p: Option<f64>,
    #[arg(long)]
    pub alpha: Option<f64>,
    #[arg(long)]
    pub beta: Option<f64>,
    #[arg(long)]
    pub eta: Option<f64>,
    #[arg(long)]
    pub lr: Option<f64>,
    #[arg(long)]
    pub t_max: Option<usize>,
    /// Window length T.
    #[arg(long)]
    pub seq_len: Option<usize>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    #[arg(long)]
    pub noise_sigma: Option<f64>,
    /// Velocity-loss frame offset.
    #[arg(long)]
    pub frames: Option<usize>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum GenerateMode {
    Partner,
    Duet,
}

#[derive(Debug, ClapArgs)]
pub struct GenerateArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[arg(long, value_enum, default_value_t = GenerateMode::Partner)]
    pub mode: GenerateMode,
    /// Cleaned sequence holding the leader; the other dancer supplies the context.
    #[arg(long, required_if_eq("mode", "partner"))]
    pub leader: Option<PathBuf>,
    /// Which dancer of the leader file leads (the other is generated).
    #[arg(long, default_value_t = 1, value_parser = clap::value_parser!(u8).range(1..=2))]
    pub leader_dancer: u8,
    /// Context frames copied from the generated dancer's recording.
    #[arg(long, default_value_t = 16)]
    pub context: usize,
    /// Frames to generate; the leader is cut to this length.
    #[arg(long, default_value_t = 64)]
    pub length: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value = "generated.seq")]
    pub out: PathBuf,
    /// Animation export (`frame,dancer,joint,x,y,z`).
    #[arg(long, default_value = "generated.csv")]
    pub csv: PathBuf,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum OracleArg {
    /// Returns the ground truth.
    Echo,
}

#[derive(Debug, ClapArgs)]
pub struct EvaluateArgs {
    #[arg(long, required_unless_present = "oracle")]
    pub checkpoint: Option<PathBuf>,
    /// Cleaned sequence files to draw test windows from.
    #[arg(long, required = true, num_args = 1..)]
    pub test: Vec<PathBuf>,
    #[arg(long, value_delimiter = ',', default_values_t = [16, 32, 48, 64])]
    pub horizons: Vec<usize>,
    #[arg(long, default_value_t = 10)]
    pub sequences: usize,
    /// Context frames; defaults to min(16, smallest horizon / 2).
    #[arg(long)]
    pub context: Option<usize>,
    /// Window length; defaults to the largest horizon.
    #[arg(long)]
    pub seq_len: Option<usize>,
    #[arg(long, default_value_t = 32)]
    pub stride: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Score a stub predictor instead of a checkpoint.
    #[arg(long, value_enum)]
    pub oracle: Option<OracleArg>,
    #[arg(long, default_value = "horizon_report.csv")]
    pub out: PathBuf,
}

#[derive(Debug, ClapArgs)]
pub struct SynthArgs {
    #[arg(long, value_enum, default_value_t = StyleArg::LeadFollow)]
    pub style: StyleArg,
    #[arg(long, default_value_t = 320)]
    pub frames: usize,
    #[arg(long, default_value_t = 4)]
    pub joints: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Cleaned sequence output.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Detection-format output with the corruptions below applied.
    #[arg(long)]
    pub detections: Option<PathBuf>,
    #[arg(long, value_delimiter = ',')]
    pub swap: Vec<usize>,
    #[arg(long, value_delimiter = ',')]
    pub drop: Vec<usize>,
    #[arg(long, value_delimiter = ',')]
    pub ghost: Vec<usize>,
    #[arg(long, default_value_t = 0.05)]
    pub ghost_score: f64,
    #[arg(long, default_value_t = 0.0)]
    pub jitter: f64,
}
