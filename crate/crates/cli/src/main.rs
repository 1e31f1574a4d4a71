mod commands;
mod config;
mod error;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

/// Align a point-cloud encoder to frozen image/text embeddings, and
/// evaluate it.
///
/// Exit codes: 0 success, 1 usage error, 2 data or validation error,
/// 3 numerical failure.
#[derive(Debug, Parser)]
#[command(name = "trialign", version)]
pub struct Cli {
    /// Seed for every random choice; overrides config seeds.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Threads for batch assembly. Results do not depend on it.
    #[arg(long, global = true, default_value_t = 1)]
    pub workers: usize,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a synthetic primitive-shape dataset with mock embedding tables.
    BuildSynth(BuildSynthArgs),
    /// Sample a point cloud from an OBJ mesh into a UPC1 file.
    SamplePoints(SamplePointsArgs),
    /// Rank each view's captions by CLIP score and export the top-k aggregate.
    RankCaptions(RankCaptionsArgs),
    /// Train the point-cloud encoder.
    Train(TrainArgs),
    /// Zero-shot classification against a label embedding table.
    EvalZeroshot(EvalArgs),
    /// Linear probe or fine-tuning on labeled splits.
    EvalProbe(ProbeArgs),
    /// Export encoder embeddings of a manifest's clouds as a ULP2 table.
    Embed(EmbedArgs),
    /// Finite-difference gradient check of every op and the training loss.
    GradCheck(GradCheckArgs),
    /// Describe UPC1, ULP2, checkpoint, manifest or caption files.
    Info(InfoArgs),
}

#[derive(Debug, Args)]
pub struct BuildSynthArgs {
    /// Output directory.
    #[arg(long)]
    pub out: PathBuf,
    /// Synth spec JSON; flags below override it.
    #[arg(long)]
    pub spec: Option<PathBuf>,
    /// Comma-separated primitive names.
    #[arg(long, value_delimiter = ',')]
    pub categories: Option<Vec<String>>,
    #[arg(long)]
    pub train_per_class: Option<usize>,
    #[arg(long)]
    pub test_per_class: Option<usize>,
    #[arg(long)]
    pub points: Option<usize>,
    #[arg(long)]
    pub views: Option<usize>,
    #[arg(long)]
    pub captions_per_view: Option<usize>,
    #[arg(long)]
    pub embed_dim: Option<usize>,
    #[arg(long)]
    pub sigma_shape: Option<f64>,
    #[arg(long)]
    pub sigma_image: Option<f64>,
    #[arg(long)]
    pub sigma_text: Option<f64>,
    #[arg(long)]
    pub wrong_captions: Option<usize>,
    #[arg(long)]
    pub view_ambiguity: Option<f64>,
    /// Attach per-category vertex colors.
    #[arg(long)]
    pub color: bool,
    /// Also write PGM point-splat renders at this resolution.
    #[arg(long)]
    pub render: Option<usize>,
}

#[derive(Debug, Args)]
pub struct SamplePointsArgs {
    /// Input OBJ mesh.
    #[arg(long)]
    pub mesh: PathBuf,
    #[arg(long, default_value_t = 2048)]
    pub points: usize,
    /// Reduce to this many points with farthest point sampling.
    #[arg(long)]
    pub fps: Option<usize>,
    /// Keep the original coordinates instead of fitting the unit sphere.
    #[arg(long)]
    pub no_normalize: bool,
    /// Also write this many PGM depth renders around the cloud.
    #[arg(long)]
    pub render_views: Option<usize>,
    #[arg(long, default_value_t = 128)]
    pub render_res: usize,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct DataFlags {
    /// Run config JSON; flags override it.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Manifest of the split to read.
    #[arg(long)]
    pub manifest: Option<PathBuf>,
    #[arg(long)]
    pub image: Option<PathBuf>,
    #[arg(long)]
    pub text: Option<PathBuf>,
    /// Output directory.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct RankCaptionsArgs {
    #[command(flatten)]
    pub data: DataFlags,
    /// Caption text file (`shape_id<TAB>view_index<TAB>text`) to annotate the ranking.
    #[arg(long)]
    pub captions: Option<PathBuf>,
    #[arg(long, default_value_t = 1)]
    pub topk: usize,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[command(flatten)]
    pub data: DataFlags,
    #[arg(long)]
    pub steps: Option<u64>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    #[arg(long)]
    pub lr: Option<f64>,
    #[arg(long)]
    pub point_budget: Option<usize>,
    #[arg(long)]
    pub caption_topk: Option<usize>,
    /// Continue from this checkpoint with its stored configuration.
    #[arg(long)]
    pub resume: Option<PathBuf>,
    /// Print a progress line every this many steps (0 disables).
    #[arg(long, default_value_t = 25)]
    pub log_every: u64,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[command(flatten)]
    pub data: DataFlags,
    /// Trained checkpoint.
    #[arg(long)]
    pub checkpoint: PathBuf,
    /// Label embedding table.
    #[arg(long)]
    pub labels: Option<PathBuf>,
    /// Category names, one per line.
    #[arg(long)]
    pub names: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct ProbeArgs {
    #[command(flatten)]
    pub eval: EvalArgs,
    /// Labeled training-split manifest.
    #[arg(long)]
    pub train_manifest: Option<PathBuf>,
    /// `linear_probe` or `finetune`.
    #[arg(long)]
    pub mode: Option<String>,
    #[arg(long)]
    pub steps: Option<u64>,
}

#[derive(Debug, Args)]
pub struct EmbedArgs {
    #[command(flatten)]
    pub data: DataFlags,
    #[arg(long)]
    pub checkpoint: PathBuf,
}

#[derive(Debug, Args)]
pub struct GradCheckArgs {
    /// Also write the per-parameter report as CSV here.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct InfoArgs {
    #[arg(required = true)]
    pub paths: Vec<PathBuf>,
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    match commands::run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.code())
        }
    }
}
