//! `emm`: data generation, training, evaluation and the verification and
//! sweep experiments, all driven by one seed.
//!
//! Exit status is 0 on success, 1 on an operational error (one JSON line on
//! stderr) and 2 when a verification suite finds a failure.

mod commands;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use emm_core::mlp::Task;
use emm_core::synth::PoseKind;

#[derive(Parser, Debug)]
#[command(name = "emm", version, about = "Eight-point pose experiments and attention-form checks")]
pub struct Cli {
    /// Worker threads for parallel sections; results do not depend on it.
    #[arg(long, global = true, default_value_t = 1)]
    pub threads: usize,
    /// Run seed; every stream is derived from it.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Generate a synthetic two-view dataset as JSONL.
    SynthGen(SynthGenArgs),
    /// Train the pose regressor on a dataset.
    Train(TrainArgs),
    /// Evaluate a trained model on a test dataset.
    Eval(EvalArgs),
    /// Monte Carlo chance baseline for a pose distribution.
    Chance(ChanceArgs),
    /// Estimate relative pose from a CSV of normalized correspondences.
    EightPoint(EightPointArgs),
    /// Check the compact-moment identity on random matchings.
    VerifyIdentity(VerifyArgs),
    /// Pose error caused by snapping correspondences to a patch grid.
    QuantizeSweep(QuantizeArgs),
    /// Match-energy share under single and dual softmax.
    AttentionSweep(AttentionArgs),
    /// Shapes and feature count of the essential-matrix module.
    EmmDemo(EmmDemoArgs),
}

#[derive(Args, Debug)]
pub struct SynthGenArgs {
    /// Pose distribution: 3d, 2dl, 2dm or 2ds.
    #[arg(long)]
    pub dist: PoseKind,
    /// Number of accepted instances.
    #[arg(long)]
    pub count: usize,
    /// Output JSONL file.
    #[arg(long)]
    pub out: PathBuf,
    /// Scene configuration JSON (points, center_range, radius_range).
    #[arg(long)]
    pub scene: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct TrainArgs {
    /// rotation or translation.
    #[arg(long)]
    pub task: Task,
    /// Training JSONL from synth-gen. Without it, data is generated from --dist.
    #[arg(long, conflicts_with = "dist")]
    pub data: Option<PathBuf>,
    /// Generate the training set from this distribution.
    #[arg(long, requires = "count")]
    pub dist: Option<PoseKind>,
    /// Training-set size when generating.
    #[arg(long)]
    pub count: Option<usize>,
    /// Network and optimizer configuration JSON.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Override the configured number of epochs.
    #[arg(long)]
    pub epochs: Option<usize>,
    /// Override the configured hidden width.
    #[arg(long)]
    pub width: Option<usize>,
    /// Permute the targets before training (null-model control).
    #[arg(long)]
    pub shuffle_labels: bool,
    /// Output model file.
    #[arg(long)]
    pub out: PathBuf,
    /// Write the per-epoch loss curve as JSON here.
    #[arg(long)]
    pub log: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct EvalArgs {
    /// Model file written by train.
    #[arg(long)]
    pub model: PathBuf,
    /// Test JSONL from synth-gen.
    #[arg(long)]
    pub test: PathBuf,
    /// Threshold in degrees for the percent-within figure.
    #[arg(long, default_value_t = 5.0)]
    pub threshold: f64,
    /// Report JSON path; stdout when absent.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Also write the error CDF as CSV.
    #[arg(long)]
    pub cdf: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct ChanceArgs {
    /// Pose distribution: 3d, 2dl, 2dm or 2ds.
    #[arg(long)]
    pub dist: PoseKind,
    /// rotation or translation.
    #[arg(long)]
    pub task: Task,
    /// Monte Carlo draws (at least 1000).
    #[arg(long, default_value_t = 100_000)]
    pub draws: usize,
    /// Threshold in degrees for the percent-within figure.
    #[arg(long, default_value_t = 5.0)]
    pub threshold: f64,
    /// Report JSON path; stdout when absent.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct EightPointArgs {
    /// CSV with header x1,y1,x2,y2 in normalized camera coordinates.
    #[arg(long)]
    pub input: PathBuf,
    /// Report JSON path; stdout when absent.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct VerifyArgs {
    /// Random matchings per grid size.
    #[arg(long, default_value_t = 250)]
    pub trials: usize,
    /// Comma-separated grid sizes (patches per axis).
    #[arg(long, value_delimiter = ',', default_value = "4,8,16,24")]
    pub grids: Vec<usize>,
    /// Largest accepted relative error.
    #[arg(long, default_value_t = 1e-9)]
    pub tolerance: f64,
    /// Report JSON path; stdout when absent.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct QuantizeArgs {
    /// Comma-separated quantization levels (patches per axis).
    #[arg(long, value_delimiter = ',', default_value = "4,8,16,24,48,96")]
    pub levels: Vec<usize>,
    /// Instances per level.
    #[arg(long, default_value_t = 2000)]
    pub count: usize,
    /// Scene points drawn per instance.
    #[arg(long)]
    pub points: Option<usize>,
    /// Minimum points visible in both views.
    #[arg(long)]
    pub min_visible: Option<usize>,
    /// Reuse one instance set for all levels.
    #[arg(long)]
    pub shared: bool,
    /// Output CSV; run metadata goes to the same path with `.meta.json` appended.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args, Debug)]
pub struct AttentionArgs {
    /// Comma-separated patch counts.
    #[arg(long, value_delimiter = ',', default_value = "16,64,576")]
    pub patches: Vec<usize>,
    /// Logit on match entries.
    #[arg(long, default_value_t = 100.0)]
    pub matched_logit: f64,
    /// Logit everywhere else.
    #[arg(long, default_value_t = 1.0)]
    pub unmatched_logit: f64,
    /// Output CSV.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args, Debug)]
pub struct EmmDemoArgs {
    /// Channels per head.
    #[arg(long, default_value_t = 64)]
    pub head_width: usize,
    /// Attention heads.
    #[arg(long, default_value_t = 3)]
    pub heads: usize,
    /// Patches per image axis.
    #[arg(long, default_value_t = 8)]
    pub grid: usize,
    /// Report JSON path; stdout when absent.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match commands::run(cli) {
        Ok(commands::Outcome::Success) => ExitCode::SUCCESS,
        Ok(commands::Outcome::VerificationFailed) => ExitCode::from(2),
        Err(e) => {
            eprintln!("{}", e.to_json_line());
            ExitCode::from(1)
        }
    }
}
