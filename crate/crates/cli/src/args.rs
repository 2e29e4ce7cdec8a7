use std::path::PathBuf;

use clap::{ArgAction, Args, Parser, Subcommand, ValueEnum};
use kavguard::{Orientation, Top2Source};

#[derive(Debug, Parser)]
#[command(
    name = "kavguard",
    version,
    about = "Uncertainty layer over network activation vectors"
)]
pub struct Cli {
    /// Print extra diagnostics to stderr (repeat for more).
    #[arg(short, long, global = true, action = ArgAction::Count)]
    pub verbose: u8,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Fit per-class diagonal Gaussians from a labeled KAV file.
    Fit(FitArgs),
    /// Combine accumulator files from sharded `fit` runs into one stats file.
    MergeStats(MergeArgs),
    /// Label each record certain, uncertain or outlier.
    Decide(DecideArgs),
    /// Pairwise Bhattacharyya distances between fitted classes.
    Overlap(OverlapArgs),
    /// Evaluation metrics over score and verdict files.
    #[command(subcommand)]
    Eval(EvalCommand),
    /// Retrieve stored nearest training records of a class.
    Members(MembersArgs),
}

#[derive(Debug, Args)]
pub struct KavInput {
    /// KAV file, binary or CSV (`label,v0,v1,...`).
    #[arg(long)]
    pub input: PathBuf,
    /// Number of classes, required when the input is CSV.
    #[arg(long)]
    pub num_classes: Option<u32>,
}

#[derive(Debug, Args)]
pub struct FitArgs {
    #[command(flatten)]
    pub input: KavInput,
    /// Output stats JSON.
    #[arg(long)]
    pub output: PathBuf,
    /// Minimum per-dimension variance.
    #[arg(long, default_value = "1e-12")]
    pub variance_floor: f64,
    /// Members kept per class in the member store.
    #[arg(long, default_value_t = kavguard::members::DEFAULT_MEMBERS)]
    pub members: usize,
    /// Write the member store JSON here.
    #[arg(long)]
    pub members_out: Option<PathBuf>,
    /// Write the raw moment accumulators here (input to `merge-stats`).
    #[arg(long)]
    pub accumulators_out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct MergeArgs {
    /// Accumulator files, merged in the order given.
    #[arg(long = "input", required = true, num_args = 1..)]
    pub inputs: Vec<PathBuf>,
    #[arg(long)]
    pub output: PathBuf,
    #[arg(long, default_value = "1e-12")]
    pub variance_floor: f64,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum OrientationArg {
    /// Outlier when d_joint² <= df + sqrt(2 df).
    Below,
    /// Outlier when d_joint² > df + sqrt(2 df).
    Above,
}

impl From<OrientationArg> for Orientation {
    fn from(o: OrientationArg) -> Self {
        match o {
            OrientationArg::Below => Orientation::AsWrittenBelow,
            OrientationArg::Above => Orientation::ProseAbove,
        }
    }
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum Top2Arg {
    /// Logits when present, distances otherwise.
    Auto,
    Logits,
    Distance,
}

impl From<Top2Arg> for Top2Source {
    fn from(t: Top2Arg) -> Self {
        match t {
            Top2Arg::Auto => Top2Source::Auto,
            Top2Arg::Logits => Top2Source::Logits,
            Top2Arg::Distance => Top2Source::MinDistance,
        }
    }
}

#[derive(Debug, Args)]
pub struct DecideArgs {
    #[arg(long)]
    pub stats: PathBuf,
    #[command(flatten)]
    pub input: KavInput,
    /// Relative closeness of the top-2 distances under which a point is uncertain.
    #[arg(long, default_value_t = kavguard::decision::DEFAULT_K_PERCENT)]
    pub k_percent: f64,
    #[arg(long, value_enum, default_value_t = OrientationArg::Below)]
    pub orientation: OrientationArg,
    #[arg(long, value_enum, default_value_t = Top2Arg::Auto)]
    pub top2: Top2Arg,
    /// Output verdict CSV.
    #[arg(long)]
    pub output: PathBuf,
}

#[derive(Debug, Args)]
pub struct OverlapArgs {
    #[arg(long)]
    pub stats: PathBuf,
    /// Output matrix CSV.
    #[arg(long)]
    pub output: PathBuf,
}

#[derive(Debug, Subcommand)]
pub enum EvalCommand {
    /// AUROC of positive vs negative score files (`id,score,label`).
    Auroc(AurocArgs),
    /// Fraction of verdicts labeled outlier.
    Rate(RateArgs),
    /// Top-1 accuracy of verdicts against the labels of a KAV file.
    Accuracy(AccuracyArgs),
    /// Mean confidence and AUROC per noise level.
    Sweep(SweepArgs),
}

#[derive(Debug, Args)]
pub struct AurocArgs {
    /// Positive (in-distribution) scores; every row counts.
    #[arg(long, requires = "neg", conflicts_with = "scores")]
    pub pos: Option<PathBuf>,
    /// Negative scores; every row counts.
    #[arg(long, requires = "pos")]
    pub neg: Option<PathBuf>,
    /// One score file split by its label column.
    #[arg(long, required_unless_present = "pos")]
    pub scores: Option<PathBuf>,
    /// JSON report `{auroc, curve}`.
    #[arg(long)]
    pub output: Option<PathBuf>,
    /// Curve points as CSV `fpr,tpr`.
    #[arg(long)]
    pub curve_csv: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct RateArgs {
    #[arg(long)]
    pub verdicts: PathBuf,
}

#[derive(Debug, Args)]
pub struct AccuracyArgs {
    #[arg(long)]
    pub verdicts: PathBuf,
    /// Labeled KAV file aligned with the verdicts.
    #[command(flatten)]
    pub truth: KavInput,
}

#[derive(Debug, Args)]
pub struct SweepArgs {
    /// `NOISE_LEVEL=SCORES.csv`; label 1 rows are the clean reference, label 0 the corrupted set.
    #[arg(long = "level", required = true, num_args = 1..)]
    pub levels: Vec<String>,
    /// Output CSV `noise_level,mean_confidence,auc`.
    #[arg(long)]
    pub output: PathBuf,
}

#[derive(Debug, Args)]
pub struct MembersArgs {
    /// Member store JSON written by `fit --members-out`.
    #[arg(long)]
    pub members: PathBuf,
    #[arg(long = "class")]
    pub class_id: u32,
    /// How many members to return.
    #[arg(short = 'm', long = "count")]
    pub m: usize,
}
