use std::path::PathBuf;
use std::str::FromStr;

use clap::{Args, Parser, Subcommand, ValueEnum};

#[derive(Debug, Parser)]
#[command(name = "cpcluster", version, about = "Confidence propagation clustering and detection post-processing")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Post-process a COCO results file with one method.
    Cluster(ClusterArgs),
    /// Evaluate a COCO results file against ground truth.
    Eval(EvalArgs),
    /// Run several methods on raw detections and compare their metrics.
    Compare(CompareArgs),
    /// Generate a seeded synthetic corpus.
    Synth(SynthArgs),
    /// Time the methods on a dense synthetic workload.
    Bench(BenchArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum MethodName {
    Cp,
    Nms,
    SoftNms,
    SnmsWfa,
}

impl MethodName {
    pub fn as_str(self) -> &'static str {
        match self {
            MethodName::Cp => "cp",
            MethodName::Nms => "nms",
            MethodName::SoftNms => "soft-nms",
            MethodName::SnmsWfa => "snms-wfa",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum SoftModeArg {
    Linear,
    Gaussian,
}

/// Worker count: a positive integer or `auto`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Threads {
    Auto,
    Count(usize),
}

impl Threads {
    /// 0 asks rayon for its default.
    pub fn get(self) -> usize {
        match self {
            Threads::Auto => 0,
            Threads::Count(n) => n,
        }
    }
}

impl FromStr for Threads {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        if s == "auto" {
            return Ok(Threads::Auto);
        }
        match s.parse::<usize>() {
            Ok(n) if n > 0 => Ok(Threads::Count(n)),
            _ => Err(format!("expected a positive integer or 'auto', got '{s}'")),
        }
    }
}

/// Inclusive `A..B` range.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Span(pub usize, pub usize);

impl FromStr for Span {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let parse = |v: &str| v.trim().parse::<usize>().map_err(|_| format!("expected A..B, got '{s}'"));
        match s.split_once("..") {
            Some((a, b)) => Ok(Span(parse(a)?, parse(b)?)),
            None => {
                let v = parse(s)?;
                Ok(Span(v, v))
            }
        }
    }
}

impl std::fmt::Display for Span {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}..{}", self.0, self.1)
    }
}

#[derive(Debug, Clone, Args)]
pub struct MethodFlags {
    /// Initial IOU threshold (theta0); also the NMS / Soft-NMS threshold.
    #[arg(long, default_value_t = 0.6)]
    pub iou_thresh: f64,
    /// Message passing iterations.
    #[arg(long, default_value_t = 2)]
    pub iterations: usize,
    /// Threshold increment per iteration.
    #[arg(long, default_value_t = 0.2)]
    pub lambda: f64,
    /// IOU threshold for weaker friends.
    #[arg(long, default_value_t = 0.8)]
    pub theta_n: f64,
    /// Maximum times one box may suppress another.
    #[arg(long, default_value_t = 2)]
    pub zeta: u32,
    /// Per-iteration alpha schedule. When omitted with a non-default
    /// iteration count, 1.0 followed by zeros is used.
    #[arg(long, value_delimiter = ',', default_value = "1.0,0.0")]
    pub alpha: Vec<f64>,
    /// Boxes scoring below this are dropped.
    #[arg(long, default_value_t = 0.001)]
    pub min_score: f64,
    /// Let boxes of different classes interact.
    #[arg(long)]
    pub class_agnostic: bool,
    /// Worker threads (n or auto).
    #[arg(long, default_value = "auto")]
    pub threads: Threads,
    /// Gaussian Soft-NMS sigma.
    #[arg(long, default_value_t = 0.5)]
    pub sigma: f64,
    /// Soft-NMS rescoring rule.
    #[arg(long, value_enum, default_value_t = SoftModeArg::Linear)]
    pub soft_mode: SoftModeArg,
}

#[derive(Debug, Args)]
pub struct ClusterArgs {
    /// COCO results file with raw detections.
    #[arg(long)]
    pub input: PathBuf,
    #[arg(long, value_enum, default_value_t = MethodName::Cp)]
    pub method: MethodName,
    /// Where to write the processed detections.
    #[arg(long)]
    pub output: PathBuf,
    /// Skip invalid records instead of failing.
    #[arg(long)]
    pub lenient: bool,
    #[command(flatten)]
    pub flags: MethodFlags,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    /// COCO results file to score
    #[arg(long)]
    pub dets: PathBuf,
    /// COCO ground-truth file
    #[arg(long)]
    pub gt: PathBuf,
    /// Optional machine-readable report.
    #[arg(long)]
    pub report: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct CompareArgs {
    /// COCO results file with raw detections
    #[arg(long)]
    pub dets: PathBuf,
    /// COCO ground-truth file
    #[arg(long)]
    pub gt: PathBuf,
    /// Methods to compare, comma separated.
    #[arg(long, value_enum, value_delimiter = ',', default_value = "nms,soft-nms,snms-wfa,cp")]
    pub methods: Vec<MethodName>,
    /// Optional machine-readable report.
    #[arg(long)]
    pub report: Option<PathBuf>,
    #[command(flatten)]
    pub flags: MethodFlags,
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    /// Number of images
    #[arg(long, default_value_t = 200)]
    pub images: usize,
    /// Objects per image, inclusive range.
    #[arg(long, default_value = "1..6")]
    pub objects: Span,
    /// Candidates per object, inclusive range.
    #[arg(long, default_value = "4..10")]
    pub redundancy: Span,
    /// Corner jitter standard deviation in pixels.
    #[arg(long, default_value_t = 4.0)]
    pub noise: f64,
    /// Probability that a redundant candidate outscores the best one.
    #[arg(long, default_value_t = 0.3)]
    pub swap_prob: f64,
    /// Standard deviation of additive score noise.
    #[arg(long, default_value_t = 0.05)]
    pub score_noise: f64,
    /// Number of object classes
    #[arg(long, default_value_t = 3)]
    pub classes: u32,
    /// RNG seed
    #[arg(long, default_value_t = 42)]
    pub seed: u64,
    /// Where to write the raw detections
    #[arg(long)]
    pub out_dets: PathBuf,
    /// Where to write the ground truth
    #[arg(long)]
    pub out_gt: PathBuf,
}

#[derive(Debug, Args)]
pub struct BenchArgs {
    /// Boxes in the workload.
    #[arg(long, default_value_t = 1000)]
    pub boxes: usize,
    /// Overlap clusters the boxes are spread over.
    #[arg(long, default_value_t = 100)]
    pub clusters: usize,
    /// Thread counts to time, comma separated.
    #[arg(long, value_delimiter = ',', default_value = "1")]
    pub threads: Vec<Threads>,
    /// CP iteration counts to time, comma separated.
    #[arg(long, value_delimiter = ',', default_value = "1,2,3")]
    pub iterations: Vec<usize>,
    /// Timed repeats per cell (median reported, after one warm-up).
    #[arg(long, default_value_t = 5)]
    pub repeat: usize,
    /// RNG seed for the workload
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Optional JSON report of the grid.
    #[arg(long)]
    pub report: Option<PathBuf>,
}
