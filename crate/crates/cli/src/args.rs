use std::path::PathBuf;
use std::str::FromStr;

use clap::{Args, Parser, Subcommand, ValueEnum};
use naop_core::descriptors::DescriptorVariant;
use serde::Serialize;

#[derive(Debug, Parser)]
#[command(name = "naop", version, about = "Next-active-object prediction from egocentric object tracks")]
pub struct Cli {
    /// JSON object of default flag values, keyed by long flag name; flags
    /// given on the command line take precedence
    #[arg(long, global = true, value_name = "FILE")]
    pub config: Option<PathBuf>,

    /// Worker threads; results do not depend on this
    #[arg(long, global = true, env = "NAOP_THREADS")]
    pub threads: Option<usize>,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a synthetic track file and optionally simulated detections
    Gen(GenArgs),
    /// Associate detections into tracks
    Track(TrackArgs),
    /// Train a random-forest model on labeled tracks
    Train(TrainArgs),
    /// Score tracks (offline) or detections (online) frame by frame
    Predict(PredictArgs),
    /// Evaluate predictions or run a cross-validation protocol
    Eval(EvalArgs),
    /// Cross-validated AP table over window lengths, pyramid levels and descriptors
    Sweep(SweepArgs),
    /// Draw precision-recall curves from report files
    Plot(PlotArgs),
    /// Re-run the command recorded in a run manifest
    Replay(ReplayArgs),
}

/// Frame dimensions written as `WIDTHxHEIGHT`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct FrameSizeArg {
    pub width: u32,
    pub height: u32,
}

impl FromStr for FrameSizeArg {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        let (w, h) = s.split_once(['x', 'X']).ok_or_else(|| format!("expected WIDTHxHEIGHT, got `{s}`"))?;
        let parse = |v: &str| v.trim().parse::<u32>().map_err(|e| format!("`{v}`: {e}"));
        let (width, height) = (parse(w)?, parse(h)?);
        if width == 0 || height == 0 {
            return Err("frame dimensions must be positive".into());
        }
        Ok(Self { width, height })
    }
}

#[derive(Debug, Args, Serialize)]
pub struct GenArgs {
    /// Output track file (JSON Lines)
    #[arg(long)]
    pub out: PathBuf,
    /// Also write simulated detections (CSV) here
    #[arg(long)]
    pub detections: Option<PathBuf>,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Number of subjects [default: 5]
    #[arg(long)]
    pub subjects: Option<usize>,
    /// [default: 4]
    #[arg(long)]
    pub videos_per_subject: Option<usize>,
    /// [default: 20]
    #[arg(long)]
    pub tracks_per_video: Option<usize>,
    /// Share of tracks that become active [default: 0.3]
    #[arg(long)]
    pub active_fraction: Option<f64>,
    /// Approach length before activation, frames [default: 30]
    #[arg(long)]
    pub h_signal: Option<usize>,
    /// Per-frame center jitter, normalized units [default: 0.002]
    #[arg(long)]
    pub center_sigma: Option<f64>,
    /// Per-frame log-scale jitter [default: 0.01]
    #[arg(long)]
    pub scale_sigma: Option<f64>,
    /// Area ratio gained over the approach [default: 3]
    #[arg(long)]
    pub scale_growth: Option<f64>,
    /// Fraction of the distance to the frame center covered by the approach [default: 0.6]
    #[arg(long)]
    pub center_pull: Option<f64>,
    /// Approaching objects only grow (same as --center-pull 0)
    #[arg(long)]
    pub scale_only: bool,
    /// Comma-separated object classes [default: mug,tap,pan,fridge,tv]
    #[arg(long, value_delimiter = ',')]
    pub classes: Option<Vec<String>>,
    #[arg(long, default_value = "1280x720")]
    pub frame_size: FrameSizeArg,
    /// Detection corner noise, pixels
    #[arg(long, default_value_t = 0.0)]
    pub det_sigma: f64,
    /// Mean spurious detections per frame
    #[arg(long, default_value_t = 0.0)]
    pub fp_rate: f64,
    /// Probability of dropping a true detection
    #[arg(long, default_value_t = 0.0)]
    pub fn_rate: f64,
}

#[derive(Debug, Args, Serialize)]
pub struct TrackerArgs {
    /// Minimum IoU to accept a detection-track match [default: 0.3]
    #[arg(long)]
    pub iou_threshold: Option<f64>,
    /// Frames a track survives without a match [default: 5]
    #[arg(long)]
    pub max_age: Option<u32>,
    /// Matches before a track is reported [default: 1]
    #[arg(long)]
    pub min_hits: Option<u32>,
    /// Detections scoring below this are ignored [default: 0.8]
    #[arg(long)]
    pub det_score_min: Option<f64>,
    /// Allow matches across object classes
    #[arg(long)]
    pub no_class_gate: bool,
}

#[derive(Debug, Args, Serialize)]
pub struct TrackArgs {
    /// Input detections (CSV)
    #[arg(long)]
    pub detections: PathBuf,
    /// Output track file (JSON Lines)
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value = "1280x720")]
    pub frame_size: FrameSizeArg,
    #[command(flatten)]
    pub tracker: TrackerArgs,
}

/// How histories are encoded: a window of `h` boxes or a temporal pyramid.
#[derive(Debug, Args, Serialize)]
pub struct EncodingArgs {
    /// Trajectory length in frames [default: 30]
    #[arg(long)]
    pub h: Option<usize>,
    /// Temporal-pyramid levels over the whole observed history (instead of --h)
    #[arg(long, conflicts_with = "h")]
    pub levels: Option<u32>,
    /// Descriptor: full, relative, absolute, absolute-diff, absolute-scale [default: full]
    #[arg(long)]
    pub variant: Option<DescriptorVariant>,
}

#[derive(Debug, Args, Serialize)]
pub struct ForestArgs {
    #[arg(long, default_value_t = 25)]
    pub n_trees: usize,
    /// Depth limit (unbounded when omitted)
    #[arg(long)]
    pub max_depth: Option<usize>,
    /// Features tried per split [default: ceil(sqrt(d))]
    #[arg(long)]
    pub features_per_split: Option<usize>,
}

#[derive(Debug, Args, Serialize)]
pub struct TrainArgs {
    /// Labeled track file (JSON Lines)
    #[arg(long)]
    pub tracks: PathBuf,
    /// Output model file
    #[arg(long)]
    pub out: PathBuf,
    #[command(flatten)]
    pub encoding: EncodingArgs,
    #[command(flatten)]
    pub forest: ForestArgs,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum MethodKind {
    /// Random forest over trajectory descriptors
    Forest,
    /// Threshold on summed center displacement
    Motion,
    /// Detection score weighted by closeness to the frame center
    CenterBias,
    /// Uniform random score
    Random,
}

#[derive(Debug, Args, Serialize)]
pub struct PredictArgs {
    /// Score stored tracks (offline)
    #[arg(long, required_unless_present = "detections", conflicts_with = "detections")]
    pub tracks: Option<PathBuf>,
    /// Track detections and score them as they arrive (online)
    #[arg(long)]
    pub detections: Option<PathBuf>,
    /// Trained model file (required for the forest method)
    #[arg(long)]
    pub model: Option<PathBuf>,
    #[arg(long, value_enum, default_value_t = MethodKind::Forest)]
    pub method: MethodKind,
    #[command(flatten)]
    pub encoding: EncodingArgs,
    /// Output predictions (CSV)
    #[arg(long)]
    pub out: PathBuf,
    /// Frame size of the detection stream (online mode)
    #[arg(long, default_value = "1280x720")]
    pub frame_size: FrameSizeArg,
    #[command(flatten)]
    pub tracker: TrackerArgs,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum EvalMode {
    /// Detection-level AP of one set of predictions
    Standard,
    /// Leave one person out
    Lopo,
    /// Leave one object class out
    Looo,
    /// Share of active objects still predicted as next-active, per threshold
    FireRate,
    /// AP as a function of frames before activation
    Time,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum Granularity {
    /// Score labeled trajectories
    Trajectory,
    /// Score every frame and match against annotations
    Detection,
}

#[derive(Debug, Args, Serialize)]
pub struct EvalArgs {
    #[arg(long, value_enum, default_value_t = EvalMode::Standard)]
    pub mode: EvalMode,
    /// Ground-truth track file (JSON Lines)
    #[arg(long)]
    pub tracks: PathBuf,
    /// Predictions to evaluate (standard and fire-rate modes)
    #[arg(long, conflicts_with = "model")]
    pub predictions: Option<PathBuf>,
    /// Model used to score the tracks (standard and fire-rate modes)
    #[arg(long)]
    pub model: Option<PathBuf>,
    /// Method trained inside cross-validation, or used when no model is given
    #[arg(long, value_enum, default_value_t = MethodKind::Forest)]
    pub method: MethodKind,
    #[command(flatten)]
    pub encoding: EncodingArgs,
    #[command(flatten)]
    pub forest: ForestArgs,
    /// Evaluation unit for lopo mode
    #[arg(long, value_enum, default_value_t = Granularity::Trajectory)]
    pub granularity: Granularity,
    /// Comma-separated frame offsets before activation (time mode)
    #[arg(long, value_delimiter = ',', default_value = "0,10,20,30,40,50,60,70,80,90,100")]
    pub offsets: Vec<usize>,
    /// Comma-separated confidence thresholds (fire-rate mode)
    #[arg(long, value_delimiter = ',', default_value = "0.5,0.8,0.9")]
    pub thresholds: Vec<f64>,
    /// Restrict looo mode to one object class
    #[arg(long)]
    pub class: Option<String>,
    #[arg(long, default_value_t = 0.5)]
    pub iou_min: f64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Output report (JSON); CSV tables are written next to it
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args, Serialize)]
pub struct SweepArgs {
    /// Labeled track file (JSON Lines)
    #[arg(long)]
    pub tracks: PathBuf,
    /// Comma-separated window lengths
    #[arg(long, value_delimiter = ',', default_value = "15,30,45,60")]
    pub h: Vec<usize>,
    /// Comma-separated temporal-pyramid levels
    #[arg(long, value_delimiter = ',')]
    pub levels: Vec<u32>,
    /// Comma-separated descriptors
    #[arg(long, value_delimiter = ',', default_value = "full,relative,absolute,absolute-diff,absolute-scale")]
    pub variants: Vec<DescriptorVariant>,
    #[command(flatten)]
    pub forest: ForestArgs,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Output table (CSV); the JSON form is written next to it
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args, Serialize)]
pub struct PlotArgs {
    /// Comma-separated report files written by `eval`
    #[arg(long, value_delimiter = ',', required = true)]
    pub reports: Vec<PathBuf>,
    /// Output SVG; the curve points are written next to it as CSV
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args, Serialize)]
pub struct ReplayArgs {
    /// Manifest written by an earlier run
    pub manifest: PathBuf,
}
