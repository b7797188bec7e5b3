//! `svseg`: supervoxel-based 3D cell segmentation from the command line.
//!
//! Exit codes: 0 success, 2 configuration error, 3 I/O error, 4 pipeline
//! stage error.

mod commands;
mod config;

use std::fmt;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

use config::{LabelList, Triple};

#[derive(Parser, Debug)]
#[command(name = "svseg", version, about = "Supervoxel-based 3D cell segmentation")]
struct Cli {
    /// Plain-text `key = value` file; keys are the long flag names.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Worker threads; results do not depend on it.
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Segment a membrane-stained volume.
    Segment(SegmentArgs),
    /// Generate a synthetic phantom and optionally a labelled patch set.
    Synth(SynthArgs),
    /// Train the patch classifier.
    Train(TrainArgs),
    /// Score a segmentation against ground truth.
    Eval(EvalArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum ClassifierKind {
    None,
    Heuristic,
    Cnn,
}

impl std::str::FromStr for ClassifierKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        <Self as ValueEnum>::from_str(s, true)
    }
}

#[derive(Args, Debug)]
pub struct SegmentArgs {
    #[arg(long)]
    input: Option<PathBuf>,
    #[arg(long)]
    output_dir: Option<PathBuf>,
    /// Minimum cell volume in µm³; overrides --r-min-um.
    #[arg(long)]
    v_min_um3: Option<f64>,
    /// Maximum hypothesis volume in µm³.
    #[arg(long)]
    v_max_um3: Option<f64>,
    /// Smallest cell radius in µm, used to derive the minimum volume.
    #[arg(long)]
    r_min_um: Option<f64>,
    /// Gaussian sigma in voxels: one value or `x,y,z`.
    #[arg(long)]
    sigma: Option<Triple<f64>>,
    /// Largest closing radius in voxels.
    #[arg(long)]
    r_cl_max: Option<usize>,
    #[arg(long, value_enum)]
    classifier: Option<ClassifierKind>,
    /// Trained model file, required with `--classifier cnn`.
    #[arg(long)]
    model: Option<PathBuf>,
    /// Accepted for config compatibility; segmentation uses no randomness.
    #[arg(long)]
    seed: Option<u64>,
    /// Also write the preprocessed, supervoxel and fused volumes.
    #[arg(long)]
    dump_stages: bool,
    #[arg(long)]
    resume_preprocessed: Option<PathBuf>,
    #[arg(long)]
    resume_supervoxels: Option<PathBuf>,
    #[arg(long)]
    resume_forest: Option<PathBuf>,
    /// Ground truth to score every stage against.
    #[arg(long)]
    truth: Option<PathBuf>,
    /// Truth labels excluded from scoring.
    #[arg(long)]
    background: Option<LabelList>,
}

#[derive(Args, Debug)]
pub struct SynthArgs {
    #[arg(long)]
    output_dir: Option<PathBuf>,
    /// Grid size: one value or `x,y,z`.
    #[arg(long)]
    dims: Option<Triple<usize>>,
    /// Voxel spacing in µm: one value or `x,y,z`.
    #[arg(long)]
    spacing: Option<Triple<f64>>,
    #[arg(long)]
    cells: Option<usize>,
    #[arg(long)]
    membrane_width: Option<usize>,
    #[arg(long)]
    membrane_intensity: Option<f32>,
    #[arg(long)]
    interior_intensity: Option<f32>,
    #[arg(long)]
    attenuation: Option<f64>,
    #[arg(long)]
    noise_sigma: Option<f64>,
    #[arg(long)]
    blur_sigma: Option<f64>,
    #[arg(long)]
    seed: Option<u64>,
    /// Also write a patch dataset with `under,correct,over` patches per class.
    #[arg(long)]
    patches: Option<Triple<usize>>,
}

#[derive(Args, Debug)]
pub struct TrainArgs {
    /// Directory holding `labels.txt` and the patch volumes.
    #[arg(long)]
    dataset: Option<PathBuf>,
    /// Model file; the loss trace goes to `<output>.loss.txt`.
    #[arg(long)]
    output: Option<PathBuf>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    batch_size: Option<usize>,
    #[arg(long)]
    learning_rate: Option<f64>,
    /// Dropout keep probability.
    #[arg(long)]
    keep_prob: Option<f64>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    conv1: Option<usize>,
    #[arg(long)]
    conv2: Option<usize>,
    #[arg(long)]
    fc: Option<usize>,
    /// Zero the voxels outside the hypothesis before classification.
    #[arg(long)]
    masked_input: bool,
}

#[derive(Args, Debug)]
pub struct EvalArgs {
    #[arg(long)]
    pred: Option<PathBuf>,
    #[arg(long)]
    truth: Option<PathBuf>,
    #[arg(long)]
    background: Option<LabelList>,
    /// Label volume assigning each voxel a layer id (0 = none).
    #[arg(long)]
    layers: Option<PathBuf>,
    /// Row name in the output.
    #[arg(long)]
    name: Option<String>,
    /// Print JSON lines instead of a table.
    #[arg(long)]
    json: bool,
}

/// A failed run: the stage it failed in and the exit code to report.
#[derive(Debug)]
pub struct Failure {
    pub code: u8,
    pub stage: String,
    pub message: String,
}

impl Failure {
    pub fn config(message: impl Into<String>) -> Self {
        Failure {
            code: 2,
            stage: "config".into(),
            message: message.into(),
        }
    }

    pub fn io(message: impl Into<String>) -> Self {
        Failure {
            code: 3,
            stage: "io".into(),
            message: message.into(),
        }
    }

    /// Sorts a library error into config, I/O or stage failures.
    pub fn from_core(stage: &str, e: svseg::Error) -> Self {
        use svseg::Error as E;
        let message = e.to_string();
        match e {
            E::Io { .. } | E::Format { .. } | E::Truncated { .. } | E::Unsupported(_) => Failure::io(message),
            E::Param(_) => Failure::config(message),
            _ => Failure {
                code: 4,
                stage: stage.into(),
                message,
            },
        }
    }
}

impl fmt::Display for Failure {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "stage {}: {}", self.stage, self.message)
    }
}

fn run(cli: Cli) -> Result<(), Failure> {
    let cfg = config::ConfigFile::load(cli.config.as_deref())?;
    let threads = cfg.pick("threads", cli.threads)?;
    if let Some(n) = threads {
        if n == 0 {
            return Err(Failure::config("--threads must be at least 1"));
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| Failure::config(format!("cannot size the thread pool: {e}")))?;
    }
    match cli.command {
        Command::Segment(a) => commands::segment(a, &cfg),
        Command::Synth(a) => commands::synth(a, &cfg),
        Command::Train(a) => commands::train(a, &cfg),
        Command::Eval(a) => commands::eval(a, &cfg),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {f}");
            ExitCode::from(f.code)
        }
    }
}
