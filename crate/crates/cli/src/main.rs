//! `zxyseg` — batch front end: phantom generation, preprocessing, training,
//! inference, evaluation, overlays and whole experiments.
//!
//! Every command exits with status 0 on success. Failures print one JSON
//! object `{"error": <kind>, "message": <text>}` on stderr and exit with 1.

mod commands;
mod overlay;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};

/// Environment variable naming the compute device; only `cpu` exists.
const DEVICE_VAR: &str = "ZXYSEG_DEVICE";

#[derive(Parser)]
#[command(name = "zxyseg", version, about = "Coarse-to-fine 3D tooth and root-canal segmentation")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

/// Experiment configuration shared by the commands that need one.
#[derive(clap::Args, Clone, Default)]
struct ConfigArgs {
    /// JSON experiment config; defaults apply to missing keys.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Override one config key, e.g. `--set coarse.max_iters=50` (repeatable).
    #[arg(long = "set", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
}

#[derive(Clone, Copy, ValueEnum)]
enum Stage {
    Coarse,
    Fine,
}

#[derive(Clone, Copy, ValueEnum)]
enum Axis {
    Z,
    Y,
    X,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a phantom dataset and its manifest.
    Phantom {
        #[command(flatten)]
        config: ConfigArgs,
        /// Output directory.
        #[arg(long)]
        out: PathBuf,
        /// Number of cases; defaults to n_train + n_test of the config.
        #[arg(long)]
        n_cases: Option<usize>,
    },
    /// Resample a volume to isotropic spacing; images are also clipped and normalised.
    Preprocess {
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = zxyseg::volume_io::TARGET_SPACING_MM)]
        target_mm: f64,
        #[arg(long, default_value_t = zxyseg::volume_io::CLIP_LO)]
        clip_lo: f64,
        #[arg(long, default_value_t = zxyseg::volume_io::CLIP_HI)]
        clip_hi: f64,
        /// Resample only and keep raw intensities, e.g. to feed `infer` or
        /// `train`, which apply the clip-and-normalise step themselves.
        #[arg(long)]
        resample_only: bool,
    },
    /// Train the coarse or the fine network on the training split of a dataset.
    Train {
        stage: Stage,
        #[command(flatten)]
        config: ConfigArgs,
        /// Phantom dataset directory (with manifest.json).
        #[arg(long)]
        data: PathBuf,
        /// Coarse checkpoint; required for the fine stage (ROIs and weight transfer).
        #[arg(long)]
        coarse: Option<PathBuf>,
        /// Checkpoint to write.
        #[arg(long)]
        out: PathBuf,
        /// Training log, one JSON object per step.
        #[arg(long)]
        log: Option<PathBuf>,
    },
    /// Segment one raw image with trained coarse and fine networks.
    Infer {
        #[command(flatten)]
        config: ConfigArgs,
        #[arg(long)]
        image: PathBuf,
        #[arg(long)]
        coarse: PathBuf,
        #[arg(long)]
        fine: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Compare predicted label volumes with ground truth, matched by file name.
    Evaluate {
        #[arg(long)]
        pred: PathBuf,
        #[arg(long)]
        gt: PathBuf,
        /// Write the aggregate report here instead of stdout.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Render one slice of an image with a label overlay as PNG.
    Overlay {
        #[arg(long)]
        image: PathBuf,
        #[arg(long)]
        mask: PathBuf,
        #[arg(long, value_enum, default_value = "z")]
        axis: Axis,
        /// Slice index; defaults to the middle slice.
        #[arg(long)]
        index: Option<usize>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Run the whole phantom experiment in memory and write its result JSON.
    Experiment {
        #[command(flatten)]
        config: ConfigArgs,
        #[arg(long)]
        out: PathBuf,
    },
    /// Run the ablation grid over several seeds and write the report JSON.
    Ablate {
        #[command(flatten)]
        config: ConfigArgs,
        #[arg(long, value_delimiter = ',', default_value = "0,1,2")]
        seeds: Vec<u64>,
        #[arg(long)]
        out: PathBuf,
    },
}

/// A failure reported to the user as JSON.
#[derive(Debug)]
pub struct CliError {
    kind: &'static str,
    message: String,
}

impl CliError {
    fn new(kind: &'static str, message: impl Into<String>) -> Self {
        CliError {
            kind,
            message: message.into(),
        }
    }
}

impl From<zxyseg::Error> for CliError {
    fn from(e: zxyseg::Error) -> Self {
        CliError::new(e.kind(), e.to_string())
    }
}

pub type CliResult<T> = Result<T, CliError>;

fn check_device() -> CliResult<()> {
    match std::env::var(DEVICE_VAR) {
        Ok(d) if !d.eq_ignore_ascii_case("cpu") => Err(CliError::new(
            "device",
            format!("{DEVICE_VAR}={d:?} is not available; this build runs on \"cpu\" only"),
        )),
        _ => Ok(()),
    }
}

fn run(cli: Cli) -> CliResult<()> {
    check_device()?;
    match cli.command {
        Command::Phantom { config, out, n_cases } => commands::phantom(&config, &out, n_cases),
        Command::Preprocess {
            input,
            out,
            target_mm,
            clip_lo,
            clip_hi,
            resample_only,
        } => {
            let window = (!resample_only).then_some((clip_lo, clip_hi));
            commands::preprocess(&input, &out, target_mm, window)
        }
        Command::Train {
            stage,
            config,
            data,
            coarse,
            out,
            log,
        } => commands::train(stage, &config, &data, coarse.as_deref(), &out, log.as_deref()),
        Command::Infer {
            config,
            image,
            coarse,
            fine,
            out,
        } => commands::infer(&config, &image, &coarse, &fine, &out),
        Command::Evaluate { pred, gt, out } => commands::evaluate(&pred, &gt, out.as_deref()),
        Command::Overlay {
            image,
            mask,
            axis,
            index,
            out,
        } => commands::overlay(&image, &mask, axis, index, &out),
        Command::Experiment { config, out } => commands::experiment(&config, &out),
        Command::Ablate { config, seeds, out } => commands::ablate(&config, &seeds, &out),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let body = serde_json::json!({ "error": e.kind, "message": e.message });
            eprintln!("{body}");
            ExitCode::FAILURE
        }
    }
}
