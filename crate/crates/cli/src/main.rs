mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};

use config::{CommonArgs, ConfigError};

/// Affine region detection, size-pooled SIFT descriptors and matching benchmarks.
#[derive(Debug, Parser)]
#[command(name = "dspsift", version)]
struct Cli {
    #[command(flatten)]
    common: CommonArgs,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum DumpFormat {
    Text,
    Binary,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Detect MSER regions and write `<stem>.regions` files (Oxford format) to --out.
    Detect {
        /// Images to process; without them every image of --dataset is used.
        images: Vec<PathBuf>,
    },
    /// Compute descriptors for every region and write one dump per image and method.
    ///
    /// Text dumps (`.desc`) hold one record per line: `u v a b c kind dim values..`.
    /// Binary dumps (`.dspd`) start with `DSPD` and a u32 count, then per record
    /// u32 kind, u32 flags, u32 dim, 5 f64 region fields and dim f32 values.
    Extract {
        /// Images to process; without them every image of --dataset is used.
        images: Vec<PathBuf>,
        #[arg(long, value_enum, default_value = "text")]
        format: DumpFormat,
    },
    /// Nearest-neighbour match two descriptor dumps into `matches.csv`
    /// (columns `i,j,distance,label`; label is empty without --homography).
    Match {
        query: PathBuf,
        target: PathBuf,
        /// Homography from the query image to the target image, used to label matches.
        #[arg(long)]
        homography: Option<PathBuf>,
    },
    /// Evaluate methods on the dataset: `report.json`, `ap.csv`, `pr.csv`
    /// and, with two or more methods, `head_to_head.csv` (first vs second).
    Evaluate,
    /// mAP of DSP-SIFT against the pooling radius: `sweep_radius.csv` (`radius,map`).
    SweepRadius {
        /// Comma-separated radii relative to the detected scale.
        #[arg(long)]
        radii: Option<String>,
    },
    /// mAP of DSP-SIFT against the number of sizes: `sweep_samples.csv` (`n,map`).
    ///
    /// The pooling interval is (0.5, 1.5) unless --lambda1/--lambda2 are given.
    SweepSamples {
        /// Comma-separated sample counts.
        #[arg(long)]
        counts: Option<String>,
    },
    /// Scale-undersampling experiment on a random 1D signal.
    ///
    /// `ridge_surface.csv` (`sigma,tau,energy`), `ridge.csv` (`sigma,energy` on the
    /// fine grid), `ridge_coarse.csv` (`sigma,raw,antialiased`) and
    /// `ridge_trials.csv` with one summary row per trial.
    LabRidge {
        #[arg(long, default_value_t = 1)]
        trials: usize,
    },
    /// Detector response and descriptor change across scale around a planted blob:
    /// `specificity.csv` (`sigma,response,change`).
    LabSpecificity {
        /// Scale of the planted Gaussian blob, in samples.
        #[arg(long = "sigma-star", default_value_t = 5.0)]
        sigma_star: f64,
        /// Amplitude of the smooth random background.
        #[arg(long, default_value_t = 0.2)]
        background: f64,
    },
    /// Pooled value histogram of a random signal: `pooled_hist.csv` (`bin,center,mass`)
    /// and `pooled_hist_summary.csv` (`mean,box_mean,bin_width`).
    LabPooledhist {
        #[arg(long, default_value_t = 64)]
        bins: usize,
        #[arg(long, default_value_t = 8.0)]
        radius: f64,
    },
}

fn exit_code(err: &anyhow::Error) -> u8 {
    for cause in err.chain() {
        if cause.downcast_ref::<ConfigError>().is_some() {
            return 2;
        }
        if let Some(e) = cause.downcast_ref::<dspsift::Error>() {
            if matches!(e, dspsift::Error::InvalidArgument(_)) {
                return 2;
            }
            if e.is_data_error() {
                return 3;
            }
        }
    }
    4
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match commands::run(&cli.common, cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}
