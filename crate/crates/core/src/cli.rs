//! Command-line front end.
//!
//! Exit codes: 0 on success, 1 on any runtime error (one line on stderr
//! starting with `deepif: error:`), 2 on flag misuse.

use std::ffi::OsString;
use std::fs;
use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand, ValueEnum};

use crate::error::{Error, Result};
use crate::experiment::{self, ExperimentConfig};
use crate::gaussian::{CovarianceMode, GaussianParams, Ridge};
use crate::isolation_forest::{
    ForestParams, DEFAULT_MAX_FEATURES, DEFAULT_N_ESTIMATORS, DEFAULT_SUBSAMPLE,
};
use crate::metrics::{self, HISTOGRAM_BINS};
use crate::ood_scoring::{Detector, DetectorSpec};
use crate::tensor_io::{self, LabeledDataset};

pub const THREADS_ENV: &str = "DEEPIF_THREADS";
pub const ERROR_PREFIX: &str = "deepif: error:";

#[derive(Debug, Parser)]
#[command(
    name = "deepif",
    version,
    about = "Out-of-distribution detection with per-class isolation forests"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum DetectorArg {
    Deepif,
    Mahalanobis,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Fit a detector on labeled features and save it to a model directory.
    Fit {
        /// Feature matrix (.npy or headerless .csv).
        #[arg(long)]
        features: PathBuf,
        /// One class name per line, row-aligned with the features.
        #[arg(long)]
        labels: PathBuf,
        #[arg(long, value_enum, default_value_t = DetectorArg::Deepif)]
        detector: DetectorArg,
        /// Output model directory.
        #[arg(long)]
        out: PathBuf,
        /// Trees per class forest.
        #[arg(long, default_value_t = DEFAULT_N_ESTIMATORS)]
        n_estimators: usize,
        /// Fraction of features eligible at each split, in (0, 1].
        #[arg(long, default_value_t = DEFAULT_MAX_FEATURES)]
        max_features: f64,
        /// Per-tree subsample size (capped at the class size).
        #[arg(long, default_value_t = DEFAULT_SUBSAMPLE)]
        subsample: usize,
        /// Covariance mode for the Mahalanobis detector.
        #[arg(long, default_value = "tied", value_parser = ["tied", "per-class"])]
        mode: String,
        /// Ridge for the Mahalanobis detector: a number, or "auto" for 1e-6 * trace / D.
        #[arg(long, default_value = "auto")]
        ridge: String,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Score a feature matrix with a saved detector.
    Score {
        /// Model directory written by `fit`.
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        features: PathBuf,
        /// Score file, one value per line.
        #[arg(long)]
        out: PathBuf,
    },
    /// Compute AUROC, AUPR-in, AUPR-out and TNR at 95% TPR from two score files.
    Eval {
        #[arg(long)]
        in_scores: PathBuf,
        #[arg(long)]
        out_scores: PathBuf,
        /// Report JSON path.
        #[arg(long)]
        report: PathBuf,
        /// Also write roc.csv, pr_in.csv, pr_out.csv and histogram.csv here.
        #[arg(long)]
        curves_dir: Option<PathBuf>,
    },
    /// Run one leave-one-class-out experiment (the config names ood_class).
    Experiment {
        #[arg(long)]
        config: PathBuf,
    },
    /// Run the experiment once per class and add mean rows.
    RunAll {
        #[arg(long)]
        config: PathBuf,
    },
}

fn configure_threads() -> Result<()> {
    let Ok(value) = std::env::var(THREADS_ENV) else {
        return Ok(());
    };
    let n: usize = value.trim().parse().map_err(|_| {
        Error::invalid(format!(
            "{THREADS_ENV} must be a non-negative integer, got {value:?}"
        ))
    })?;
    if n > 0 {
        // fails only if the pool already exists, which is harmless
        let _ = rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global();
    }
    Ok(())
}

fn write(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

pub fn execute(command: Command) -> Result<()> {
    match command {
        Command::Fit {
            features,
            labels,
            detector,
            out,
            n_estimators,
            max_features,
            subsample,
            mode,
            ridge,
            seed,
        } => {
            let x = tensor_io::load_matrix_auto(&features)?;
            let (labels, class_names) = tensor_io::load_labels(&labels)?;
            let data = LabeledDataset::new(x, labels, class_names)?;
            let spec = match detector {
                DetectorArg::Deepif => DetectorSpec::deepif(&ForestParams {
                    n_estimators,
                    max_features_frac: max_features,
                    subsample_size: subsample,
                    seed,
                }),
                DetectorArg::Mahalanobis => DetectorSpec::mahalanobis(GaussianParams {
                    mode: mode.parse::<CovarianceMode>()?,
                    ridge: ridge.parse::<Ridge>()?,
                }),
            };
            let model: Detector<f64> = spec.fit(&data, seed)?;
            model.save(&out, data.class_names())
        }
        Command::Score {
            model,
            features,
            out,
        } => {
            let (detector, _) = Detector::<f64>::load(&model)?;
            let x = tensor_io::load_matrix_auto(&features)?;
            let scores = detector.score(&x)?;
            tensor_io::save_scores(&out, &scores)
        }
        Command::Eval {
            in_scores,
            out_scores,
            report,
            curves_dir,
        } => {
            let a = tensor_io::load_scores(&in_scores)?;
            let b = tensor_io::load_scores(&out_scores)?;
            let r = metrics::evaluate(&a, &b)?;
            write(&report, &r.to_json())?;
            if let Some(dir) = curves_dir {
                fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
                r.write_files(&dir)?;
                let hist = metrics::histogram(&a, &b, HISTOGRAM_BINS);
                write(&dir.join("histogram.csv"), &metrics::histogram_csv(&hist))?;
            }
            Ok(())
        }
        Command::Experiment { config } => {
            let cfg = ExperimentConfig::load(&config)?;
            experiment::run_experiment(&cfg).map(|_| ())
        }
        Command::RunAll { config } => {
            let cfg = ExperimentConfig::load(&config)?;
            experiment::run_all_classes(&cfg).map(|_| ())
        }
    }
}

/// Parses `args` and runs the command; returns the process exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return e.exit_code();
        }
    };
    let result = configure_threads().and_then(|()| execute(cli.command));
    match result {
        Ok(()) => 0,
        Err(e) => {
            let message = e.to_string().replace(['\n', '\r'], " ");
            eprintln!("{ERROR_PREFIX} {message}");
            1
        }
    }
}
