//! Leave-one-class-out experiments.
//!
//! One class is held out as the OOD set. Every remaining class is split
//! (stratified, seeded) into training rows and in-distribution evaluation
//! rows. Each configured detector is fit on the training rows of each
//! feature layer, and the two evaluation sets are scored and compared.
//!
//! Output layout under `output_dir`:
//!
//! ```text
//! summary.csv
//! <ood_class>/split.json
//! <ood_class>/result.json
//! <ood_class>/<detector>_<layer>/{report.json, roc.csv, pr_in.csv, pr_out.csv,
//!                                 scores_in.txt, scores_out.txt, histogram.csv}
//! ```

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::gaussian::GaussianParams;
use crate::metrics::{self, EvalReport, HISTOGRAM_BINS};
use crate::ood_scoring::{CappedClass, Detector, DetectorSpec};
use crate::rng::{derive_seed, substream};
use crate::scalar::Scalar;
use crate::tensor_io::{self, FeatureMatrix, LabeledDataset, LayerTag};

pub const DEFAULT_SPLIT_FRACTION: f64 = 0.9;
pub const SUMMARY_FILE: &str = "summary.csv";
pub const MEAN_ROW: &str = "Mean";

/// Stream index reserved for the split shuffle.
const SPLIT_STREAM: u64 = 0x5EED_5B11;

fn default_split_fraction() -> f64 {
    DEFAULT_SPLIT_FRACTION
}

fn default_detectors() -> Vec<DetectorSpec> {
    vec![
        DetectorSpec::DeepIf {
            name: None,
            n_estimators: crate::isolation_forest::DEFAULT_N_ESTIMATORS,
            max_features_frac: crate::isolation_forest::DEFAULT_MAX_FEATURES,
            subsample_size: crate::isolation_forest::DEFAULT_SUBSAMPLE,
            seed: None,
        },
        DetectorSpec::mahalanobis(GaussianParams::default()),
    ]
}

/// Scores produced elsewhere for one held-out class, evaluated alongside
/// the built-in detectors. Rows must follow the split manifest order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExternalScores {
    pub name: String,
    pub ood_class: String,
    pub in_scores: PathBuf,
    pub out_scores: PathBuf,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub feature_files: BTreeMap<LayerTag, PathBuf>,
    pub labels_file: PathBuf,
    /// Ignored by [`run_all_classes`].
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub ood_class: Option<String>,
    #[serde(default = "default_split_fraction")]
    pub split_fraction: f64,
    #[serde(default = "default_detectors")]
    pub detectors: Vec<DetectorSpec>,
    #[serde(default)]
    pub seed: u64,
    pub output_dir: PathBuf,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub external_scores: Vec<ExternalScores>,
}

impl ExperimentConfig {
    /// Reads a JSON config. Relative paths are taken relative to the
    /// directory holding the config file.
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut config: ExperimentConfig =
            serde_json::from_str(&text).map_err(|e| Error::format(path, e.to_string()))?;
        let base = path.parent().unwrap_or(Path::new(""));
        let rebase = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        config.feature_files.values_mut().for_each(rebase);
        rebase(&mut config.labels_file);
        rebase(&mut config.output_dir);
        for ext in &mut config.external_scores {
            rebase(&mut ext.in_scores);
            rebase(&mut ext.out_scores);
        }
        Ok(config)
    }

    pub fn validate(&self) -> Result<()> {
        if self.feature_files.is_empty() {
            return Err(Error::invalid("config lists no feature files"));
        }
        if !(self.split_fraction > 0.0 && self.split_fraction < 1.0) {
            return Err(Error::invalid(format!(
                "split_fraction must lie in (0, 1), got {}",
                self.split_fraction
            )));
        }
        if self.detectors.is_empty() {
            return Err(Error::invalid("config lists no detectors"));
        }
        let mut names = BTreeSet::new();
        for d in &self.detectors {
            if let Some(p) = d.forest_params(self.seed) {
                p.validate()?;
            }
            let name = d.name();
            if name.is_empty() || name.contains(['/', '\\']) {
                return Err(Error::invalid(format!("bad detector name {name:?}")));
            }
            if !names.insert(name.to_string()) {
                return Err(Error::invalid(format!(
                    "detector name {name:?} is used twice; set \"name\" to tell them apart"
                )));
            }
        }
        Ok(())
    }
}

/// Row indices for each role, ascending within each role.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SplitManifest {
    pub ood_class: String,
    pub train_rows: Vec<usize>,
    pub in_eval_rows: Vec<usize>,
    pub ood_rows: Vec<usize>,
}

/// Training set over the remaining classes plus both evaluation sets.
#[derive(Debug, Clone)]
pub struct Split<T> {
    pub train: LabeledDataset<T>,
    pub in_dist_eval: FeatureMatrix<T>,
    pub ood_eval: FeatureMatrix<T>,
    pub manifest: SplitManifest,
}

/// Rows going to training for a class of `n` rows: `⌈fraction · n⌉`, with a
/// small slack so that products like `0.9 · 10` are not rounded up.
pub fn train_count(n: usize, fraction: f64) -> usize {
    let raw = fraction * n as f64;
    ((raw - 1e-9 * raw.max(1.0)).ceil() as usize).min(n)
}

/// Computes the split from labels alone.
pub fn compute_split(
    labels: &[usize],
    class_names: &[String],
    ood_class: &str,
    fraction: f64,
    seed: u64,
) -> Result<SplitManifest> {
    if !(fraction > 0.0 && fraction < 1.0) {
        return Err(Error::invalid(format!(
            "split fraction must lie in (0, 1), got {fraction}"
        )));
    }
    let ood = class_names
        .iter()
        .position(|c| c == ood_class)
        .ok_or_else(|| {
            Error::invalid(format!(
                "ood class {ood_class:?} is not among the classes {class_names:?}"
            ))
        })?;
    let mut by_class = vec![Vec::new(); class_names.len()];
    for (i, &l) in labels.iter().enumerate() {
        by_class
            .get_mut(l)
            .ok_or_else(|| Error::invalid(format!("label {l} out of range")))?
            .push(i);
    }
    if by_class[ood].is_empty() {
        return Err(Error::invalid(format!(
            "ood class {ood_class:?} has no rows"
        )));
    }

    let shuffle_seed = derive_seed(seed, SPLIT_STREAM);
    let mut train_rows = Vec::new();
    let mut in_eval_rows = Vec::new();
    let mut remaining = 0;
    for (k, rows) in by_class.iter().enumerate() {
        if k == ood || rows.is_empty() {
            continue;
        }
        remaining += 1;
        let n_train = train_count(rows.len(), fraction);
        if n_train < 2 || n_train == rows.len() {
            return Err(Error::invalid(format!(
                "class {:?} has {} rows: a {fraction} split leaves {n_train} for training and {} \
                 for evaluation (need at least 2 and 1)",
                class_names[k],
                rows.len(),
                rows.len() - n_train
            )));
        }
        let mut shuffled = rows.clone();
        shuffled.shuffle(&mut substream(shuffle_seed, k as u64));
        train_rows.extend_from_slice(&shuffled[..n_train]);
        in_eval_rows.extend_from_slice(&shuffled[n_train..]);
    }
    if remaining == 0 {
        return Err(Error::invalid(
            "no in-distribution classes remain after holding one out",
        ));
    }
    train_rows.sort_unstable();
    in_eval_rows.sort_unstable();
    Ok(SplitManifest {
        ood_class: ood_class.to_string(),
        train_rows,
        in_eval_rows,
        ood_rows: by_class[ood].clone(),
    })
}

impl SplitManifest {
    /// Builds the matrices for one feature layer. Training labels are
    /// re-indexed over the remaining (non-empty) classes.
    pub fn apply<T: Scalar>(
        &self,
        features: &FeatureMatrix<T>,
        labels: &[usize],
        class_names: &[String],
    ) -> Result<Split<T>> {
        if features.n_rows() != labels.len() {
            return Err(Error::invalid(format!(
                "{} feature rows but {} labels",
                features.n_rows(),
                labels.len()
            )));
        }
        let kept: BTreeSet<usize> = self.train_rows.iter().map(|&r| labels[r]).collect();
        let remap: BTreeMap<usize, usize> = kept
            .iter()
            .enumerate()
            .map(|(new, &old)| (old, new))
            .collect();
        let train_labels = self.train_rows.iter().map(|&r| remap[&labels[r]]).collect();
        let train_names = kept.iter().map(|&k| class_names[k].clone()).collect();
        Ok(Split {
            train: LabeledDataset::new(
                features.select_rows(&self.train_rows)?,
                train_labels,
                train_names,
            )?,
            in_dist_eval: features.select_rows(&self.in_eval_rows)?,
            ood_eval: features.select_rows(&self.ood_rows)?,
            manifest: self.clone(),
        })
    }
}

pub fn split_holdout<T: Scalar>(
    data: &LabeledDataset<T>,
    ood_class: &str,
    fraction: f64,
    seed: u64,
) -> Result<Split<T>> {
    let manifest = compute_split(data.labels(), data.class_names(), ood_class, fraction, seed)?;
    manifest.apply(data.features(), data.labels(), data.class_names())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportEntry {
    pub detector: String,
    /// `None` for externally supplied scores.
    pub layer: Option<LayerTag>,
    pub report: EvalReport,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub capped_classes: Vec<CappedClass>,
}

impl ReportEntry {
    fn layer_name(&self) -> &str {
        self.layer.map_or("external", LayerTag::as_str)
    }

    fn dir_name(&self) -> String {
        format!("{}_{}", self.detector, self.layer_name())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentResult {
    pub ood_class: String,
    pub config: ExperimentConfig,
    pub manifest: SplitManifest,
    pub reports: Vec<ReportEntry>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AllClassesResult {
    pub results: Vec<ExperimentResult>,
    /// Per (detector, layer) mean over all held-out classes, in first-seen order.
    pub means: Vec<ReportEntry>,
}

struct Inputs {
    labels: Vec<usize>,
    class_names: Vec<String>,
    layers: Vec<(LayerTag, FeatureMatrix<f64>)>,
}

fn load_inputs(config: &ExperimentConfig, ood_class: Option<&str>) -> Result<Inputs> {
    config.validate()?;
    let (labels, class_names) = tensor_io::load_labels(&config.labels_file)?;
    if let Some(ood) = ood_class {
        if !class_names.iter().any(|c| c == ood) {
            return Err(Error::invalid(format!(
                "ood class {ood:?} is not among the classes {class_names:?}"
            )));
        }
    }
    let layers = config
        .feature_files
        .iter()
        .map(|(&tag, path)| {
            let m =
                tensor_io::load_matrix_auto(path).map_err(|e| e.context(format!("layer {tag}")))?;
            if m.n_rows() != labels.len() {
                return Err(Error::invalid(format!(
                    "layer {tag}: {} feature rows but {} labels",
                    m.n_rows(),
                    labels.len()
                )));
            }
            Ok((tag, m))
        })
        .collect::<Result<_>>()?;
    Ok(Inputs {
        labels,
        class_names,
        layers,
    })
}

fn write(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

fn write_entry_files(
    dir: &Path,
    entry: &ReportEntry,
    in_scores: &[f64],
    out_scores: &[f64],
) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    entry.report.write_files(dir)?;
    tensor_io::save_scores(dir.join("scores_in.txt"), in_scores)?;
    tensor_io::save_scores(dir.join("scores_out.txt"), out_scores)?;
    let hist = metrics::histogram(in_scores, out_scores, HISTOGRAM_BINS);
    write(&dir.join("histogram.csv"), &metrics::histogram_csv(&hist))
}

fn run_one(
    config: &ExperimentConfig,
    inputs: &Inputs,
    ood_class: &str,
) -> Result<ExperimentResult> {
    let manifest = compute_split(
        &inputs.labels,
        &inputs.class_names,
        ood_class,
        config.split_fraction,
        config.seed,
    )?;
    let class_dir = config.output_dir.join(ood_class);
    fs::create_dir_all(&class_dir).map_err(|e| Error::io(&class_dir, e))?;

    let mut reports = Vec::new();
    for (layer, features) in &inputs.layers {
        let split = manifest.apply(features, &inputs.labels, &inputs.class_names)?;
        for spec in &config.detectors {
            let ctx = || {
                format!(
                    "ood class {ood_class}, detector {}, layer {layer}",
                    spec.name()
                )
            };
            let detector: Detector<f64> = spec
                .fit(&split.train, config.seed)
                .map_err(|e| e.context(ctx()))?;
            let in_scores = detector
                .score(&split.in_dist_eval)
                .map_err(|e| e.context(ctx()))?;
            let out_scores = detector
                .score(&split.ood_eval)
                .map_err(|e| e.context(ctx()))?;
            let report =
                metrics::evaluate(&in_scores, &out_scores).map_err(|e| e.context(ctx()))?;
            let capped_classes = match &detector {
                Detector::DeepIf(bank) => bank.capped_classes(),
                Detector::Mahalanobis(_) => Vec::new(),
            };
            let entry = ReportEntry {
                detector: spec.name().to_string(),
                layer: Some(*layer),
                report,
                capped_classes,
            };
            write_entry_files(
                &class_dir.join(entry.dir_name()),
                &entry,
                &in_scores,
                &out_scores,
            )?;
            reports.push(entry);
        }
    }

    for ext in config
        .external_scores
        .iter()
        .filter(|e| e.ood_class == ood_class)
    {
        let ctx = || format!("ood class {ood_class}, external scores {}", ext.name);
        let in_scores = tensor_io::load_scores(&ext.in_scores).map_err(|e| e.context(ctx()))?;
        let out_scores = tensor_io::load_scores(&ext.out_scores).map_err(|e| e.context(ctx()))?;
        if in_scores.len() != manifest.in_eval_rows.len()
            || out_scores.len() != manifest.ood_rows.len()
        {
            return Err(Error::invalid(format!(
                "expected {} in-distribution and {} OOD scores, got {} and {}",
                manifest.in_eval_rows.len(),
                manifest.ood_rows.len(),
                in_scores.len(),
                out_scores.len()
            ))
            .context(ctx()));
        }
        let entry = ReportEntry {
            detector: ext.name.clone(),
            layer: None,
            report: metrics::evaluate(&in_scores, &out_scores).map_err(|e| e.context(ctx()))?,
            capped_classes: Vec::new(),
        };
        write_entry_files(
            &class_dir.join(entry.dir_name()),
            &entry,
            &in_scores,
            &out_scores,
        )?;
        reports.push(entry);
    }

    let result = ExperimentResult {
        ood_class: ood_class.to_string(),
        config: config.clone(),
        manifest,
        reports,
    };
    write(
        &class_dir.join("split.json"),
        &serde_json::to_string_pretty(&result.manifest).expect("manifest serializes"),
    )?;
    write(
        &class_dir.join("result.json"),
        &serde_json::to_string_pretty(&result).expect("result serializes"),
    )?;
    Ok(result)
}

/// Runs the experiment for `config.ood_class`.
pub fn run_experiment(config: &ExperimentConfig) -> Result<ExperimentResult> {
    let ood = config
        .ood_class
        .as_deref()
        .ok_or_else(|| Error::invalid("config has no ood_class"))?;
    let inputs = load_inputs(config, Some(ood))?;
    let result = run_one(config, &inputs, ood)?;
    write(
        &config.output_dir.join(SUMMARY_FILE),
        &summary_csv(std::slice::from_ref(&result), &[]),
    )?;
    Ok(result)
}

/// Runs one experiment per class, each holding that class out, and appends
/// the per-detector mean rows.
pub fn run_all_classes(config: &ExperimentConfig) -> Result<AllClassesResult> {
    let inputs = load_inputs(config, None)?;
    let results = inputs
        .class_names
        .par_iter()
        .map(|ood| run_one(config, &inputs, ood))
        .collect::<Result<Vec<_>>>()?;

    let mut groups: Vec<(String, Option<LayerTag>, Vec<EvalReport>)> = Vec::new();
    for entry in results.iter().flat_map(|r| &r.reports) {
        match groups
            .iter_mut()
            .find(|(d, l, _)| *d == entry.detector && *l == entry.layer)
        {
            Some(g) => g.2.push(entry.report.clone()),
            None => groups.push((
                entry.detector.clone(),
                entry.layer,
                vec![entry.report.clone()],
            )),
        }
    }
    let means = groups
        .into_iter()
        .map(|(detector, layer, reports)| ReportEntry {
            detector,
            layer,
            report: metrics::mean_report(&reports).expect("group is non-empty"),
            capped_classes: Vec::new(),
        })
        .collect::<Vec<_>>();

    write(
        &config.output_dir.join(SUMMARY_FILE),
        &summary_csv(&results, &means),
    )?;
    Ok(AllClassesResult { results, means })
}

/// `ood_class,detector,layer,auroc,aupr_in,aupr_out,tnr_at_95tpr`, one row
/// per report, then one `Mean` row per mean entry.
pub fn summary_csv(results: &[ExperimentResult], means: &[ReportEntry]) -> String {
    let mut out = String::from("ood_class,detector,layer,auroc,aupr_in,aupr_out,tnr_at_95tpr\n");
    let mut row = |class: &str, e: &ReportEntry| {
        let r = &e.report;
        let _ = writeln!(
            out,
            "{class},{},{},{},{},{},{}",
            e.detector,
            e.layer_name(),
            r.auroc,
            r.aupr_in,
            r.aupr_out,
            r.tnr_at_95tpr
        );
    };
    for res in results {
        for e in &res.reports {
            row(&res.ood_class, e);
        }
    }
    for e in means {
        row(MEAN_ROW, e);
    }
    out
}
