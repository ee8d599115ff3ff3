//! Detectors: the per-class forest bank and the Gaussian baseline behind one
//! interface. Every detector scores so that larger means more
//! in-distribution.

use std::fs;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::gaussian::{GaussianClassModel, GaussianParams};
use crate::isolation_forest::{ForestParams, IsolationForest};
use crate::rng::derive_seed;
use crate::scalar::Scalar;
use crate::tensor_io::{FeatureMatrix, LabeledDataset};

const MANIFEST_FORMAT: &str = "deepif-detector";
const MANIFEST_VERSION: u32 = 1;
pub const MANIFEST_FILE: &str = "manifest.json";
const GAUSSIAN_FILE: &str = "gaussian.json";

/// One isolation forest per class; a point's score is the maximum of the
/// per-class scores.
#[derive(Debug, Clone, PartialEq)]
pub struct ClassForestBank<T> {
    forests: Vec<IsolationForest<T>>,
    class_names: Vec<String>,
    params: ForestParams,
}

/// A class whose training rows were fewer than the configured subsample size.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CappedClass {
    pub class: String,
    pub n_rows: usize,
    pub subsample_size: usize,
}

impl<T: Scalar> ClassForestBank<T> {
    /// Forest `k` is fit on the rows labeled `k` with seed
    /// `derive_seed(params.seed, k)`.
    pub fn fit(data: &LabeledDataset<T>, params: &ForestParams) -> Result<Self> {
        params.validate()?;
        if data.n_classes() == 0 {
            return Err(Error::invalid("no classes to fit"));
        }
        let per_class: Vec<Vec<usize>> =
            (0..data.n_classes()).map(|k| data.class_rows(k)).collect();
        for (k, rows) in per_class.iter().enumerate() {
            if rows.len() < 2 {
                return Err(Error::invalid(format!(
                    "class {:?} has {} samples, need at least 2",
                    data.class_names()[k],
                    rows.len()
                )));
            }
        }
        let forests = per_class
            .par_iter()
            .enumerate()
            .map(|(k, rows)| {
                let x = data.features().select_rows(rows)?;
                let p = params.clone().with_seed(derive_seed(params.seed, k as u64));
                IsolationForest::fit(&x, &p)
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Self {
            forests,
            class_names: data.class_names().to_vec(),
            params: params.clone(),
        })
    }

    pub fn from_forests(
        forests: Vec<IsolationForest<T>>,
        class_names: Vec<String>,
        params: ForestParams,
    ) -> Result<Self> {
        if forests.is_empty() || forests.len() != class_names.len() {
            return Err(Error::invalid(format!(
                "{} forests for {} class names",
                forests.len(),
                class_names.len()
            )));
        }
        let d = forests[0].n_features();
        if forests.iter().any(|f| f.n_features() != d) {
            return Err(Error::invalid("class forests disagree on dimensionality"));
        }
        Ok(Self {
            forests,
            class_names,
            params,
        })
    }

    pub fn forests(&self) -> &[IsolationForest<T>] {
        &self.forests
    }

    pub fn class_names(&self) -> &[String] {
        &self.class_names
    }

    pub fn params(&self) -> &ForestParams {
        &self.params
    }

    pub fn n_features(&self) -> usize {
        self.forests[0].n_features()
    }

    /// Classes whose forest used fewer rows than `params.subsample_size`.
    pub fn capped_classes(&self) -> Vec<CappedClass> {
        self.forests
            .iter()
            .zip(&self.class_names)
            .filter(|(f, _)| f.sample_size() < self.params.subsample_size)
            .map(|(f, name)| CappedClass {
                class: name.clone(),
                n_rows: f.sample_size(),
                subsample_size: self.params.subsample_size,
            })
            .collect()
    }

    /// Scores under each class forest, indexed `[class][row]`.
    pub fn per_class_scores(&self, data: &FeatureMatrix<T>) -> Result<Vec<Vec<T>>> {
        self.forests.iter().map(|f| f.score_samples(data)).collect()
    }

    pub fn score(&self, data: &FeatureMatrix<T>) -> Result<Vec<T>> {
        let per_class = self.per_class_scores(data)?;
        let mut best = per_class[0].clone();
        for scores in &per_class[1..] {
            for (b, &s) in best.iter_mut().zip(scores) {
                *b = b.max(s);
            }
        }
        Ok(best)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Detector<T> {
    DeepIf(ClassForestBank<T>),
    Mahalanobis(GaussianClassModel<T>),
}

impl<T: Scalar> Detector<T> {
    pub fn kind(&self) -> DetectorKind {
        match self {
            Detector::DeepIf(_) => DetectorKind::DeepIf,
            Detector::Mahalanobis(_) => DetectorKind::Mahalanobis,
        }
    }

    pub fn n_features(&self) -> usize {
        match self {
            Detector::DeepIf(b) => b.n_features(),
            Detector::Mahalanobis(m) => m.n_features(),
        }
    }

    pub fn score(&self, data: &FeatureMatrix<T>) -> Result<Vec<T>> {
        match self {
            Detector::DeepIf(b) => b.score(data),
            Detector::Mahalanobis(m) => m.score(data),
        }
    }

    /// Writes `dir/manifest.json` plus one file per class forest
    /// (`forest_<k>.json`) or a single `gaussian.json`.
    pub fn save(&self, dir: impl AsRef<Path>, class_names: &[String]) -> Result<()> {
        let dir = dir.as_ref();
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let manifest = match self {
            Detector::DeepIf(bank) => {
                let mut files = Vec::new();
                for (k, forest) in bank.forests.iter().enumerate() {
                    let name = format!("forest_{k}.json");
                    forest.save(dir.join(&name))?;
                    files.push(name);
                }
                Manifest {
                    format: MANIFEST_FORMAT.into(),
                    version: MANIFEST_VERSION,
                    scalar: T::NAME.into(),
                    kind: DetectorKind::DeepIf,
                    class_names: bank.class_names.clone(),
                    n_features: bank.n_features(),
                    forest_params: Some(bank.params.clone()),
                    files,
                }
            }
            Detector::Mahalanobis(model) => {
                model.save(dir.join(GAUSSIAN_FILE))?;
                Manifest {
                    format: MANIFEST_FORMAT.into(),
                    version: MANIFEST_VERSION,
                    scalar: T::NAME.into(),
                    kind: DetectorKind::Mahalanobis,
                    class_names: class_names.to_vec(),
                    n_features: model.n_features(),
                    forest_params: None,
                    files: vec![GAUSSIAN_FILE.into()],
                }
            }
        };
        let path = dir.join(MANIFEST_FILE);
        let text = serde_json::to_string_pretty(&manifest).expect("manifest serializes");
        fs::write(&path, text).map_err(|e| Error::io(&path, e))
    }

    pub fn load(dir: impl AsRef<Path>) -> Result<(Self, Vec<String>)> {
        let dir = dir.as_ref();
        let path = dir.join(MANIFEST_FILE);
        let bad = |m: String| Error::Model {
            path: path.clone(),
            message: m,
        };
        let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
        let manifest: Manifest = serde_json::from_str(&text).map_err(|e| bad(e.to_string()))?;
        if manifest.format != MANIFEST_FORMAT {
            return Err(bad(format!(
                "not a detector manifest (format {:?})",
                manifest.format
            )));
        }
        if manifest.version != MANIFEST_VERSION {
            return Err(bad(format!(
                "unsupported manifest version {}",
                manifest.version
            )));
        }
        if manifest.scalar != T::NAME {
            return Err(bad(format!(
                "scalar is {}, expected {}",
                manifest.scalar,
                T::NAME
            )));
        }
        let file = |name: &String| -> Result<PathBuf> {
            if name.contains(['/', '\\']) || name == ".." {
                return Err(bad(format!(
                    "model file name {name:?} escapes the model directory"
                )));
            }
            Ok(dir.join(name))
        };
        let detector = match manifest.kind {
            DetectorKind::DeepIf => {
                let params = manifest
                    .forest_params
                    .clone()
                    .ok_or_else(|| bad("deepif manifest lacks forest_params".into()))?;
                let forests = manifest
                    .files
                    .iter()
                    .map(|f| IsolationForest::load(file(f)?))
                    .collect::<Result<Vec<_>>>()?;
                Detector::DeepIf(
                    ClassForestBank::from_forests(forests, manifest.class_names.clone(), params)
                        .map_err(|e| bad(e.to_string()))?,
                )
            }
            DetectorKind::Mahalanobis => {
                let [f] = manifest.files.as_slice() else {
                    return Err(bad("mahalanobis manifest must list one file".into()));
                };
                Detector::Mahalanobis(GaussianClassModel::load(file(f)?)?)
            }
        };
        if detector.n_features() != manifest.n_features {
            return Err(bad(
                "manifest dimensionality disagrees with the model".into()
            ));
        }
        Ok((detector, manifest.class_names))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum DetectorKind {
    #[serde(rename = "deepif")]
    DeepIf,
    #[serde(rename = "mahalanobis")]
    Mahalanobis,
}

impl DetectorKind {
    pub fn as_str(self) -> &'static str {
        match self {
            DetectorKind::DeepIf => "deepif",
            DetectorKind::Mahalanobis => "mahalanobis",
        }
    }
}

/// `manifest.json`, version 1.
#[derive(Debug, Serialize, Deserialize)]
struct Manifest {
    format: String,
    version: u32,
    scalar: String,
    kind: DetectorKind,
    class_names: Vec<String>,
    n_features: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    forest_params: Option<ForestParams>,
    files: Vec<String>,
}

/// A detector to be fitted, as written in experiment configs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type")]
pub enum DetectorSpec {
    #[serde(rename = "deepif")]
    DeepIf {
        #[serde(default, skip_serializing_if = "Option::is_none")]
        name: Option<String>,
        #[serde(default = "default_n_estimators")]
        n_estimators: usize,
        #[serde(default = "default_max_features")]
        max_features_frac: f64,
        #[serde(default = "default_subsample")]
        subsample_size: usize,
        /// Falls back to the experiment seed.
        #[serde(default, skip_serializing_if = "Option::is_none")]
        seed: Option<u64>,
    },
    #[serde(rename = "mahalanobis")]
    Mahalanobis {
        #[serde(default, skip_serializing_if = "Option::is_none")]
        name: Option<String>,
        #[serde(flatten)]
        params: GaussianParams,
    },
}

fn default_n_estimators() -> usize {
    crate::isolation_forest::DEFAULT_N_ESTIMATORS
}

fn default_max_features() -> f64 {
    crate::isolation_forest::DEFAULT_MAX_FEATURES
}

fn default_subsample() -> usize {
    crate::isolation_forest::DEFAULT_SUBSAMPLE
}

impl DetectorSpec {
    pub fn deepif(params: &ForestParams) -> Self {
        DetectorSpec::DeepIf {
            name: None,
            n_estimators: params.n_estimators,
            max_features_frac: params.max_features_frac,
            subsample_size: params.subsample_size,
            seed: Some(params.seed),
        }
    }

    pub fn mahalanobis(params: GaussianParams) -> Self {
        DetectorSpec::Mahalanobis { name: None, params }
    }

    pub fn kind(&self) -> DetectorKind {
        match self {
            DetectorSpec::DeepIf { .. } => DetectorKind::DeepIf,
            DetectorSpec::Mahalanobis { .. } => DetectorKind::Mahalanobis,
        }
    }

    /// Name used in output paths; defaults to the detector kind.
    pub fn name(&self) -> &str {
        match self {
            DetectorSpec::DeepIf { name, .. } | DetectorSpec::Mahalanobis { name, .. } => {
                name.as_deref().unwrap_or(self.kind().as_str())
            }
        }
    }

    pub fn forest_params(&self, fallback_seed: u64) -> Option<ForestParams> {
        match *self {
            DetectorSpec::DeepIf {
                n_estimators,
                max_features_frac,
                subsample_size,
                seed,
                ..
            } => Some(ForestParams {
                n_estimators,
                max_features_frac,
                subsample_size,
                seed: seed.unwrap_or(fallback_seed),
            }),
            DetectorSpec::Mahalanobis { .. } => None,
        }
    }

    pub fn fit<T: Scalar>(
        &self,
        data: &LabeledDataset<T>,
        fallback_seed: u64,
    ) -> Result<Detector<T>> {
        match self {
            DetectorSpec::DeepIf { .. } => {
                let params = self.forest_params(fallback_seed).expect("deepif spec");
                ClassForestBank::fit(data, &params).map(Detector::DeepIf)
            }
            DetectorSpec::Mahalanobis { params, .. } => {
                GaussianClassModel::fit(data, params).map(Detector::Mahalanobis)
            }
        }
    }
}
