//! Out-of-distribution detection over precomputed deep-feature vectors.
//!
//! The main detector ([`ClassForestBank`]) fits one isolation forest per
//! in-distribution class and scores a point by the maximum of the per-class
//! normality scores. A class-conditional Gaussian baseline
//! ([`GaussianClassModel`]), threshold-free evaluation metrics and a
//! leave-one-class-out experiment harness complete the toolkit.
//!
//! All numeric types are generic over [`Scalar`] (`f32` or `f64`). The
//! aliases at the crate root fix the scalar for the common cases.

pub mod cli;
pub mod error;
pub mod experiment;
pub mod gaussian;
pub mod isolation_forest;
pub mod metrics;
pub mod ood_scoring;
pub mod rng;
pub mod scalar;
pub mod tensor_io;

pub use error::{Error, Result};
pub use experiment::{ExperimentConfig, ExperimentResult, SplitManifest};
pub use gaussian::{CovarianceMode, GaussianClassModel, GaussianParams, Ridge};
pub use isolation_forest::{
    average_path_length, ForestParams, IsolationForest, IsolationTree, Node,
};
pub use metrics::{auroc_rank_oracle, evaluate, EvalReport};
pub use ood_scoring::{ClassForestBank, Detector};
pub use scalar::Scalar;
pub use tensor_io::{FeatureMatrix, LabeledDataset, LayerTag};

pub type FeatureMatrixF64 = FeatureMatrix<f64>;
pub type FeatureMatrixF32 = FeatureMatrix<f32>;
pub type LabeledDatasetF64 = LabeledDataset<f64>;
pub type LabeledDatasetF32 = LabeledDataset<f32>;
pub type IsolationForestF64 = IsolationForest<f64>;
pub type IsolationForestF32 = IsolationForest<f32>;
pub type ClassForestBankF64 = ClassForestBank<f64>;
pub type ClassForestBankF32 = ClassForestBank<f32>;
pub type GaussianModelF64 = GaussianClassModel<f64>;
pub type GaussianModelF32 = GaussianClassModel<f32>;
pub type DetectorF64 = Detector<f64>;
pub type DetectorF32 = Detector<f32>;
