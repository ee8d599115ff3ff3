//! Isolation trees and forests.
//!
//! A forest scores a point by its mean path length `E[P]` over the trees,
//! normalized by `c(ψ)`, the expected length of an unsuccessful search in a
//! binary search tree over the subsample size ψ:
//!
//! ```text
//! score(x) = 0.5 - 2^(-E[P](x) / c(ψ))
//! ```
//!
//! Scores lie in `(-0.5, 0.5)`; larger means more normal.

use std::fs;
use std::path::Path;

use rand::seq::index;
use rand::Rng as _;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::{substream, Rng};
use crate::scalar::{Scalar, EULER_GAMMA};
use crate::tensor_io::FeatureMatrix;

pub const DEFAULT_N_ESTIMATORS: usize = 200;
pub const DEFAULT_MAX_FEATURES: f64 = 1.0;
pub const DEFAULT_SUBSAMPLE: usize = 256;

const FOREST_FORMAT: &str = "deepif-isolation-forest";
const FOREST_VERSION: u32 = 1;

/// `c(n)`: 0 for `n <= 1`, 1 for `n == 2`, otherwise
/// `2 (ln(n - 1) + γ) - 2 (n - 1) / n`.
pub fn average_path_length<T: Scalar>(n: usize) -> T {
    match n {
        0 | 1 => T::zero(),
        2 => T::one(),
        _ => {
            let n = T::of(n as f64);
            let two = T::of(2.0);
            two * ((n - T::one()).ln() + T::of(EULER_GAMMA)) - two * (n - T::one()) / n
        }
    }
}

/// `⌈log₂ n⌉` for `n >= 1`.
pub fn height_limit(n: usize) -> usize {
    if n <= 1 {
        0
    } else {
        (usize::BITS - (n - 1).leading_zeros()) as usize
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ForestParams {
    pub n_estimators: usize,
    /// Fraction of features that are candidates at each node.
    pub max_features_frac: f64,
    /// Per-tree subsample size ψ; capped at the number of training rows.
    pub subsample_size: usize,
    pub seed: u64,
}

impl Default for ForestParams {
    fn default() -> Self {
        Self {
            n_estimators: DEFAULT_N_ESTIMATORS,
            max_features_frac: DEFAULT_MAX_FEATURES,
            subsample_size: DEFAULT_SUBSAMPLE,
            seed: 0,
        }
    }
}

impl ForestParams {
    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_estimators == 0 {
            return Err(Error::invalid("n_estimators must be at least 1"));
        }
        if !(self.max_features_frac > 0.0 && self.max_features_frac <= 1.0) {
            return Err(Error::invalid(format!(
                "max_features_frac must lie in (0, 1], got {}",
                self.max_features_frac
            )));
        }
        if self.subsample_size < 2 {
            return Err(Error::invalid("subsample_size must be at least 2"));
        }
        Ok(())
    }

    /// Number of candidate features per node for dimensionality `d`.
    pub fn candidate_features(&self, d: usize) -> usize {
        ((self.max_features_frac * d as f64).ceil() as usize).clamp(1, d)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Scalar")]
pub enum Node<T> {
    /// Rows with `x[feature] < split` go left.
    Internal {
        feature: usize,
        split: T,
        left: usize,
        right: usize,
    },
    Leaf {
        n_samples: usize,
    },
}

/// Flat tree; `nodes[0]` is the root.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Scalar")]
pub struct IsolationTree<T> {
    nodes: Vec<Node<T>>,
    n_features: usize,
    height_limit: usize,
}

impl<T: Scalar> IsolationTree<T> {
    /// Builds a tree from explicit nodes, checking that they form a single
    /// tree rooted at index 0 within the height limit.
    pub fn from_nodes(nodes: Vec<Node<T>>, n_features: usize, height_limit: usize) -> Result<Self> {
        let tree = Self {
            nodes,
            n_features,
            height_limit,
        };
        tree.check()?;
        Ok(tree)
    }

    fn check(&self) -> Result<()> {
        if self.nodes.is_empty() {
            return Err(Error::invalid("tree has no nodes"));
        }
        let mut seen = vec![false; self.nodes.len()];
        let mut stack = vec![(0usize, 0usize)];
        while let Some((i, depth)) = stack.pop() {
            if i >= self.nodes.len() || std::mem::replace(&mut seen[i], true) {
                return Err(Error::invalid(format!(
                    "node {i} is out of range or shared"
                )));
            }
            if depth > self.height_limit {
                return Err(Error::invalid("tree exceeds its height limit"));
            }
            if let Node::Internal {
                feature,
                split,
                left,
                right,
            } = self.nodes[i]
            {
                if feature >= self.n_features || !split.is_finite() {
                    return Err(Error::invalid(format!("node {i} has an invalid split")));
                }
                stack.push((left, depth + 1));
                stack.push((right, depth + 1));
            }
        }
        if seen.iter().any(|s| !s) {
            return Err(Error::invalid("tree has unreachable nodes"));
        }
        Ok(())
    }

    pub fn nodes(&self) -> &[Node<T>] {
        &self.nodes
    }

    pub fn n_features(&self) -> usize {
        self.n_features
    }

    pub fn height_limit(&self) -> usize {
        self.height_limit
    }

    /// Root-to-leaf walk: (edges traversed, leaf size).
    pub fn locate(&self, x: &[T]) -> (usize, usize) {
        let mut i = 0;
        let mut edges = 0;
        loop {
            match self.nodes[i] {
                Node::Internal {
                    feature,
                    split,
                    left,
                    right,
                } => {
                    i = if x[feature] < split { left } else { right };
                    edges += 1;
                }
                Node::Leaf { n_samples } => return (edges, n_samples),
            }
        }
    }

    /// Edges to the leaf plus `c(leaf size)`. Does not check `x.len()`.
    pub fn path_length_unchecked(&self, x: &[T]) -> T {
        let (edges, m) = self.locate(x);
        T::of(edges as f64) + average_path_length::<T>(m)
    }

    pub fn path_length(&self, x: &[T]) -> Result<T> {
        if x.len() != self.n_features {
            return Err(Error::DimensionMismatch {
                expected: self.n_features,
                actual: x.len(),
            });
        }
        Ok(self.path_length_unchecked(x))
    }

    pub fn leaf_sizes(&self) -> impl Iterator<Item = usize> + '_ {
        self.nodes.iter().filter_map(|n| match n {
            Node::Leaf { n_samples } => Some(*n_samples),
            Node::Internal { .. } => None,
        })
    }

    /// Longest root-to-leaf edge count.
    pub fn depth(&self) -> usize {
        let mut best = 0;
        let mut stack = vec![(0usize, 0usize)];
        while let Some((i, d)) = stack.pop() {
            match self.nodes[i] {
                Node::Internal { left, right, .. } => {
                    stack.push((left, d + 1));
                    stack.push((right, d + 1));
                }
                Node::Leaf { .. } => best = best.max(d),
            }
        }
        best
    }
}

struct TreeBuilder<'a, T> {
    data: &'a FeatureMatrix<T>,
    rng: Rng,
    candidates: usize,
    height_limit: usize,
    feature_order: Vec<usize>,
    nodes: Vec<Node<T>>,
}

impl<T: Scalar> TreeBuilder<'_, T> {
    fn grow(&mut self, rows: &mut [usize], depth: usize) -> usize {
        let id = self.nodes.len();
        self.nodes.push(Node::Leaf {
            n_samples: rows.len(),
        });
        if rows.len() <= 1 || depth >= self.height_limit {
            return id;
        }
        let Some((feature, split)) = self.choose_split(rows) else {
            return id;
        };

        let mut n_left = 0;
        for i in 0..rows.len() {
            if self.data.get(rows[i], feature) < split {
                rows.swap(i, n_left);
                n_left += 1;
            }
        }
        let (left_rows, right_rows) = rows.split_at_mut(n_left);
        let left = self.grow(left_rows, depth + 1);
        let right = self.grow(right_rows, depth + 1);
        self.nodes[id] = Node::Internal {
            feature,
            split,
            left,
            right,
        };
        id
    }

    /// Tries candidate features in a fresh random order (partial
    /// Fisher–Yates over `feature_order`) and returns the first one that is
    /// not constant on `rows`, with a threshold drawn uniformly strictly
    /// inside its range.
    fn choose_split(&mut self, rows: &[usize]) -> Option<(usize, T)> {
        let d = self.feature_order.len();
        for i in 0..self.candidates {
            let j = self.rng.random_range(i..d);
            self.feature_order.swap(i, j);
            let feature = self.feature_order[i];

            let first = self.data.get(rows[0], feature);
            let (lo, hi) = rows[1..].iter().fold((first, first), |(lo, hi), &r| {
                let v = self.data.get(r, feature);
                (lo.min(v), hi.max(v))
            });
            if lo >= hi {
                continue;
            }
            let u = T::of(self.rng.random::<f64>());
            let mut split = lo + (hi - lo) * u;
            if !(split > lo && split < hi) {
                split = lo + (hi - lo) / T::of(2.0);
                if !(split > lo && split < hi) {
                    // lo and hi are adjacent floats
                    continue;
                }
            }
            return Some((feature, split));
        }
        None
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Scalar")]
pub struct IsolationForest<T> {
    trees: Vec<IsolationTree<T>>,
    params: ForestParams,
    n_features: usize,
    /// Subsample size actually used: `min(params.subsample_size, n_rows)`.
    sample_size: usize,
    c_psi: T,
}

impl<T: Scalar> IsolationForest<T> {
    pub fn fit(data: &FeatureMatrix<T>, params: &ForestParams) -> Result<Self> {
        params.validate()?;
        if data.n_rows() < 2 {
            return Err(Error::invalid(format!(
                "isolation forest needs at least 2 rows, got {}",
                data.n_rows()
            )));
        }
        let n = data.n_rows();
        let d = data.n_cols();
        let sample_size = params.subsample_size.min(n);
        let limit = height_limit(sample_size);
        let candidates = params.candidate_features(d);

        let trees = (0..params.n_estimators)
            .into_par_iter()
            .map(|t| {
                let mut rng = substream(params.seed, t as u64);
                let mut rows = index::sample(&mut rng, n, sample_size).into_vec();
                let mut builder = TreeBuilder {
                    data,
                    rng,
                    candidates,
                    height_limit: limit,
                    feature_order: (0..d).collect(),
                    nodes: Vec::with_capacity(2 * sample_size),
                };
                builder.grow(&mut rows, 0);
                IsolationTree {
                    nodes: builder.nodes,
                    n_features: d,
                    height_limit: limit,
                }
            })
            .collect();

        Ok(Self {
            trees,
            params: params.clone(),
            n_features: d,
            sample_size,
            c_psi: average_path_length(sample_size),
        })
    }

    pub fn trees(&self) -> &[IsolationTree<T>] {
        &self.trees
    }

    pub fn params(&self) -> &ForestParams {
        &self.params
    }

    pub fn n_features(&self) -> usize {
        self.n_features
    }

    pub fn sample_size(&self) -> usize {
        self.sample_size
    }

    /// The normalizer `c(ψ)`.
    pub fn c_psi(&self) -> T {
        self.c_psi
    }

    fn check_dim(&self, d: usize) -> Result<()> {
        if d != self.n_features {
            return Err(Error::DimensionMismatch {
                expected: self.n_features,
                actual: d,
            });
        }
        Ok(())
    }

    /// `E[P](x)`, the mean path length over all trees.
    pub fn mean_path_length(&self, x: &[T]) -> Result<T> {
        self.check_dim(x.len())?;
        Ok(self.mean_path_length_unchecked(x))
    }

    fn mean_path_length_unchecked(&self, x: &[T]) -> T {
        let total: T = self.trees.iter().map(|t| t.path_length_unchecked(x)).sum();
        total / T::of(self.trees.len() as f64)
    }

    /// Maps a mean path length to the normality score.
    pub fn normality(&self, mean_path: T) -> T {
        T::of(0.5) - (-mean_path / self.c_psi).exp2()
    }

    pub fn score_one(&self, x: &[T]) -> Result<T> {
        Ok(self.normality(self.mean_path_length(x)?))
    }

    pub fn score_samples(&self, data: &FeatureMatrix<T>) -> Result<Vec<T>> {
        self.check_dim(data.n_cols())?;
        Ok((0..data.n_rows())
            .into_par_iter()
            .map(|i| self.normality(self.mean_path_length_unchecked(data.row(i))))
            .collect())
    }

    /// Assembles a forest from prebuilt trees (all sharing `n_features`).
    pub fn from_trees(
        trees: Vec<IsolationTree<T>>,
        params: ForestParams,
        sample_size: usize,
    ) -> Result<Self> {
        let forest = Self {
            n_features: trees.first().map_or(0, |t| t.n_features),
            c_psi: average_path_length(sample_size),
            trees,
            params,
            sample_size,
        };
        forest.check()?;
        Ok(forest)
    }

    fn check(&self) -> Result<()> {
        self.params.validate()?;
        if self.trees.len() != self.params.n_estimators {
            return Err(Error::invalid(format!(
                "{} trees but n_estimators = {}",
                self.trees.len(),
                self.params.n_estimators
            )));
        }
        if self.sample_size < 2 || self.sample_size > self.params.subsample_size {
            return Err(Error::invalid("sample size outside [2, subsample_size]"));
        }
        if self.c_psi != average_path_length(self.sample_size) {
            return Err(Error::invalid(
                "stored c(psi) does not match the sample size",
            ));
        }
        for t in &self.trees {
            if t.n_features != self.n_features {
                return Err(Error::invalid("trees disagree on dimensionality"));
            }
            t.check()?;
        }
        Ok(())
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(&ForestFileRef {
            format: FOREST_FORMAT,
            version: FOREST_VERSION,
            scalar: T::NAME,
            forest: self,
        })
        .expect("forest serializes")
    }

    pub fn from_json(text: &str, path: &Path) -> Result<Self> {
        let bad = |m: String| Error::Model {
            path: path.to_path_buf(),
            message: m,
        };
        let file: ForestFile<T> = serde_json::from_str(text).map_err(|e| bad(e.to_string()))?;
        if file.format != FOREST_FORMAT {
            return Err(bad(format!("not a forest file (format {:?})", file.format)));
        }
        if file.version != FOREST_VERSION {
            return Err(bad(format!(
                "unsupported forest file version {}",
                file.version
            )));
        }
        if file.scalar != T::NAME {
            return Err(bad(format!(
                "scalar is {}, expected {}",
                file.scalar,
                T::NAME
            )));
        }
        file.forest.check().map_err(|e| bad(e.to_string()))?;
        Ok(file.forest)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        fs::write(path, self.to_json()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text, path)
    }
}

/// On-disk layout, version 1:
/// `{"format": "deepif-isolation-forest", "version": 1, "scalar": "f64",
///   "forest": {"trees": [{"nodes": [...], "n_features", "height_limit"}],
///   "params", "n_features", "sample_size", "c_psi"}}`.
#[derive(Serialize)]
#[serde(bound = "T: Scalar")]
struct ForestFileRef<'a, T> {
    format: &'a str,
    version: u32,
    scalar: &'a str,
    forest: &'a IsolationForest<T>,
}

#[derive(Deserialize)]
#[serde(bound = "T: Scalar")]
struct ForestFile<T> {
    format: String,
    version: u32,
    scalar: String,
    forest: IsolationForest<T>,
}
