//! Class-conditional Gaussian baseline scored by Mahalanobis distance.
//!
//! The normality of `x` is `-min_k (x - μ_k)ᵀ Σ⁻¹ (x - μ_k)`, so larger is
//! more normal and the maximum, 0, is reached only at a class mean.

use std::fmt;
use std::fs;
use std::path::Path;
use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor_io::{FeatureMatrix, LabeledDataset};

const GAUSSIAN_FORMAT: &str = "deepif-gaussian";
const GAUSSIAN_VERSION: u32 = 1;

/// Relative ridge used by [`Ridge::Auto`], as a multiple of `trace(Σ) / D`.
pub const AUTO_RIDGE: f64 = 1e-6;
/// Escalation stops once the ridge would exceed this multiple of `trace(Σ) / D`.
pub const MAX_RIDGE: f64 = 1e-1;
/// First non-zero ridge tried when escalating from zero, relative to `trace(Σ) / D`.
const FIRST_ESCALATION: f64 = 1e-10;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum CovarianceMode {
    /// One covariance pooled over all classes.
    #[default]
    Tied,
    PerClass,
}

impl fmt::Display for CovarianceMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            CovarianceMode::Tied => "tied",
            CovarianceMode::PerClass => "per-class",
        })
    }
}

impl FromStr for CovarianceMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "tied" => Ok(CovarianceMode::Tied),
            "per-class" => Ok(CovarianceMode::PerClass),
            _ => Err(Error::invalid(format!(
                "unknown covariance mode {s:?} (expected tied or per-class)"
            ))),
        }
    }
}

/// Diagonal regularizer added before factorization.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(try_from = "RidgeRepr", into = "RidgeRepr")]
pub enum Ridge {
    /// `1e-6 · trace(Σ) / D`.
    #[default]
    Auto,
    Fixed(f64),
}

#[derive(Serialize, Deserialize)]
#[serde(untagged)]
enum RidgeRepr {
    Value(f64),
    Name(String),
}

impl TryFrom<RidgeRepr> for Ridge {
    type Error = Error;

    fn try_from(r: RidgeRepr) -> Result<Self> {
        match r {
            RidgeRepr::Value(v) => Ridge::fixed(v),
            RidgeRepr::Name(s) => s.parse(),
        }
    }
}

impl From<Ridge> for RidgeRepr {
    fn from(r: Ridge) -> Self {
        match r {
            Ridge::Auto => RidgeRepr::Name("auto".into()),
            Ridge::Fixed(v) => RidgeRepr::Value(v),
        }
    }
}

impl Ridge {
    pub fn fixed(v: f64) -> Result<Self> {
        if v.is_finite() && v >= 0.0 {
            Ok(Ridge::Fixed(v))
        } else {
            Err(Error::invalid(format!(
                "ridge must be finite and >= 0, got {v}"
            )))
        }
    }

    fn resolve(self, scale: f64) -> f64 {
        match self {
            Ridge::Auto => AUTO_RIDGE * scale,
            Ridge::Fixed(v) => v,
        }
    }
}

impl fmt::Display for Ridge {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Ridge::Auto => f.write_str("auto"),
            Ridge::Fixed(v) => write!(f, "{v}"),
        }
    }
}

impl FromStr for Ridge {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        if s == "auto" {
            return Ok(Ridge::Auto);
        }
        let v: f64 = s.parse().map_err(|_| {
            Error::invalid(format!("ridge must be a number or \"auto\", got {s:?}"))
        })?;
        Ridge::fixed(v)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct GaussianParams {
    #[serde(default)]
    pub mode: CovarianceMode,
    #[serde(default)]
    pub ridge: Ridge,
}

/// Lower-triangular Cholesky factor, row-major `dim × dim`.
#[derive(Debug, Clone, PartialEq)]
pub struct Cholesky<T> {
    lower: Vec<T>,
    dim: usize,
}

impl<T: Scalar> Cholesky<T> {
    /// Factors a symmetric matrix (only the lower triangle is read).
    /// Returns `None` unless every pivot is comfortably positive.
    pub fn factor(a: &[T], dim: usize) -> Option<Self> {
        assert_eq!(a.len(), dim * dim);
        let max_diag = (0..dim)
            .map(|i| a[i * dim + i].abs())
            .fold(T::zero(), T::max);
        let tol = T::epsilon() * T::of(dim as f64) * max_diag;
        let mut l = vec![T::zero(); dim * dim];
        for j in 0..dim {
            let row_j = &l[j * dim..j * dim + j];
            let pivot = a[j * dim + j] - row_j.iter().map(|&v| v * v).sum::<T>();
            if !pivot.is_finite() || pivot <= tol {
                return None;
            }
            let diag = pivot.sqrt();
            l[j * dim + j] = diag;
            for i in j + 1..dim {
                let (head, tail) = l.split_at_mut(i * dim);
                let row_j = &head[j * dim..j * dim + j];
                let row_i = &mut tail[..dim];
                let dot: T = row_i[..j].iter().zip(row_j).map(|(&x, &y)| x * y).sum();
                row_i[j] = (a[i * dim + j] - dot) / diag;
            }
        }
        Some(Self { lower: l, dim })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn lower(&self) -> &[T] {
        &self.lower
    }

    /// Solves `L y = b` in place.
    pub fn solve_lower_in_place(&self, b: &mut [T]) {
        let d = self.dim;
        for i in 0..d {
            let row = &self.lower[i * d..i * d + i];
            let dot: T = row.iter().zip(&b[..i]).map(|(&l, &y)| l * y).sum();
            b[i] = (b[i] - dot) / self.lower[i * d + i];
        }
    }

    /// `vᵀ (L Lᵀ)⁻¹ v`.
    pub fn quadratic_form(&self, v: &[T]) -> T {
        let mut y = v.to_vec();
        self.solve_lower_in_place(&mut y);
        y.iter().map(|&t| t * t).sum()
    }
}

/// One factored covariance and the ridge that made it positive-definite.
#[derive(Debug, Clone, PartialEq)]
pub struct CovarianceFactor<T> {
    /// Covariance before the ridge is added.
    covariance: Vec<T>,
    ridge: T,
    cholesky: Cholesky<T>,
}

impl<T: Scalar> CovarianceFactor<T> {
    pub fn covariance(&self) -> &[T] {
        &self.covariance
    }

    pub fn ridge(&self) -> T {
        self.ridge
    }

    pub fn cholesky(&self) -> &Cholesky<T> {
        &self.cholesky
    }

    fn factor_with(covariance: Vec<T>, dim: usize, ridge: T) -> Option<Self> {
        let mut a = covariance.clone();
        for i in 0..dim {
            a[i * dim + i] = a[i * dim + i] + ridge;
        }
        Cholesky::factor(&a, dim).map(|cholesky| Self {
            covariance,
            ridge,
            cholesky,
        })
    }

    /// Factors `Σ + ridge·I`, escalating the ridge ×10 on failure until it
    /// would exceed `MAX_RIDGE · trace(Σ) / D`.
    fn factor_escalating(covariance: Vec<T>, dim: usize, ridge: Ridge) -> Result<Self> {
        let scale = (0..dim)
            .map(|i| covariance[i * dim + i].as_f64())
            .sum::<f64>()
            / dim as f64;
        let ceiling = MAX_RIDGE * scale;
        let mut r = ridge.resolve(scale);
        loop {
            if let Some(f) = Self::factor_with(covariance.clone(), dim, T::of(r)) {
                return Ok(f);
            }
            let next = if r == 0.0 {
                FIRST_ESCALATION * scale
            } else {
                r * 10.0
            };
            if next.is_nan() || next <= r || next > ceiling {
                return Err(Error::SingularCovariance { ridge: r });
            }
            r = next;
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GaussianClassModel<T> {
    means: Vec<Vec<T>>,
    /// One entry in tied mode, one per class otherwise.
    factors: Vec<CovarianceFactor<T>>,
    mode: CovarianceMode,
    n_features: usize,
}

/// `Σ_rows (x - μ)(x - μ)ᵀ` for the given centered rows, as a symmetric
/// row-major matrix. Each entry is summed in row order.
fn scatter<T: Scalar>(centered: &[Vec<T>], dim: usize) -> Vec<T> {
    // column-major copy so each entry is a contiguous dot product
    let n = centered.len();
    let mut cols = vec![T::zero(); dim * n];
    for (i, row) in centered.iter().enumerate() {
        for (a, &v) in row.iter().enumerate() {
            cols[a * n + i] = v;
        }
    }
    let upper: Vec<Vec<T>> = (0..dim)
        .into_par_iter()
        .map(|a| {
            let ca = &cols[a * n..(a + 1) * n];
            (a..dim)
                .map(|b| {
                    let cb = &cols[b * n..(b + 1) * n];
                    ca.iter().zip(cb).map(|(&x, &y)| x * y).sum()
                })
                .collect()
        })
        .collect();
    let mut out = vec![T::zero(); dim * dim];
    for (a, row) in upper.iter().enumerate() {
        for (off, &v) in row.iter().enumerate() {
            let b = a + off;
            out[a * dim + b] = v;
            out[b * dim + a] = v;
        }
    }
    out
}

impl<T: Scalar> GaussianClassModel<T> {
    pub fn fit(data: &LabeledDataset<T>, params: &GaussianParams) -> Result<Self> {
        let x = data.features();
        let dim = x.n_cols();
        let k = data.n_classes();
        let mut means = Vec::with_capacity(k);
        let mut centered_by_class = Vec::with_capacity(k);
        for class in 0..k {
            let rows = data.class_rows(class);
            if rows.len() < 2 {
                return Err(Error::invalid(format!(
                    "class {:?} has {} samples, need at least 2",
                    data.class_names()[class],
                    rows.len()
                )));
            }
            let n = T::of(rows.len() as f64);
            let mut mean = vec![T::zero(); dim];
            for &r in &rows {
                for (m, &v) in mean.iter_mut().zip(x.row(r)) {
                    *m = *m + v;
                }
            }
            mean.iter_mut().for_each(|m| *m = *m / n);
            let centered: Vec<Vec<T>> = rows
                .iter()
                .map(|&r| x.row(r).iter().zip(&mean).map(|(&v, &m)| v - m).collect())
                .collect();
            means.push(mean);
            centered_by_class.push(centered);
        }

        let factors = match params.mode {
            CovarianceMode::Tied => {
                let pooled: Vec<Vec<T>> = centered_by_class.into_iter().flatten().collect();
                let n = T::of(pooled.len() as f64);
                let mut cov = scatter(&pooled, dim);
                cov.iter_mut().for_each(|v| *v = *v / n);
                vec![CovarianceFactor::factor_escalating(cov, dim, params.ridge)?]
            }
            CovarianceMode::PerClass => centered_by_class
                .iter()
                .zip(data.class_names())
                .map(|(c, name)| {
                    let n = T::of(c.len() as f64);
                    let mut cov = scatter(c, dim);
                    cov.iter_mut().for_each(|v| *v = *v / n);
                    CovarianceFactor::factor_escalating(cov, dim, params.ridge)
                        .map_err(|e| e.context(format!("class {name:?}")))
                })
                .collect::<Result<_>>()?,
        };

        Ok(Self {
            means,
            factors,
            mode: params.mode,
            n_features: dim,
        })
    }

    /// Model with given means and covariances (row-major `D × D`), factored
    /// with the given ridge and no escalation.
    pub fn from_moments(
        means: Vec<Vec<T>>,
        covariances: Vec<Vec<T>>,
        mode: CovarianceMode,
        ridge: T,
    ) -> Result<Self> {
        let dim = means.first().map_or(0, Vec::len);
        if dim == 0 || means.iter().any(|m| m.len() != dim) {
            return Err(Error::invalid(
                "class means must share a non-zero dimension",
            ));
        }
        let expected = match mode {
            CovarianceMode::Tied => 1,
            CovarianceMode::PerClass => means.len(),
        };
        if covariances.len() != expected {
            return Err(Error::invalid(format!(
                "{mode} mode needs {expected} covariance(s), got {}",
                covariances.len()
            )));
        }
        let factors = covariances
            .into_iter()
            .map(|c| {
                if c.len() != dim * dim {
                    return Err(Error::invalid("covariance has the wrong size"));
                }
                CovarianceFactor::factor_with(c, dim, ridge).ok_or(Error::SingularCovariance {
                    ridge: ridge.as_f64(),
                })
            })
            .collect::<Result<_>>()?;
        Ok(Self {
            means,
            factors,
            mode,
            n_features: dim,
        })
    }

    pub fn means(&self) -> &[Vec<T>] {
        &self.means
    }

    pub fn factors(&self) -> &[CovarianceFactor<T>] {
        &self.factors
    }

    pub fn mode(&self) -> CovarianceMode {
        self.mode
    }

    pub fn n_features(&self) -> usize {
        self.n_features
    }

    pub fn n_classes(&self) -> usize {
        self.means.len()
    }

    fn factor_for(&self, class: usize) -> &CovarianceFactor<T> {
        match self.mode {
            CovarianceMode::Tied => &self.factors[0],
            CovarianceMode::PerClass => &self.factors[class],
        }
    }

    /// Squared Mahalanobis distance from `x` to each class mean.
    pub fn squared_distances(&self, x: &[T]) -> Result<Vec<T>> {
        if x.len() != self.n_features {
            return Err(Error::DimensionMismatch {
                expected: self.n_features,
                actual: x.len(),
            });
        }
        Ok(self.squared_distances_unchecked(x))
    }

    fn squared_distances_unchecked(&self, x: &[T]) -> Vec<T> {
        self.means
            .iter()
            .enumerate()
            .map(|(k, mu)| {
                let v: Vec<T> = x.iter().zip(mu).map(|(&a, &b)| a - b).collect();
                self.factor_for(k).cholesky.quadratic_form(&v)
            })
            .collect()
    }

    fn score_row(&self, x: &[T]) -> T {
        let best = self
            .squared_distances_unchecked(x)
            .into_iter()
            .fold(T::infinity(), T::min);
        -best
    }

    pub fn score(&self, data: &FeatureMatrix<T>) -> Result<Vec<T>> {
        if data.n_cols() != self.n_features {
            return Err(Error::DimensionMismatch {
                expected: self.n_features,
                actual: data.n_cols(),
            });
        }
        Ok((0..data.n_rows())
            .into_par_iter()
            .map(|i| self.score_row(data.row(i)))
            .collect())
    }

    pub fn to_json(&self) -> String {
        let file = GaussianFile {
            format: GAUSSIAN_FORMAT.into(),
            version: GAUSSIAN_VERSION,
            scalar: T::NAME.into(),
            mode: self.mode,
            means: self.means.clone(),
            covariances: self.factors.iter().map(|f| f.covariance.clone()).collect(),
            ridges: self.factors.iter().map(|f| f.ridge).collect(),
        };
        serde_json::to_string(&file).expect("gaussian model serializes")
    }

    pub fn from_json(text: &str, path: &Path) -> Result<Self> {
        let bad = |m: String| Error::Model {
            path: path.to_path_buf(),
            message: m,
        };
        let file: GaussianFile<T> = serde_json::from_str(text).map_err(|e| bad(e.to_string()))?;
        if file.format != GAUSSIAN_FORMAT {
            return Err(bad(format!(
                "not a gaussian model (format {:?})",
                file.format
            )));
        }
        if file.version != GAUSSIAN_VERSION {
            return Err(bad(format!(
                "unsupported gaussian model version {}",
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
        if file.ridges.len() != file.covariances.len() {
            return Err(bad("ridges and covariances differ in length".into()));
        }
        let dim = file.means.first().map_or(0, Vec::len);
        if dim == 0 || file.means.iter().any(|m| m.len() != dim) {
            return Err(bad("class means must share a non-zero dimension".into()));
        }
        let expected = match file.mode {
            CovarianceMode::Tied => 1,
            CovarianceMode::PerClass => file.means.len(),
        };
        if file.covariances.len() != expected {
            return Err(bad(format!("expected {expected} covariance(s)")));
        }
        let factors = file
            .covariances
            .into_iter()
            .zip(file.ridges)
            .map(|(c, r)| {
                if c.len() != dim * dim {
                    return Err(bad("covariance has the wrong size".into()));
                }
                CovarianceFactor::factor_with(c, dim, r)
                    .ok_or_else(|| bad("stored covariance does not factor".into()))
            })
            .collect::<Result<_>>()?;
        Ok(Self {
            means: file.means,
            factors,
            mode: file.mode,
            n_features: dim,
        })
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

/// On-disk layout, version 1: means, covariances before the ridge, and
/// the ridge applied to each. Factors are recomputed on load.
#[derive(Serialize, Deserialize)]
#[serde(bound = "T: Scalar")]
struct GaussianFile<T> {
    format: String,
    version: u32,
    scalar: String,
    mode: CovarianceMode,
    means: Vec<Vec<T>>,
    covariances: Vec<Vec<T>>,
    ridges: Vec<T>,
}
