//! Feature matrices, label files and score files.
//!
//! Matrices are read from headerless CSV or NPY v1.0 (2-D, C-order,
//! little-endian `<f4`/`<f8`). Everything is widened to `f64` on load.

pub mod npy;

use std::collections::BTreeSet;
use std::fmt;
use std::fs;
use std::io::Write;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Dense row-major `n_rows × n_cols` matrix with finite entries.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMatrix<T> {
    data: Vec<T>,
    n_rows: usize,
    n_cols: usize,
}

impl<T: Scalar> FeatureMatrix<T> {
    pub fn new(data: Vec<T>, n_rows: usize, n_cols: usize) -> Result<Self> {
        if n_rows == 0 || n_cols == 0 {
            return Err(Error::invalid(format!(
                "matrix must have at least one row and one column, got {n_rows}x{n_cols}"
            )));
        }
        if data.len() != n_rows * n_cols {
            return Err(Error::invalid(format!(
                "{} values do not fill a {n_rows}x{n_cols} matrix",
                data.len()
            )));
        }
        if let Some(i) = data.iter().position(|v| !v.is_finite()) {
            return Err(Error::invalid(format!(
                "non-finite value {} at row {}, column {}",
                data[i],
                i / n_cols,
                i % n_cols
            )));
        }
        Ok(Self {
            data,
            n_rows,
            n_cols,
        })
    }

    pub fn from_rows<R: AsRef<[T]>>(rows: &[R]) -> Result<Self> {
        let n_cols = rows.first().map_or(0, |r| r.as_ref().len());
        let mut data = Vec::with_capacity(rows.len() * n_cols);
        for (i, r) in rows.iter().enumerate() {
            let r = r.as_ref();
            if r.len() != n_cols {
                return Err(Error::invalid(format!(
                    "row {i} has {} values, expected {n_cols}",
                    r.len()
                )));
            }
            data.extend_from_slice(r);
        }
        Self::new(data, rows.len(), n_cols)
    }

    pub fn n_rows(&self) -> usize {
        self.n_rows
    }

    pub fn n_cols(&self) -> usize {
        self.n_cols
    }

    pub fn as_slice(&self) -> &[T] {
        &self.data
    }

    pub fn row(&self, i: usize) -> &[T] {
        &self.data[i * self.n_cols..(i + 1) * self.n_cols]
    }

    pub fn rows(&self) -> impl ExactSizeIterator<Item = &[T]> + '_ {
        self.data.chunks_exact(self.n_cols)
    }

    pub fn get(&self, row: usize, col: usize) -> T {
        self.data[row * self.n_cols + col]
    }

    /// New matrix holding the given rows, in the given order.
    pub fn select_rows(&self, indices: &[usize]) -> Result<Self> {
        let mut data = Vec::with_capacity(indices.len() * self.n_cols);
        for &i in indices {
            if i >= self.n_rows {
                return Err(Error::invalid(format!(
                    "row index {i} out of range for {} rows",
                    self.n_rows
                )));
            }
            data.extend_from_slice(self.row(i));
        }
        Self::new(data, indices.len(), self.n_cols)
    }

    /// Converts every entry to another scalar type.
    pub fn cast<U: Scalar>(&self) -> FeatureMatrix<U> {
        FeatureMatrix {
            data: self.data.iter().map(|v| U::of(v.as_f64())).collect(),
            n_rows: self.n_rows,
            n_cols: self.n_cols,
        }
    }
}

/// Features plus per-row class indices into `class_names`.
#[derive(Debug, Clone, PartialEq)]
pub struct LabeledDataset<T> {
    features: FeatureMatrix<T>,
    labels: Vec<usize>,
    class_names: Vec<String>,
}

impl<T: Scalar> LabeledDataset<T> {
    pub fn new(
        features: FeatureMatrix<T>,
        labels: Vec<usize>,
        class_names: Vec<String>,
    ) -> Result<Self> {
        if labels.len() != features.n_rows() {
            return Err(Error::invalid(format!(
                "{} labels for {} feature rows",
                labels.len(),
                features.n_rows()
            )));
        }
        let mut seen = BTreeSet::new();
        for name in &class_names {
            if name.is_empty() {
                return Err(Error::invalid("empty class name"));
            }
            if !seen.insert(name.as_str()) {
                return Err(Error::invalid(format!("duplicate class name {name:?}")));
            }
        }
        if let Some(&bad) = labels.iter().find(|&&l| l >= class_names.len()) {
            return Err(Error::invalid(format!(
                "label index {bad} out of range for {} classes",
                class_names.len()
            )));
        }
        Ok(Self {
            features,
            labels,
            class_names,
        })
    }

    pub fn features(&self) -> &FeatureMatrix<T> {
        &self.features
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    pub fn class_names(&self) -> &[String] {
        &self.class_names
    }

    pub fn n_classes(&self) -> usize {
        self.class_names.len()
    }

    /// Row indices carrying label `class`, ascending.
    pub fn class_rows(&self, class: usize) -> Vec<usize> {
        self.labels
            .iter()
            .enumerate()
            .filter_map(|(i, &l)| (l == class).then_some(i))
            .collect()
    }

    pub fn class_index(&self, name: &str) -> Option<usize> {
        self.class_names.iter().position(|n| n == name)
    }
}

/// Network depth a feature matrix was tapped from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum LayerTag {
    #[serde(rename = "f-1")]
    F1,
    #[serde(rename = "f-2")]
    F2,
    #[serde(rename = "f-3")]
    F3,
    #[serde(rename = "f-4")]
    F4,
}

impl LayerTag {
    pub const ALL: [LayerTag; 4] = [LayerTag::F1, LayerTag::F2, LayerTag::F3, LayerTag::F4];

    pub fn as_str(self) -> &'static str {
        match self {
            LayerTag::F1 => "f-1",
            LayerTag::F2 => "f-2",
            LayerTag::F3 => "f-3",
            LayerTag::F4 => "f-4",
        }
    }
}

impl fmt::Display for LayerTag {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for LayerTag {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        LayerTag::ALL
            .into_iter()
            .find(|t| t.as_str() == s)
            .ok_or_else(|| Error::invalid(format!("unknown layer tag {s:?} (expected f-1..f-4)")))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MatrixFormat {
    Csv,
    Npy,
}

impl MatrixFormat {
    /// `.npy` files are NPY, everything else CSV.
    pub fn from_path(path: &Path) -> Self {
        match path.extension().and_then(|e| e.to_str()) {
            Some(e) if e.eq_ignore_ascii_case("npy") => MatrixFormat::Npy,
            _ => MatrixFormat::Csv,
        }
    }
}

fn read_bytes(path: &Path) -> Result<Vec<u8>> {
    fs::read(path).map_err(|e| Error::io(path, e))
}

pub fn load_matrix(path: impl AsRef<Path>, format: MatrixFormat) -> Result<FeatureMatrix<f64>> {
    let path = path.as_ref();
    let bytes = read_bytes(path)?;
    match format {
        MatrixFormat::Npy => npy::decode(&bytes, path),
        MatrixFormat::Csv => parse_csv(&bytes, path),
    }
}

/// [`load_matrix`] with the format picked from the file extension.
pub fn load_matrix_auto(path: impl AsRef<Path>) -> Result<FeatureMatrix<f64>> {
    let path = path.as_ref();
    load_matrix(path, MatrixFormat::from_path(path))
}

fn parse_csv(bytes: &[u8], path: &Path) -> Result<FeatureMatrix<f64>> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(false)
        .flexible(false)
        .trim(csv::Trim::All)
        .from_reader(bytes);
    let mut data = Vec::new();
    let mut n_cols = 0;
    let mut n_rows = 0;
    for (i, record) in reader.records().enumerate() {
        let record = record.map_err(|e| Error::format(path, e.to_string()))?;
        if i == 0 {
            n_cols = record.len();
        }
        for (j, field) in record.iter().enumerate() {
            let v: f64 = field.parse().map_err(|_| {
                Error::format(
                    path,
                    format!("row {}, column {}: not a number {field:?}", i + 1, j + 1),
                )
            })?;
            if !v.is_finite() {
                return Err(Error::format(
                    path,
                    format!(
                        "row {}, column {}: non-finite value {field:?}",
                        i + 1,
                        j + 1
                    ),
                ));
            }
            data.push(v);
        }
        n_rows += 1;
    }
    FeatureMatrix::new(data, n_rows, n_cols).map_err(|e| match e {
        Error::InvalidInput(m) => Error::format(path, m),
        other => other,
    })
}

pub fn save_matrix_npy<T: Scalar>(path: impl AsRef<Path>, matrix: &FeatureMatrix<T>) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, npy::encode(matrix)).map_err(|e| Error::io(path, e))
}

pub fn save_matrix_csv<T: Scalar>(path: impl AsRef<Path>, matrix: &FeatureMatrix<T>) -> Result<()> {
    let path = path.as_ref();
    let mut out = String::new();
    for row in matrix.rows() {
        let line: Vec<String> = row.iter().map(|v| format!("{:.16e}", v.as_f64())).collect();
        out.push_str(&line.join(","));
        out.push('\n');
    }
    fs::write(path, out).map_err(|e| Error::io(path, e))
}

/// Reads one class name per line. Returns per-line indices into the sorted
/// vocabulary of distinct names.
pub fn load_labels(path: impl AsRef<Path>) -> Result<(Vec<usize>, Vec<String>)> {
    let path = path.as_ref();
    let bytes = read_bytes(path)?;
    let text = String::from_utf8(bytes).map_err(|_| Error::format(path, "labels are not UTF-8"))?;
    parse_labels(&text).map_err(|m| Error::format(path, m))
}

fn parse_labels(text: &str) -> std::result::Result<(Vec<usize>, Vec<String>), String> {
    let mut names = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let name = line.trim();
        if name.is_empty() {
            return Err(format!("line {} is empty", i + 1));
        }
        names.push(name);
    }
    if names.is_empty() {
        return Err("no labels".into());
    }
    let vocab: Vec<String> = names
        .iter()
        .copied()
        .collect::<BTreeSet<_>>()
        .into_iter()
        .map(str::to_owned)
        .collect();
    let labels = names
        .iter()
        .map(|n| {
            vocab
                .binary_search_by(|v| v.as_str().cmp(n))
                .expect("name is in vocab")
        })
        .collect();
    Ok((labels, vocab))
}

pub fn save_labels(path: impl AsRef<Path>, labels: &[usize], class_names: &[String]) -> Result<()> {
    let path = path.as_ref();
    let mut out = String::new();
    for &l in labels {
        out.push_str(&class_names[l]);
        out.push('\n');
    }
    fs::write(path, out).map_err(|e| Error::io(path, e))
}

/// Formats scores one per line with 17 significant digits.
pub fn format_scores<T: Scalar>(scores: &[T]) -> Result<String> {
    let mut out = String::with_capacity(scores.len() * 24);
    for (i, s) in scores.iter().enumerate() {
        if !s.is_finite() {
            return Err(Error::invalid(format!("score {i} is not finite ({s})")));
        }
        out.push_str(&format!("{:.16e}\n", s.as_f64()));
    }
    Ok(out)
}

/// Writes the score file. Refuses (without touching the file) if any score
/// is non-finite.
pub fn save_scores<T: Scalar>(path: impl AsRef<Path>, scores: &[T]) -> Result<()> {
    let path = path.as_ref();
    let text = format_scores(scores)?;
    let mut file = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    file.write_all(text.as_bytes())
        .map_err(|e| Error::io(path, e))
}

pub fn load_scores(path: impl AsRef<Path>) -> Result<Vec<f64>> {
    let path = path.as_ref();
    let bytes = read_bytes(path)?;
    let text = String::from_utf8(bytes).map_err(|_| Error::format(path, "scores are not UTF-8"))?;
    let mut scores = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        let v: f64 = line
            .parse()
            .map_err(|_| Error::format(path, format!("line {}: not a number {line:?}", i + 1)))?;
        if !v.is_finite() {
            return Err(Error::format(
                path,
                format!("line {}: non-finite score", i + 1),
            ));
        }
        scores.push(v);
    }
    Ok(scores)
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::path::PathBuf;

    fn p() -> PathBuf {
        PathBuf::from("mem.csv")
    }

    #[test]
    fn csv_basic() {
        let m = parse_csv(b"1.0,2.0\n3.0,4.0", &p()).unwrap();
        assert_eq!(m.n_rows(), 2);
        assert_eq!(m.as_slice(), &[1.0, 2.0, 3.0, 4.0]);
    }

    #[test]
    fn csv_crlf_and_whitespace() {
        let m = parse_csv(b"1, 2\r\n 3,4\r\n", &p()).unwrap();
        assert_eq!(m.as_slice(), &[1.0, 2.0, 3.0, 4.0]);
    }

    #[test]
    fn csv_rejects_nan_and_inf() {
        assert!(matches!(
            parse_csv(b"1.0,nan\n", &p()),
            Err(Error::Format { .. })
        ));
        assert!(matches!(
            parse_csv(b"inf\n", &p()),
            Err(Error::Format { .. })
        ));
    }

    #[test]
    fn csv_rejects_ragged_and_empty() {
        assert!(matches!(
            parse_csv(b"1,2\n3\n", &p()),
            Err(Error::Format { .. })
        ));
        assert!(matches!(parse_csv(b"", &p()), Err(Error::Format { .. })));
        assert!(matches!(
            parse_csv(b"1,x\n", &p()),
            Err(Error::Format { .. })
        ));
    }

    #[test]
    fn labels_sorted_vocab() {
        let (labels, names) = parse_labels("NV\nMEL\nNV\n").unwrap();
        assert_eq!(names, vec!["MEL", "NV"]);
        assert_eq!(labels, vec![1, 0, 1]);
    }

    #[test]
    fn labels_eight_classes() {
        let text = "MEL\nNV\nBCC\nAK\nBKL\nDF\nVASC\nSCC\nNV\n";
        let (labels, names) = parse_labels(text).unwrap();
        assert_eq!(names.len(), 8);
        assert_eq!(labels.len(), 9);
    }

    #[test]
    fn labels_reject_empty() {
        assert!(parse_labels("").is_err());
        assert!(parse_labels("A\n\nB\n").is_err());
    }

    #[test]
    fn scores_format_roundtrip() {
        let text = format_scores(&[0.0f64, -0.5, 0.5, 0.1 + 0.2]).unwrap();
        let back: Vec<f64> = text.lines().map(|l| l.parse().unwrap()).collect();
        assert_eq!(back, vec![0.0, -0.5, 0.5, 0.1 + 0.2]);
        assert!(format_scores(&[f64::NAN]).is_err());
    }

    #[test]
    fn matrix_invariants() {
        assert!(FeatureMatrix::<f64>::new(vec![], 0, 3).is_err());
        assert!(FeatureMatrix::new(vec![1.0f64, 2.0], 1, 3).is_err());
        assert!(FeatureMatrix::new(vec![f64::INFINITY], 1, 1).is_err());
        let m = FeatureMatrix::from_rows(&[[1.0f64, 2.0], [3.0, 4.0]]).unwrap();
        assert_eq!(m.row(1), &[3.0, 4.0]);
        assert_eq!(
            m.select_rows(&[1, 1]).unwrap().as_slice(),
            &[3.0, 4.0, 3.0, 4.0]
        );
        let c: FeatureMatrix<f32> = m.cast();
        assert_eq!(c.as_slice(), &[1.0f32, 2.0, 3.0, 4.0]);
    }

    #[test]
    fn dataset_invariants() {
        let m = FeatureMatrix::from_rows(&[[1.0f64], [2.0]]).unwrap();
        assert!(LabeledDataset::new(m.clone(), vec![0], vec!["a".into()]).is_err());
        assert!(LabeledDataset::new(m.clone(), vec![0, 2], vec!["a".into(), "b".into()]).is_err());
        assert!(LabeledDataset::new(m.clone(), vec![0, 0], vec!["a".into(), "a".into()]).is_err());
        assert!(LabeledDataset::new(m.clone(), vec![0, 0], vec!["".into()]).is_err());
        let d = LabeledDataset::new(m, vec![1, 0], vec!["a".into(), "b".into()]).unwrap();
        assert_eq!(d.class_rows(1), vec![0]);
    }

    #[test]
    fn layer_tags() {
        assert_eq!("f-3".parse::<LayerTag>().unwrap(), LayerTag::F3);
        assert!("f-5".parse::<LayerTag>().is_err());
        assert_eq!(serde_json::to_string(&LayerTag::F2).unwrap(), "\"f-2\"");
    }
}
