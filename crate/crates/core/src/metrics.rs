//! Threshold-free OOD metrics.
//!
//! In-distribution is the positive class and a higher score means "more
//! in-distribution". Thresholds are the distinct score values, so tied
//! scores always move together.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::Scalar;

pub const HISTOGRAM_BINS: usize = 50;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub auroc: f64,
    pub aupr_in: f64,
    pub aupr_out: f64,
    pub tnr_at_95tpr: f64,
    pub n_in: usize,
    pub n_out: usize,
    /// `(fpr, tpr)` from `(0, 0)` to `(1, 1)`.
    pub roc_points: Vec<(f64, f64)>,
    /// `(recall, precision)`, in-distribution positive.
    pub pr_in_points: Vec<(f64, f64)>,
    /// `(recall, precision)`, OOD positive.
    pub pr_out_points: Vec<(f64, f64)>,
}

/// Cumulative `(positives, negatives)` at or above each distinct score,
/// walking thresholds from high to low.
fn cumulative_counts<T: Scalar>(pos: &[T], neg: &[T]) -> Vec<(usize, usize)> {
    let mut all: Vec<(T, bool)> = pos
        .iter()
        .map(|&s| (s, true))
        .chain(neg.iter().map(|&s| (s, false)))
        .collect();
    all.sort_by(|a, b| b.0.total_cmp(&a.0));
    let mut out = Vec::new();
    let (mut tp, mut fp) = (0, 0);
    for (i, &(s, is_pos)) in all.iter().enumerate() {
        if is_pos {
            tp += 1;
        } else {
            fp += 1;
        }
        if all.get(i + 1).is_none_or(|next| next.0 != s) {
            out.push((tp, fp));
        }
    }
    out
}

/// Step-wise (non-interpolated) average precision plus the PR points,
/// starting from `(0, 1)`.
fn average_precision(counts: &[(usize, usize)], n_pos: usize) -> (f64, Vec<(f64, f64)>) {
    let mut ap = 0.0;
    let mut prev_tp = 0;
    let mut points = Vec::with_capacity(counts.len() + 1);
    points.push((0.0, 1.0));
    for &(tp, fp) in counts {
        let precision = tp as f64 / (tp + fp) as f64;
        ap += (tp - prev_tp) as f64 / n_pos as f64 * precision;
        prev_tp = tp;
        points.push((tp as f64 / n_pos as f64, precision));
    }
    (ap, points)
}

fn validate<T: Scalar>(name: &str, scores: &[T]) -> Result<()> {
    if scores.is_empty() {
        return Err(Error::invalid(format!("{name} scores are empty")));
    }
    if let Some(i) = scores.iter().position(|s| !s.is_finite()) {
        return Err(Error::invalid(format!("{name} score {i} is not finite")));
    }
    Ok(())
}

pub fn evaluate<T: Scalar>(in_scores: &[T], out_scores: &[T]) -> Result<EvalReport> {
    validate("in-distribution", in_scores)?;
    validate("out-of-distribution", out_scores)?;
    let n_in = in_scores.len();
    let n_out = out_scores.len();

    let counts = cumulative_counts(in_scores, out_scores);

    // trapezoid area in units of 1 / (2 n_in n_out), exact in integers
    let mut twice_area: u128 = 0;
    let (mut prev_tp, mut prev_fp) = (0usize, 0usize);
    let mut roc_points = Vec::with_capacity(counts.len() + 1);
    roc_points.push((0.0, 0.0));
    let mut tnr_at_95tpr = None;
    for &(tp, fp) in &counts {
        twice_area += (fp - prev_fp) as u128 * (tp + prev_tp) as u128;
        roc_points.push((fp as f64 / n_out as f64, tp as f64 / n_in as f64));
        // tp / n_in >= 0.95
        if tnr_at_95tpr.is_none() && 20 * tp >= 19 * n_in {
            tnr_at_95tpr = Some((n_out - fp) as f64 / n_out as f64);
        }
        prev_tp = tp;
        prev_fp = fp;
    }
    let auroc = twice_area as f64 / (2.0 * n_in as f64 * n_out as f64);

    let (aupr_in, pr_in_points) = average_precision(&counts, n_in);

    let neg_in: Vec<T> = in_scores.iter().map(|&s| -s).collect();
    let neg_out: Vec<T> = out_scores.iter().map(|&s| -s).collect();
    let (aupr_out, pr_out_points) = average_precision(&cumulative_counts(&neg_out, &neg_in), n_out);

    Ok(EvalReport {
        auroc,
        aupr_in,
        aupr_out,
        tnr_at_95tpr: tnr_at_95tpr.expect("the lowest threshold reaches TPR 1"),
        n_in,
        n_out,
        roc_points,
        pr_in_points,
        pr_out_points,
    })
}

/// AUROC as the pairwise win rate with half credit for ties.
pub fn auroc_rank_oracle<T: Scalar>(in_scores: &[T], out_scores: &[T]) -> Result<f64> {
    validate("in-distribution", in_scores)?;
    validate("out-of-distribution", out_scores)?;
    let mut twice_wins: u128 = 0;
    for &a in in_scores {
        for &b in out_scores {
            if a > b {
                twice_wins += 2;
            } else if a == b {
                twice_wins += 1;
            }
        }
    }
    Ok(twice_wins as f64 / (2.0 * in_scores.len() as f64 * out_scores.len() as f64))
}

/// Arithmetic mean of each scalar metric. Curves are left empty.
pub fn mean_report(reports: &[EvalReport]) -> Option<EvalReport> {
    if reports.is_empty() {
        return None;
    }
    let n = reports.len() as f64;
    let mean = |f: fn(&EvalReport) -> f64| reports.iter().map(f).sum::<f64>() / n;
    Some(EvalReport {
        auroc: mean(|r| r.auroc),
        aupr_in: mean(|r| r.aupr_in),
        aupr_out: mean(|r| r.aupr_out),
        tnr_at_95tpr: mean(|r| r.tnr_at_95tpr),
        n_in: reports.iter().map(|r| r.n_in).sum(),
        n_out: reports.iter().map(|r| r.n_out).sum(),
        roc_points: Vec::new(),
        pr_in_points: Vec::new(),
        pr_out_points: Vec::new(),
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct HistogramBin {
    pub left: f64,
    pub count_in: usize,
    pub count_out: usize,
}

/// Equal-width bins over the pooled score range.
pub fn histogram<T: Scalar>(in_scores: &[T], out_scores: &[T], bins: usize) -> Vec<HistogramBin> {
    let all = in_scores.iter().chain(out_scores).map(|s| s.as_f64());
    let (lo, hi) = all.fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), v| {
        (lo.min(v), hi.max(v))
    });
    if bins == 0 || !lo.is_finite() {
        return Vec::new();
    }
    let hi = if hi > lo { hi } else { lo + 1.0 };
    let width = (hi - lo) / bins as f64;
    let mut out: Vec<HistogramBin> = (0..bins)
        .map(|b| HistogramBin {
            left: lo + b as f64 * width,
            count_in: 0,
            count_out: 0,
        })
        .collect();
    let bin_of = |v: f64| (((v - lo) / width) as usize).min(bins - 1);
    for s in in_scores {
        out[bin_of(s.as_f64())].count_in += 1;
    }
    for s in out_scores {
        out[bin_of(s.as_f64())].count_out += 1;
    }
    out
}

pub fn curve_csv(header: &str, points: &[(f64, f64)]) -> String {
    let mut out = String::with_capacity(points.len() * 40);
    out.push_str(header);
    out.push('\n');
    for (x, y) in points {
        let _ = writeln!(out, "{x},{y}");
    }
    out
}

pub fn histogram_csv(bins: &[HistogramBin]) -> String {
    let mut out = String::from("bin_left,count_in,count_out\n");
    for b in bins {
        let _ = writeln!(out, "{},{},{}", b.left, b.count_in, b.count_out);
    }
    out
}

impl EvalReport {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }

    /// Writes `report.json`, `roc.csv`, `pr_in.csv` and `pr_out.csv` into `dir`.
    pub fn write_files(&self, dir: &Path) -> Result<()> {
        let files = [
            ("report.json", self.to_json()),
            ("roc.csv", curve_csv("fpr,tpr", &self.roc_points)),
            (
                "pr_in.csv",
                curve_csv("recall,precision", &self.pr_in_points),
            ),
            (
                "pr_out.csv",
                curve_csv("recall,precision", &self.pr_out_points),
            ),
        ];
        for (name, text) in files {
            let path = dir.join(name);
            fs::write(&path, text).map_err(|e| Error::io(&path, e))?;
        }
        Ok(())
    }
}
