//! Test-only oracles and fixtures, independent of the library's numeric paths.
#![allow(dead_code)]

use deepif::{FeatureMatrix, IsolationTree, Node};
use num_bigint::BigInt;
use num_rational::BigRational;
use num_traits::{One, Signed, ToPrimitive, Zero};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;
use rand_distr::{Distribution, StandardNormal};

pub type Q = BigRational;

pub fn rng(seed: u64) -> ChaCha20Rng {
    ChaCha20Rng::seed_from_u64(seed)
}

fn q(n: i64) -> Q {
    Q::from_integer(BigInt::from(n))
}

/// Euler–Mascheroni constant to 50 digits.
fn gamma_q() -> Q {
    let digits = "57721566490153286060651209008240243104215933593992";
    let num: BigInt = digits.parse().unwrap();
    Q::new(num, BigInt::from(10).pow(digits.len() as u32))
}

/// `ln x` for an integer `x >= 1` to better than 2^-180, via
/// `ln x = k ln 2 + 2 atanh((x - 2^k) / (x + 2^k))`.
pub fn ln_q(x: u64) -> Q {
    assert!(x >= 1);
    let k = 63 - x.leading_zeros() as u64;
    let p = 1u64 << k;
    let atanh = |num: i64, den: i64| -> Q {
        let t = Q::new(BigInt::from(num), BigInt::from(den));
        let t2 = &t * &t;
        let eps = Q::new(BigInt::one(), BigInt::one() << 190);
        let mut power = t.clone();
        let mut sum = Q::zero();
        let mut j = 0i64;
        loop {
            let term = &power / q(2 * j + 1);
            if term.abs() < eps {
                break;
            }
            sum += term;
            power = &power * &t2;
            j += 1;
        }
        sum
    };
    let ln2 = atanh(1, 3) * q(2);
    let rest = atanh(x as i64 - p as i64, x as i64 + p as i64) * q(2);
    ln2 * q(k as i64) + rest
}

/// `c(n)` evaluated in rational arithmetic with a 50-digit γ.
pub fn average_path_length_oracle(n: u64) -> f64 {
    match n {
        0 | 1 => 0.0,
        2 => 1.0,
        _ => {
            let v = q(2) * (ln_q(n - 1) + gamma_q())
                - q(2) * Q::new(BigInt::from(n - 1), BigInt::from(n));
            v.to_f64().unwrap()
        }
    }
}

/// Dense inverse by Gauss–Jordan elimination over exact rationals.
pub fn inverse_q(a: &[Q], d: usize) -> Vec<Q> {
    let mut m: Vec<Q> = a.to_vec();
    let mut inv: Vec<Q> = (0..d * d)
        .map(|i| if i / d == i % d { Q::one() } else { Q::zero() })
        .collect();
    for col in 0..d {
        let pivot = (col..d)
            .find(|&r| !m[r * d + col].is_zero())
            .expect("matrix is singular");
        if pivot != col {
            for j in 0..d {
                m.swap(pivot * d + j, col * d + j);
                inv.swap(pivot * d + j, col * d + j);
            }
        }
        let p = m[col * d + col].clone();
        for j in 0..d {
            m[col * d + j] = &m[col * d + j] / &p;
            inv[col * d + j] = &inv[col * d + j] / &p;
        }
        for r in 0..d {
            if r == col || m[r * d + col].is_zero() {
                continue;
            }
            let f = m[r * d + col].clone();
            for j in 0..d {
                let mv = &m[col * d + j] * &f;
                m[r * d + j] -= mv;
                let iv = &inv[col * d + j] * &f;
                inv[r * d + j] -= iv;
            }
        }
    }
    inv
}

pub fn to_q(v: f64) -> Q {
    Q::from_float(v).unwrap()
}

/// `-min_k (x - μ_k)ᵀ Σ_k⁻¹ (x - μ_k)` with exact explicit inverses.
pub struct MahalanobisOracle {
    means: Vec<Vec<Q>>,
    inverses: Vec<Vec<Q>>,
    dim: usize,
}

impl MahalanobisOracle {
    /// `covariances` holds either one shared matrix or one per mean.
    pub fn new(means: &[Vec<f64>], covariances: &[Vec<f64>]) -> Self {
        let dim = means[0].len();
        let inverses = covariances
            .iter()
            .map(|c| inverse_q(&c.iter().map(|&v| to_q(v)).collect::<Vec<_>>(), dim))
            .collect();
        Self {
            means: means
                .iter()
                .map(|m| m.iter().map(|&v| to_q(v)).collect())
                .collect(),
            inverses,
            dim,
        }
    }

    pub fn score(&self, x: &[f64]) -> f64 {
        let d = self.dim;
        let x: Vec<Q> = x.iter().map(|&v| to_q(v)).collect();
        let best = self
            .means
            .iter()
            .enumerate()
            .map(|(k, mu)| {
                let inv = &self.inverses[k.min(self.inverses.len() - 1)];
                let v: Vec<Q> = x.iter().zip(mu).map(|(a, b)| a - b).collect();
                let mut acc = Q::zero();
                for i in 0..d {
                    for j in 0..d {
                        acc += &v[i] * &inv[i * d + j] * &v[j];
                    }
                }
                acc
            })
            .min()
            .unwrap();
        -best.to_f64().unwrap()
    }
}

/// `c(n)` for `n = 0..=max` from the rational oracle.
pub fn path_length_table(max: usize) -> Vec<f64> {
    (0..=max as u64).map(average_path_length_oracle).collect()
}

/// Path length by recursive re-traversal of the stored nodes.
pub fn path_length_oracle(tree: &IsolationTree<f64>, x: &[f64], c: &[f64]) -> f64 {
    fn walk(nodes: &[Node<f64>], i: usize, x: &[f64], depth: usize, c: &[f64]) -> f64 {
        match &nodes[i] {
            Node::Leaf { n_samples } => depth as f64 + c[*n_samples],
            Node::Internal {
                feature,
                split,
                left,
                right,
            } => {
                let next = if x[*feature] < *split { *left } else { *right };
                walk(nodes, next, x, depth + 1, c)
            }
        }
    }
    walk(tree.nodes(), 0, x, 0, c)
}

/// `0.5 - 2^(-E[P] / c(ψ))` with `E[P]` from [`path_length_oracle`].
pub fn forest_score_oracle(forest: &deepif::IsolationForest<f64>, x: &[f64], c: &[f64]) -> f64 {
    let trees = forest.trees();
    let mean = trees
        .iter()
        .map(|t| path_length_oracle(t, x, c))
        .sum::<f64>()
        / trees.len() as f64;
    0.5 - (-mean / c[forest.sample_size()]).exp2()
}

/// Pairwise AUROC: `P(in > out) + P(in = out) / 2`.
pub fn auroc_pairwise(in_scores: &[f64], out_scores: &[f64]) -> f64 {
    let mut twice = 0u64;
    for &a in in_scores {
        for &b in out_scores {
            twice += if a > b {
                2
            } else if a == b {
                1
            } else {
                0
            };
        }
    }
    twice as f64 / (2 * in_scores.len() * out_scores.len()) as f64
}

pub fn normal_rows(
    rng: &mut impl Rng,
    n: usize,
    d: usize,
    center: &[f64],
    sigma: f64,
) -> Vec<Vec<f64>> {
    (0..n)
        .map(|_| {
            (0..d)
                .map(|j| {
                    center[j] + sigma * Distribution::<f64>::sample(&StandardNormal, &mut *rng)
                })
                .collect::<Vec<f64>>()
        })
        .collect()
}

pub fn matrix(rows: &[Vec<f64>]) -> FeatureMatrix<f64> {
    FeatureMatrix::from_rows(rows).unwrap()
}

/// Three in-distribution classes, each a pair of unit Gaussians 10σ apart,
/// plus an `OOD` class centred on each pair's midpoint.
pub fn multimodal_fixture(
    seed: u64,
    per_mode: usize,
    ood_per_class: usize,
) -> (Vec<Vec<f64>>, Vec<String>) {
    const D: usize = 4;
    let mut r = rng(seed);
    let mut rows = Vec::new();
    let mut labels = Vec::new();
    for (k, name) in ["A", "B", "C"].iter().enumerate() {
        let mut mid = [0.0; D];
        mid[k] = 20.0;
        for sign in [-1.0, 1.0] {
            let mut mode = mid;
            mode[3] = 5.0 * sign;
            rows.extend(normal_rows(&mut r, per_mode, D, &mode, 1.0));
            labels.extend(std::iter::repeat_n(name.to_string(), per_mode));
        }
        rows.extend(normal_rows(&mut r, ood_per_class, D, &mid, 1.0));
        labels.extend(std::iter::repeat_n("OOD".to_string(), ood_per_class));
    }
    (rows, labels)
}

pub fn write_labels(path: &std::path::Path, labels: &[String]) {
    let mut text = labels.join("\n");
    text.push('\n');
    std::fs::write(path, text).unwrap();
}
