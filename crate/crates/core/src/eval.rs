//! Fine-split metrics, the one-sided Mann-Whitney U test, and Spearman correlation.

use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal};

use crate::data::FineLabel;
use crate::error::{Error, Result};
use crate::prototypes::DECISION_THRESHOLD;

/// Largest pooled sample size handled by exact enumeration.
pub const EXACT_MAX_N: usize = 12;

/// A predicted progression probability paired with the hidden truth.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ScoredSample {
    pub score: f64,
    pub truth: FineLabel,
}

impl ScoredSample {
    pub fn new(score: f64, truth: FineLabel) -> Result<Self> {
        if !(0.0..=1.0).contains(&score) {
            return Err(Error::OutOfRange(format!("score {score} outside [0, 1]")));
        }
        Ok(Self { score, truth })
    }
}

/// Positive class is progressive.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BinaryMetrics {
    pub acc: f64,
    pub auc: f64,
    pub f1: f64,
    pub precision: f64,
    pub recall: f64,
    pub n_pos: usize,
    pub n_neg: usize,
}

/// Thresholded metrics plus pairwise AUC (ties count one half).
///
/// Precision is 0 when nothing is predicted progressive; F1 is 0 when
/// precision and recall are both 0.
pub fn binary_metrics(samples: &[ScoredSample]) -> Result<BinaryMetrics> {
    if samples.is_empty() {
        return Err(Error::EmptyInput);
    }
    for s in samples {
        if !(0.0..=1.0).contains(&s.score) {
            return Err(Error::OutOfRange(format!("score {} outside [0, 1]", s.score)));
        }
    }
    let pos: Vec<f64> = samples.iter().filter(|s| s.truth == FineLabel::Progressive).map(|s| s.score).collect();
    let neg: Vec<f64> = samples.iter().filter(|s| s.truth == FineLabel::Stable).map(|s| s.score).collect();
    if pos.is_empty() || neg.is_empty() {
        return Err(Error::OneClassOnly);
    }
    let tp = pos.iter().filter(|&&s| s > DECISION_THRESHOLD).count();
    let tn = neg.iter().filter(|&&s| s <= DECISION_THRESHOLD).count();
    let fp = neg.len() - tn;

    let mut wins = 0.0;
    for &p in &pos {
        for &n in &neg {
            wins += if p > n {
                1.0
            } else if p == n {
                0.5
            } else {
                0.0
            };
        }
    }
    let auc = wins / (pos.len() * neg.len()) as f64;
    let precision = if tp + fp == 0 { 0.0 } else { tp as f64 / (tp + fp) as f64 };
    let recall = tp as f64 / pos.len() as f64;
    let f1 = if precision + recall > 0.0 { 2.0 * precision * recall / (precision + recall) } else { 0.0 };
    Ok(BinaryMetrics {
        acc: (tp + tn) as f64 / samples.len() as f64,
        auc,
        f1,
        precision,
        recall,
        n_pos: pos.len(),
        n_neg: neg.len(),
    })
}

/// Mid-ranks (1-based, ties share their average rank).
pub fn mid_ranks(x: &[f64]) -> Vec<f64> {
    let mut idx: Vec<usize> = (0..x.len()).collect();
    idx.sort_by(|&i, &j| x[i].total_cmp(&x[j]));
    let mut out = vec![0.0; x.len()];
    let mut start = 0;
    while start < idx.len() {
        let mut end = start + 1;
        while end < idx.len() && x[idx[end]] == x[idx[start]] {
            end += 1;
        }
        let r = (start + end + 1) as f64 / 2.0;
        for &i in &idx[start..end] {
            out[i] = r;
        }
        start = end;
    }
    out
}

/// `U_a`: pairs with `a_i > b_j`, ties counted one half.
pub fn mann_whitney_u(a: &[f64], b: &[f64]) -> f64 {
    let mut u = 0.0;
    for &x in a {
        for &y in b {
            if x > y {
                u += 1.0;
            } else if x == y {
                u += 0.5;
            }
        }
    }
    u
}

/// `P(U ≥ U_obs)` under exchangeability, by enumerating every way to choose
/// which pooled values form the first group.
pub fn mann_whitney_exact(a: &[f64], b: &[f64]) -> Result<f64> {
    let dist = mann_whitney_null(a, b)?;
    let u_obs = 2.0 * mann_whitney_u(a, b);
    let hits = dist.iter().filter(|&&u| u >= u_obs - 1e-9).count();
    Ok(hits as f64 / dist.len() as f64)
}

/// Null distribution of `2·U_a` (doubled so ties stay integral) over all
/// `C(n, |a|)` group assignments of the pooled sample.
pub fn mann_whitney_null(a: &[f64], b: &[f64]) -> Result<Vec<f64>> {
    if a.is_empty() || b.is_empty() {
        return Err(Error::EmptyInput);
    }
    let pooled: Vec<f64> = a.iter().chain(b).copied().collect();
    let n = pooled.len();
    if n > EXACT_MAX_N {
        return Err(Error::TooLarge { n, max: EXACT_MAX_N });
    }
    let ranks = mid_ranks(&pooled);
    let na = a.len();
    let offset = (na * (na + 1)) as f64;
    let mut out = Vec::new();
    for mask in 0u32..(1 << n) {
        if mask.count_ones() as usize != na {
            continue;
        }
        let rank_sum: f64 = (0..n).filter(|&i| mask >> i & 1 == 1).map(|i| ranks[i]).sum();
        out.push(2.0 * rank_sum - offset);
    }
    Ok(out)
}

/// Normal approximation with tie-corrected variance and continuity correction.
pub fn mann_whitney_normal(a: &[f64], b: &[f64]) -> Result<f64> {
    if a.is_empty() || b.is_empty() {
        return Err(Error::EmptyInput);
    }
    let (na, nb) = (a.len() as f64, b.len() as f64);
    let n = na + nb;
    let pooled: Vec<f64> = a.iter().chain(b).copied().collect();
    let ranks = mid_ranks(&pooled);
    let mut sorted = ranks.clone();
    sorted.sort_by(f64::total_cmp);
    let mut tie_sum = 0.0;
    let mut i = 0;
    while i < sorted.len() {
        let j = sorted[i..].iter().take_while(|&&r| r == sorted[i]).count();
        let t = j as f64;
        tie_sum += t * t * t - t;
        i += j;
    }
    let var = na * nb / 12.0 * ((n + 1.0) - tie_sum / (n * (n - 1.0)));
    if var <= 0.0 {
        return Ok(1.0);
    }
    let u = mann_whitney_u(a, b);
    let z = (u - na * nb / 2.0 - 0.5) / var.sqrt();
    let std_normal = Normal::standard();
    Ok(std_normal.sf(z).clamp(f64::MIN_POSITIVE, 1.0))
}

/// One-sided test of "a is stochastically greater than b". Exact when the
/// pooled size is at most [`EXACT_MAX_N`], normal approximation otherwise.
pub fn mann_whitney_one_sided(a: &[f64], b: &[f64]) -> Result<f64> {
    if a.len() + b.len() <= EXACT_MAX_N {
        mann_whitney_exact(a, b)
    } else {
        mann_whitney_normal(a, b)
    }
}

/// Pearson correlation of the mid-rank vectors.
pub fn spearman(x: &[f64], y: &[f64]) -> Result<f64> {
    if x.len() != y.len() {
        return Err(Error::DimMismatch { expected: x.len(), got: y.len() });
    }
    if x.len() < 2 {
        return Err(Error::DegenerateInput("need at least two points".into()));
    }
    let (rx, ry) = (mid_ranks(x), mid_ranks(y));
    let mean = (x.len() as f64 + 1.0) / 2.0;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (a, b) in rx.iter().zip(&ry) {
        let (da, db) = (a - mean, b - mean);
        sxy += da * db;
        sxx += da * da;
        syy += db * db;
    }
    if sxx == 0.0 || syy == 0.0 {
        return Err(Error::DegenerateInput("constant input".into()));
    }
    Ok((sxy / (sxx * syy).sqrt()).clamp(-1.0, 1.0))
}

/// Population mean and standard deviation.
pub fn mean_std(v: &[f64]) -> (f64, f64) {
    if v.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    let n = v.len() as f64;
    let mean = v.iter().sum::<f64>() / n;
    let var = v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n;
    (mean, var.sqrt())
}
