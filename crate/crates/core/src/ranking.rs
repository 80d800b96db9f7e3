//! The rank operator and its blackbox interpolated backward pass.
//!
//! `rank` maps a vector to descending-order positions (largest value gets
//! rank 1), breaking ties by lower index first. It is the minimiser of the
//! linear objective `aᵀπ` over permutation vectors `π`, which is what makes
//! the interpolation scheme of [`blackbox_rank_backward`] applicable: the
//! solver is re-run at an input perturbed along the upstream gradient and the
//! difference of the two solutions, divided by the step, is the gradient.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Largest input accepted by the factorial-time oracle.
pub const ORACLE_MAX_N: usize = 8;

/// A permutation of `1..=n`.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct RankVector(Vec<usize>);

impl RankVector {
    pub fn as_slice(&self) -> &[usize] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn to_f64(&self) -> Vec<f64> {
        self.0.iter().map(|&r| r as f64).collect()
    }

    /// True when the entries are exactly `1..=n` in some order.
    pub fn is_permutation(&self) -> bool {
        let mut seen = vec![false; self.0.len()];
        self.0.iter().all(|&r| {
            r >= 1 && r <= seen.len() && !std::mem::replace(&mut seen[r - 1], true)
        })
    }
}

impl From<RankVector> for Vec<usize> {
    fn from(r: RankVector) -> Self {
        r.0
    }
}

/// Interpolation settings for the rank backward pass.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BlackboxConfig {
    pub lambda_interp: f64,
}

impl Default for BlackboxConfig {
    fn default() -> Self {
        Self { lambda_interp: 1.0 }
    }
}

impl BlackboxConfig {
    pub fn new(lambda_interp: f64) -> Result<Self> {
        if !(lambda_interp > 0.0 && lambda_interp.is_finite()) {
            return Err(Error::OutOfRange(format!(
                "lambda_interp must be positive, got {lambda_interp}"
            )));
        }
        Ok(Self { lambda_interp })
    }
}

/// Descending rank with lower-index-first tie breaking:
/// `rank[i] = 1 + #{j : a[j] > a[i]} + #{j < i : a[j] = a[i]}`.
pub fn rank(a: &[f64]) -> Result<RankVector> {
    if a.is_empty() {
        return Err(Error::EmptyInput);
    }
    Ok(rank_unchecked(a))
}

pub(crate) fn rank_unchecked(a: &[f64]) -> RankVector {
    let mut order: Vec<usize> = (0..a.len()).collect();
    // stable sort keeps lower indices first among equal values
    order.sort_by(|&i, &j| a[j].total_cmp(&a[i]));
    let mut ranks = vec![0usize; a.len()];
    for (pos, &idx) in order.iter().enumerate() {
        ranks[idx] = pos + 1;
    }
    RankVector(ranks)
}

/// Exhaustive `argmin_π aᵀπ` over all permutations of `1..=n`.
///
/// Ties among minimisers resolve to the lexicographically smallest `π`.
pub fn rank_argmin_oracle(a: &[f64]) -> Result<RankVector> {
    let n = a.len();
    if n == 0 {
        return Err(Error::EmptyInput);
    }
    if n > ORACLE_MAX_N {
        return Err(Error::TooLarge { n, max: ORACLE_MAX_N });
    }
    let mut perm: Vec<usize> = (1..=n).collect();
    let objective = |p: &[usize]| a.iter().zip(p).map(|(x, &r)| x * r as f64).sum::<f64>();
    let mut best = perm.clone();
    let mut best_val = objective(&perm);
    // lexicographic order, so a strict comparison keeps the smallest minimiser
    while next_permutation(&mut perm) {
        let v = objective(&perm);
        if v < best_val {
            best_val = v;
            best.clone_from(&perm);
        }
    }
    Ok(RankVector(best))
}

fn next_permutation(p: &mut [usize]) -> bool {
    let n = p.len();
    if n < 2 {
        return false;
    }
    let mut i = n - 1;
    while i > 0 && p[i - 1] >= p[i] {
        i -= 1;
    }
    if i == 0 {
        return false;
    }
    let mut j = n - 1;
    while p[j] <= p[i - 1] {
        j -= 1;
    }
    p.swap(i - 1, j);
    p[i..].reverse();
    true
}

/// Gradient estimate of a loss with respect to `a`, given `upstream = ∂L/∂rank(a)`.
///
/// Solves again at `a' = a + λ·upstream` and returns `(rank(a') − rank(a)) / λ`.
/// The result is zero whenever the perturbation does not reorder any pair.
pub fn blackbox_rank_backward(a: &[f64], upstream: &[f64], cfg: BlackboxConfig) -> Result<Vec<f64>> {
    if a.len() != upstream.len() {
        return Err(Error::DimMismatch { expected: a.len(), got: upstream.len() });
    }
    if a.is_empty() {
        return Err(Error::EmptyInput);
    }
    Ok(blackbox_with_rank(a, &rank_unchecked(a), upstream, cfg.lambda_interp))
}

/// Backward pass reusing an already computed forward rank.
pub(crate) fn blackbox_with_rank(a: &[f64], r: &RankVector, upstream: &[f64], lambda: f64) -> Vec<f64> {
    if upstream.iter().all(|&g| g == 0.0) {
        return vec![0.0; a.len()];
    }
    let perturbed: Vec<f64> = a.iter().zip(upstream).map(|(x, g)| x + lambda * g).collect();
    let rp = rank_unchecked(&perturbed);
    rp.0.iter()
        .zip(&r.0)
        .map(|(&new, &old)| (new as f64 - old as f64) / lambda)
        .collect()
}

/// Squared rank error `‖target − rank(a)‖²` and its blackbox gradient in `a`.
///
/// `target` is treated as a constant.
pub fn rank_mse_row(a: &[f64], target: &RankVector, lambda: f64) -> (f64, Vec<f64>) {
    let r = rank_unchecked(a);
    let mut value = 0.0;
    let upstream: Vec<f64> = r
        .0
        .iter()
        .zip(&target.0)
        .map(|(&ri, &ti)| {
            let diff = ri as f64 - ti as f64;
            value += diff * diff;
            2.0 * diff
        })
        .collect();
    let grad = blackbox_with_rank(a, &r, &upstream, lambda);
    (value, grad)
}
