use rand::{seq::SliceRandom, Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Mini-batch index generator in which every batch holds every class.
///
/// Each batch reserves one slot per class; the remaining `M − K` slots go to
/// whichever classes lag furthest behind their share of the dataset. Classes
/// are drawn without replacement from per-class shuffled pools, reshuffled on
/// wrap-around, and an epoch ends once every pool has been fully drawn once.
#[derive(Debug, Clone)]
pub struct StratifiedSampler {
    by_class: Vec<Vec<usize>>,
    batch_size: usize,
    total: usize,
}

impl StratifiedSampler {
    /// `labels` are 1-based coarse labels.
    pub fn new(labels: &[usize], num_classes: usize, batch_size: usize) -> Result<Self> {
        if batch_size < num_classes {
            return Err(Error::BatchTooSmall { m: batch_size, k: num_classes });
        }
        let mut by_class = vec![Vec::new(); num_classes];
        for (i, &l) in labels.iter().enumerate() {
            if l == 0 || l > num_classes {
                return Err(Error::LabelOutOfRange { label: l, k: num_classes });
            }
            by_class[l - 1].push(i);
        }
        if let Some(k) = by_class.iter().position(Vec::is_empty) {
            return Err(Error::DegenerateBatch(format!("class {} has no samples", k + 1)));
        }
        Ok(Self { by_class, batch_size, total: labels.len() })
    }

    pub fn num_classes(&self) -> usize {
        self.by_class.len()
    }

    /// One epoch of batches.
    pub fn epoch<R: Rng>(&self, rng: &mut R) -> Vec<Vec<usize>> {
        let k = self.by_class.len();
        let mut pools: Vec<Vec<usize>> = self.by_class.clone();
        for p in &mut pools {
            p.shuffle(rng);
        }
        let mut cursor = vec![0usize; k];
        let mut exhausted = vec![false; k];
        let mut drawn = vec![0usize; k];
        let mut drawn_total = 0usize;
        let mut batches = Vec::new();

        while exhausted.iter().any(|e| !e) {
            let mut quota = vec![1usize; k];
            let horizon = (drawn_total + self.batch_size) as f64;
            for _ in k..self.batch_size {
                let mut best = 0;
                let mut best_gap = f64::NEG_INFINITY;
                for c in 0..k {
                    let share = self.by_class[c].len() as f64 / self.total as f64;
                    let gap = share * horizon - (drawn[c] + quota[c]) as f64;
                    if gap > best_gap {
                        best_gap = gap;
                        best = c;
                    }
                }
                quota[best] += 1;
            }
            let mut batch = Vec::with_capacity(self.batch_size);
            for c in 0..k {
                for _ in 0..quota[c] {
                    if cursor[c] == pools[c].len() {
                        pools[c].shuffle(rng);
                        cursor[c] = 0;
                    }
                    batch.push(pools[c][cursor[c]]);
                    cursor[c] += 1;
                    if cursor[c] == pools[c].len() {
                        exhausted[c] = true;
                    }
                }
                drawn[c] += quota[c];
            }
            drawn_total += self.batch_size;
            batch.shuffle(rng);
            batches.push(batch);
        }
        batches
    }
}

/// One epoch of stratified batches, deterministic in `seed`.
pub fn stratified_batches(labels: &[usize], num_classes: usize, batch_size: usize, seed: u64) -> Result<Vec<Vec<usize>>> {
    let sampler = StratifiedSampler::new(labels, num_classes, batch_size)?;
    Ok(sampler.epoch(&mut ChaCha8Rng::seed_from_u64(seed)))
}

/// Fold assignment for every sample, folds numbered `1..=k`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SplitSpec {
    pub k: usize,
    pub folds: Vec<usize>,
}

impl SplitSpec {
    /// `(train, held_out)` index lists for fold `f`.
    pub fn partition(&self, f: usize) -> (Vec<usize>, Vec<usize>) {
        let (mut train, mut test) = (Vec::new(), Vec::new());
        for (i, &g) in self.folds.iter().enumerate() {
            if g == f {
                test.push(i);
            } else {
                train.push(i);
            }
        }
        (train, test)
    }

    pub fn fold_sizes(&self) -> Vec<usize> {
        let mut s = vec![0; self.k];
        for &f in &self.folds {
            s[f - 1] += 1;
        }
        s
    }
}

/// Stratified k-fold assignment.
///
/// Fold sizes differ by at most one. The class-by-fold count table is a
/// controlled rounding of the proportional targets `n_c · |F_f| / N`: every
/// cell takes the floor of its target, and the leftover units are placed
/// row by row into the folds with the most remaining room.
pub fn kfold_split(labels: &[usize], num_classes: usize, k: usize, seed: u64) -> Result<SplitSpec> {
    if k < 2 {
        return Err(Error::BadK { k, msg: "need at least 2 folds".into() });
    }
    let mut by_class = vec![Vec::new(); num_classes];
    for (i, &l) in labels.iter().enumerate() {
        if l == 0 || l > num_classes {
            return Err(Error::LabelOutOfRange { label: l, k: num_classes });
        }
        by_class[l - 1].push(i);
    }
    if let Some((c, v)) = by_class.iter().enumerate().find(|(_, v)| v.len() < k) {
        return Err(Error::BadK { k, msg: format!("class {} has only {} samples", c + 1, v.len()) });
    }
    let n = labels.len();
    let sizes: Vec<usize> = (0..k).map(|f| n / k + usize::from(f < n % k)).collect();
    let mut table: Vec<Vec<usize>> = by_class
        .iter()
        .map(|m| sizes.iter().map(|&s| m.len() * s / n).collect())
        .collect();
    let mut room: Vec<usize> = (0..k).map(|f| sizes[f] - table.iter().map(|r| r[f]).sum::<usize>()).collect();
    for (c, members) in by_class.iter().enumerate() {
        let mut left = members.len() - table[c].iter().sum::<usize>();
        let mut order: Vec<usize> = (0..k).collect();
        order.sort_by_key(|&f| std::cmp::Reverse(room[f]));
        for f in order {
            if left == 0 {
                break;
            }
            if room[f] > 0 {
                table[c][f] += 1;
                room[f] -= 1;
                left -= 1;
            }
        }
        debug_assert_eq!(left, 0);
    }

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut folds = vec![0; n];
    for (c, mut members) in by_class.into_iter().enumerate() {
        members.shuffle(&mut rng);
        let mut it = members.into_iter();
        for (f, &cnt) in table[c].iter().enumerate() {
            for i in it.by_ref().take(cnt) {
                folds[i] = f + 1;
            }
        }
    }
    Ok(SplitSpec { k, folds })
}
