//! Synthetic ordinal cohorts, stratified batching, fold splitting and CSV I/O.
//!
//! Each sample has a hidden progression value `latent_t ∈ [0, 1]`. Coarse
//! labels are bands of `latent_t`; samples in the designated middle classes
//! additionally carry a fine label (stable below the progression cut,
//! progressive at or above it). Inputs are a fixed smooth curve through input
//! space evaluated at `latent_t`, plus isotropic Gaussian noise.

mod io;
mod sampling;

pub use io::{load_dataset, save_dataset};
pub use sampling::{kfold_split, stratified_batches, SplitSpec, StratifiedSampler};

use std::fmt;

use rand::{seq::SliceRandom, Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::config::bad;
use crate::error::Result;

/// Hidden split of the middle classes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FineLabel {
    Stable,
    Progressive,
}

impl FineLabel {
    pub fn as_str(self) -> &'static str {
        match self {
            FineLabel::Stable => "stable",
            FineLabel::Progressive => "progressive",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "stable" => Some(FineLabel::Stable),
            "progressive" => Some(FineLabel::Progressive),
            _ => None,
        }
    }
}

impl fmt::Display for FineLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    pub id: usize,
    pub coarse_label: usize,
    pub fine_label: Option<FineLabel>,
    pub latent_t: f64,
    pub x: Vec<f64>,
}

/// Generator settings. Read from a flat config file; omitted keys take the
/// defaults below.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GenConfig {
    pub num_classes: usize,
    /// Samples per coarse class.
    pub counts: Vec<usize>,
    pub input_dim: usize,
    /// Standard deviation of the additive noise (trajectory amplitude is 1).
    pub noise: f64,
    /// Interior band boundaries, `num_classes − 1` increasing values in (0, 1).
    /// Empty means equal-width bands.
    pub boundaries: Vec<f64>,
    /// Classes carrying a fine label. Empty means every class except the first and last.
    pub middle_classes: Vec<usize>,
    /// Fine-label cut on `latent_t`. Negative means the midpoint of the middle region.
    pub progression_cut: f64,
    /// Angular frequency (in units of π) of the first sinusoidal coordinate.
    pub base_frequency: f64,
    /// Increment of the angular frequency between consecutive coordinates.
    pub frequency_step: f64,
}

impl Default for GenConfig {
    fn default() -> Self {
        Self {
            num_classes: 3,
            counts: vec![200, 200, 200],
            input_dim: 16,
            noise: 0.15,
            boundaries: Vec::new(),
            middle_classes: Vec::new(),
            progression_cut: -1.0,
            base_frequency: 2.5,
            frequency_step: 0.5,
        }
    }
}

/// Fully resolved generator settings.
#[derive(Debug, Clone, PartialEq)]
pub struct ResolvedGen {
    pub num_classes: usize,
    pub counts: Vec<usize>,
    pub input_dim: usize,
    pub noise: f64,
    /// `num_classes + 1` edges from 0 to 1.
    pub edges: Vec<f64>,
    pub middle_classes: Vec<usize>,
    pub progression_cut: f64,
    pub base_frequency: f64,
    pub frequency_step: f64,
}

impl GenConfig {
    pub fn resolve(&self) -> Result<ResolvedGen> {
        let k = self.num_classes;
        if k < 3 {
            return Err(bad("num_classes", format!("need at least 3 classes, got {k}")));
        }
        if self.counts.len() != k {
            return Err(bad("counts", format!("expected {k} entries, got {}", self.counts.len())));
        }
        if self.counts.contains(&0) {
            return Err(bad("counts", "every class needs at least one sample"));
        }
        if self.input_dim == 0 {
            return Err(bad("input_dim", "must be positive"));
        }
        if !(self.noise >= 0.0 && self.noise.is_finite()) {
            return Err(bad("noise", "must be a finite non-negative number"));
        }
        let mut edges = Vec::with_capacity(k + 1);
        edges.push(0.0);
        if self.boundaries.is_empty() {
            edges.extend((1..k).map(|i| i as f64 / k as f64));
        } else {
            if self.boundaries.len() != k - 1 {
                return Err(bad("boundaries", format!("expected {} values, got {}", k - 1, self.boundaries.len())));
            }
            edges.extend(&self.boundaries);
        }
        edges.push(1.0);
        if edges.windows(2).any(|w| w[0] >= w[1]) {
            return Err(bad("boundaries", "must be strictly increasing inside (0, 1)"));
        }
        let middle_classes = if self.middle_classes.is_empty() {
            (2..k).collect()
        } else {
            let mut m = self.middle_classes.clone();
            m.sort_unstable();
            m.dedup();
            if m.iter().any(|&c| c == 0 || c > k) {
                return Err(bad("middle_classes", format!("classes must lie in 1..={k}")));
            }
            if m.windows(2).any(|w| w[1] != w[0] + 1) {
                return Err(bad("middle_classes", "must be consecutive"));
            }
            m
        };
        let (lo, hi) = (edges[middle_classes[0] - 1], edges[*middle_classes.last().unwrap()]);
        let progression_cut = if self.progression_cut < 0.0 { 0.5 * (lo + hi) } else { self.progression_cut };
        if !(progression_cut > lo && progression_cut < hi) {
            return Err(bad("progression_cut", format!("must lie inside the middle region ({lo}, {hi})")));
        }
        if !(self.base_frequency.is_finite() && self.frequency_step.is_finite()) {
            return Err(bad("base_frequency", "frequencies must be finite"));
        }
        Ok(ResolvedGen {
            num_classes: k,
            counts: self.counts.clone(),
            input_dim: self.input_dim,
            noise: self.noise,
            edges,
            middle_classes,
            progression_cut,
            base_frequency: self.base_frequency,
            frequency_step: self.frequency_step,
        })
    }
}

impl ResolvedGen {
    /// Noise-free input for a progression value.
    ///
    /// Coordinate 0 is `2t − 1`; coordinate `j ≥ 1` is `sin(π f_j t + j)` with
    /// `f_j = base_frequency + (j − 1)·frequency_step`.
    pub fn trajectory(&self, t: f64) -> Vec<f64> {
        (0..self.input_dim)
            .map(|j| {
                if j == 0 {
                    2.0 * t - 1.0
                } else {
                    let f = self.base_frequency + (j - 1) as f64 * self.frequency_step;
                    (std::f64::consts::PI * f * t + j as f64).sin()
                }
            })
            .collect()
    }

    fn fine_label(&self, class: usize, t: f64) -> Option<FineLabel> {
        let fine = if t >= self.progression_cut { FineLabel::Progressive } else { FineLabel::Stable };
        self.middle_classes.contains(&class).then_some(fine)
    }
}

/// A labelled cohort.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub num_classes: usize,
    pub samples: Vec<Sample>,
}

/// What the trainer may see: inputs and coarse labels only.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainingView {
    pub num_classes: usize,
    pub inputs: Vec<Vec<f64>>,
    pub labels: Vec<usize>,
}

impl TrainingView {
    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn input_dim(&self) -> usize {
        self.inputs.first().map_or(0, Vec::len)
    }

    pub fn subset(&self, idx: &[usize]) -> TrainingView {
        TrainingView {
            num_classes: self.num_classes,
            inputs: idx.iter().map(|&i| self.inputs[i].clone()).collect(),
            labels: idx.iter().map(|&i| self.labels[i]).collect(),
        }
    }
}

impl Dataset {
    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn input_dim(&self) -> usize {
        self.samples.first().map_or(0, |s| s.x.len())
    }

    pub fn labels(&self) -> Vec<usize> {
        self.samples.iter().map(|s| s.coarse_label).collect()
    }

    pub fn class_counts(&self) -> Vec<usize> {
        let mut c = vec![0; self.num_classes];
        for s in &self.samples {
            c[s.coarse_label - 1] += 1;
        }
        c
    }

    pub fn training_view(&self) -> TrainingView {
        TrainingView {
            num_classes: self.num_classes,
            inputs: self.samples.iter().map(|s| s.x.clone()).collect(),
            labels: self.labels(),
        }
    }

    pub fn subset(&self, idx: &[usize]) -> Dataset {
        Dataset { num_classes: self.num_classes, samples: idx.iter().map(|&i| self.samples[i].clone()).collect() }
    }

    /// Samples carrying a fine label.
    pub fn fine_labeled(&self) -> impl Iterator<Item = (&Sample, FineLabel)> {
        self.samples.iter().filter_map(|s| s.fine_label.map(|f| (s, f)))
    }

    /// Promote the fine split to coarse labels: the stable part keeps its
    /// class, the progressive part becomes the next class, and every class
    /// above shifts up by one. Requires exactly one middle class.
    pub fn split_middle_class(&self) -> Result<Dataset> {
        let mut middle: Vec<usize> = self.fine_labeled().map(|(s, _)| s.coarse_label).collect();
        middle.sort_unstable();
        middle.dedup();
        if middle.len() != 1 {
            return Err(crate::error::Error::DegenerateInput(format!(
                "expected one middle class, found {middle:?}"
            )));
        }
        let m = middle[0];
        let samples = self
            .samples
            .iter()
            .map(|s| {
                let coarse_label = match (s.coarse_label, s.fine_label) {
                    (c, Some(FineLabel::Progressive)) if c == m => m + 1,
                    (c, _) if c > m => c + 1,
                    (c, _) => c,
                };
                Sample { coarse_label, ..s.clone() }
            })
            .collect();
        Ok(Dataset { num_classes: self.num_classes + 1, samples })
    }
}

/// Draw a dataset. Deterministic in `(config, seed)`; samples are shuffled so
/// ids do not follow class order.
pub fn generate(config: &GenConfig, seed: u64) -> Result<Dataset> {
    let r = config.resolve()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let noise = Normal::new(0.0, r.noise).map_err(|e| bad("noise", e.to_string()))?;
    let mut raw = Vec::with_capacity(r.counts.iter().sum());
    for (ci, &n) in r.counts.iter().enumerate() {
        let class = ci + 1;
        let (lo, hi) = (r.edges[ci], r.edges[ci + 1]);
        for _ in 0..n {
            let t = if class == r.num_classes { rng.random_range(lo..=hi) } else { rng.random_range(lo..hi) };
            let x = r.trajectory(t).into_iter().map(|v| v + noise.sample(&mut rng)).collect();
            raw.push((class, t, x));
        }
    }
    raw.shuffle(&mut rng);
    let samples = raw
        .into_iter()
        .enumerate()
        .map(|(id, (coarse_label, latent_t, x))| Sample {
            id,
            coarse_label,
            fine_label: r.fine_label(coarse_label, latent_t),
            latent_t,
            x,
        })
        .collect();
    Ok(Dataset { num_classes: r.num_classes, samples })
}
