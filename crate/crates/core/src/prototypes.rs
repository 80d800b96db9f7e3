//! Global anchor prototypes maintained by exponential moving average, and
//! inference by comparing a query feature against them.

use serde::{Deserialize, Serialize};

use crate::data::FineLabel;
use crate::error::{Error, Result};
use crate::linalg::{cosine_similarity, norm, softmax, NORM_EPS};

/// Default momentum decay.
pub const DEFAULT_SIGMA: f64 = 0.9;

/// Probabilities strictly above this are classified as progressive.
pub const DECISION_THRESHOLD: f64 = 0.5;

/// Two EMA-maintained anchors: the low end (stable side) and high end of the
/// ordinal scale.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "StoreDoc", into = "StoreDoc")]
pub struct GlobalPrototypeStore {
    sigma: f64,
    anchor_classes: (usize, usize),
    anchor_low: Vec<f64>,
    anchor_high: Vec<f64>,
}

/// On-disk layout of the store.
#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct StoreDoc {
    dim: usize,
    sigma: f64,
    anchor_classes: [usize; 2],
    anchor_low: Vec<f64>,
    anchor_high: Vec<f64>,
}

impl TryFrom<StoreDoc> for GlobalPrototypeStore {
    type Error = Error;

    fn try_from(doc: StoreDoc) -> Result<Self> {
        if doc.anchor_low.len() != doc.dim || doc.anchor_high.len() != doc.dim {
            return Err(Error::DimMismatch { expected: doc.dim, got: doc.anchor_low.len() });
        }
        let mut s = Self::new(doc.dim, doc.sigma, (doc.anchor_classes[0], doc.anchor_classes[1]), usize::MAX)?;
        if doc.anchor_low.iter().chain(&doc.anchor_high).any(|v| !v.is_finite()) {
            return Err(Error::OutOfRange("non-finite anchor entry".into()));
        }
        let (zl, zh) = (norm(&doc.anchor_low) <= NORM_EPS, norm(&doc.anchor_high) <= NORM_EPS);
        if zl != zh {
            return Err(Error::OutOfRange("exactly one anchor is zero".into()));
        }
        s.anchor_low = doc.anchor_low;
        s.anchor_high = doc.anchor_high;
        Ok(s)
    }
}

impl From<GlobalPrototypeStore> for StoreDoc {
    fn from(s: GlobalPrototypeStore) -> Self {
        StoreDoc {
            dim: s.anchor_low.len(),
            sigma: s.sigma,
            anchor_classes: [s.anchor_classes.0, s.anchor_classes.1],
            anchor_low: s.anchor_low,
            anchor_high: s.anchor_high,
        }
    }
}

impl GlobalPrototypeStore {
    /// Zero-initialised store. `num_classes` bounds the anchor classes.
    pub fn new(dim: usize, sigma: f64, anchor_classes: (usize, usize), num_classes: usize) -> Result<Self> {
        if dim == 0 {
            return Err(Error::DimMismatch { expected: 1, got: 0 });
        }
        if !(sigma > 0.0 && sigma < 1.0) {
            return Err(Error::OutOfRange(format!("sigma must lie in (0, 1), got {sigma}")));
        }
        let (lo, hi) = anchor_classes;
        if lo == hi || lo == 0 || hi == 0 || lo > num_classes || hi > num_classes {
            return Err(Error::OutOfRange(format!(
                "anchor classes ({lo}, {hi}) must be distinct and within 1..={num_classes}"
            )));
        }
        Ok(Self { sigma, anchor_classes, anchor_low: vec![0.0; dim], anchor_high: vec![0.0; dim] })
    }

    pub fn dim(&self) -> usize {
        self.anchor_low.len()
    }

    pub fn sigma(&self) -> f64 {
        self.sigma
    }

    pub fn anchor_classes(&self) -> (usize, usize) {
        self.anchor_classes
    }

    pub fn anchor_low(&self) -> &[f64] {
        &self.anchor_low
    }

    pub fn anchor_high(&self) -> &[f64] {
        &self.anchor_high
    }

    pub fn is_trained(&self) -> bool {
        norm(&self.anchor_low) > NORM_EPS && norm(&self.anchor_high) > NORM_EPS
    }

    /// Directly set both anchors (e.g. from class means over a dataset).
    pub fn set_anchors(&mut self, low: Vec<f64>, high: Vec<f64>) -> Result<()> {
        for a in [&low, &high] {
            if a.len() != self.dim() {
                return Err(Error::DimMismatch { expected: self.dim(), got: a.len() });
            }
            if norm(a) <= NORM_EPS {
                return Err(Error::ZeroVector);
            }
        }
        self.anchor_low = low;
        self.anchor_high = high;
        Ok(())
    }

    /// One EMA step: `p ← σ·p/‖p‖ + (1−σ)·μ/‖μ‖` for each anchor.
    ///
    /// A zero anchor is replaced by `μ/‖μ‖`.
    pub fn ema_update(&mut self, mu_low: &[f64], mu_high: &[f64]) -> Result<()> {
        for mu in [mu_low, mu_high] {
            if mu.len() != self.dim() {
                return Err(Error::DimMismatch { expected: self.dim(), got: mu.len() });
            }
            if norm(mu) <= NORM_EPS {
                return Err(Error::ZeroVector);
            }
        }
        let sigma = self.sigma;
        ema_step(&mut self.anchor_low, mu_low, sigma);
        ema_step(&mut self.anchor_high, mu_high, sigma);
        Ok(())
    }

    /// Probability that `query` belongs to the high end of the scale.
    pub fn predict_progression(&self, query: &[f64]) -> Result<f64> {
        Ok(self.two_way(query)?[0])
    }

    /// Probability of the low end; sums to one with [`Self::predict_progression`].
    pub fn predict_progression_complement(&self, query: &[f64]) -> Result<f64> {
        Ok(self.two_way(query)?[1])
    }

    fn two_way(&self, query: &[f64]) -> Result<Vec<f64>> {
        if !self.is_trained() {
            return Err(Error::UntrainedStore);
        }
        let high = cosine_similarity(query, &self.anchor_high)?;
        let low = cosine_similarity(query, &self.anchor_low)?;
        softmax(&[high, low])
    }
}

fn ema_step(p: &mut [f64], mu: &[f64], sigma: f64) {
    let np = norm(p);
    let nm = norm(mu);
    if np <= NORM_EPS {
        p.iter_mut().zip(mu).for_each(|(a, m)| *a = m / nm);
    } else {
        p.iter_mut().zip(mu).for_each(|(a, m)| *a = sigma * *a / np + (1.0 - sigma) * m / nm);
    }
}

/// Threshold rule: progressive iff `prob > 0.5`.
pub fn classify(prob: f64) -> Result<FineLabel> {
    if !(0.0..=1.0).contains(&prob) {
        return Err(Error::OutOfRange(format!("probability {prob} outside [0, 1]")));
    }
    Ok(if prob > DECISION_THRESHOLD { FineLabel::Progressive } else { FineLabel::Stable })
}
