//! Hybrid-granularity ordinal losses and the classification objective.
//!
//! All feature-space losses return a [`LossBundle`] carrying the scalar value
//! and `∂loss/∂z_i` for every feature in the batch. Rank-based terms get their
//! gradients through [`crate::ranking::blackbox_rank_backward`]; the smooth
//! terms are differentiated analytically, including the dependence of the
//! class means on every member of the batch.

mod ce;
mod ordinal;
mod similarity;

pub use ce::{cross_entropy_loss, total_loss, LogitBundle, TotalBundle};
pub use ordinal::{
    cls2cls_loss, dispersion_term, hybrid_components, hybrid_ordinal_loss, ins2cls_loss,
    ins2ins_loss, ins2ins_rank_loss, local_prototypes, HybridBreakdown, HybridOptions,
    DISPERSION_EPS,
};
pub use similarity::{feature_similarity, label_similarity, prototype_similarity};

use crate::error::{Error, Result};
use crate::linalg::Matrix;

/// A mini-batch of features (one row per instance) with 1-based coarse labels.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureBatch {
    features: Matrix,
    labels: Vec<usize>,
    num_classes: usize,
}

impl FeatureBatch {
    pub fn new(features: Matrix, labels: Vec<usize>, num_classes: usize) -> Result<Self> {
        if features.rows() == 0 || labels.is_empty() {
            return Err(Error::EmptyInput);
        }
        if features.rows() != labels.len() {
            return Err(Error::DimMismatch { expected: features.rows(), got: labels.len() });
        }
        if features.cols() == 0 {
            return Err(Error::DimMismatch { expected: 1, got: 0 });
        }
        if let Some(&label) = labels.iter().find(|&&l| l == 0 || l > num_classes) {
            return Err(Error::LabelOutOfRange { label, k: num_classes });
        }
        if features.as_slice().iter().any(|v| !v.is_finite()) {
            return Err(Error::OutOfRange("non-finite feature entry".into()));
        }
        Ok(Self { features, labels, num_classes })
    }

    /// Convenience constructor from feature rows.
    pub fn from_rows(rows: &[Vec<f64>], labels: Vec<usize>, num_classes: usize) -> Result<Self> {
        let d = rows.first().map_or(0, Vec::len);
        if let Some(r) = rows.iter().find(|r| r.len() != d) {
            return Err(Error::DimMismatch { expected: d, got: r.len() });
        }
        let data = rows.iter().flatten().copied().collect();
        Self::new(Matrix::from_vec(rows.len(), d, data)?, labels, num_classes)
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.features.cols()
    }

    pub fn num_classes(&self) -> usize {
        self.num_classes
    }

    pub fn features(&self) -> &Matrix {
        &self.features
    }

    pub fn feature(&self, i: usize) -> &[f64] {
        self.features.row(i)
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }
}

/// Per-class means of one batch plus the overall mean.
#[derive(Debug, Clone, PartialEq)]
pub struct LocalPrototypes {
    /// Indexed by `class - 1`; `None` for classes absent from the batch.
    pub per_class: Vec<Option<Vec<f64>>>,
    pub counts: Vec<usize>,
    pub overall: Vec<f64>,
}

impl LocalPrototypes {
    /// Mean of 1-based class `k`, if present.
    pub fn class_mean(&self, k: usize) -> Option<&[f64]> {
        self.per_class.get(k.checked_sub(1)?)?.as_deref()
    }

    pub fn present_classes(&self) -> usize {
        self.per_class.iter().filter(|p| p.is_some()).count()
    }
}

/// Loss value with gradients with respect to every batch feature.
#[derive(Debug, Clone, PartialEq)]
pub struct LossBundle {
    pub value: f64,
    pub feature_grads: Matrix,
}

impl LossBundle {
    pub fn zero(m: usize, d: usize) -> Self {
        Self { value: 0.0, feature_grads: Matrix::zeros(m, d) }
    }

    pub(crate) fn add_assign(&mut self, other: &LossBundle) {
        self.value += other.value;
        for (a, b) in self.feature_grads.as_mut_slice().iter_mut().zip(other.feature_grads.as_slice()) {
            *a += b;
        }
    }
}
