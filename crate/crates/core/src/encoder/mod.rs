//! Desk-scale encoder: a rectifier MLP producing features, followed by a
//! linear classification head over those features.
//!
//! Forward and backward passes are written out by hand; every weight and bias
//! gradient is exact reverse-mode.

mod adam;

pub use adam::{AdamConfig, AdamState};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::Matrix;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Relu,
    Identity,
}

impl Activation {
    #[inline]
    fn apply(self, x: f64) -> f64 {
        match self {
            Activation::Relu => x.max(0.0),
            Activation::Identity => x,
        }
    }

    #[inline]
    fn derivative(self, pre: f64) -> f64 {
        match self {
            Activation::Relu => {
                if pre > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::Identity => 1.0,
        }
    }
}

/// Affine map `W x + b` followed by an activation. `weight` is `out × in`.
#[derive(Debug, Clone, PartialEq)]
pub struct Layer {
    pub weight: Matrix,
    pub bias: Vec<f64>,
    pub activation: Activation,
}

impl Layer {
    fn zeros_like(&self) -> Self {
        Self {
            weight: Matrix::zeros(self.weight.rows(), self.weight.cols()),
            bias: vec![0.0; self.bias.len()],
            activation: self.activation,
        }
    }
}

/// Layer widths of the encoder and the number of head outputs.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelDims {
    pub input_dim: usize,
    pub hidden: Vec<usize>,
    pub feature_dim: usize,
    pub num_classes: usize,
}

impl Default for ModelDims {
    fn default() -> Self {
        Self { input_dim: 16, hidden: vec![64, 64], feature_dim: 32, num_classes: 3 }
    }
}

impl ModelDims {
    pub fn validate(&self) -> Result<()> {
        if self.input_dim == 0 || self.feature_dim == 0 || self.num_classes == 0 {
            return Err(Error::BadDims(format!("{self:?} has a zero width")));
        }
        if self.hidden.contains(&0) {
            return Err(Error::BadDims(format!("hidden widths {:?} contain zero", self.hidden)));
        }
        Ok(())
    }

    /// Widths of the encoder chain, input first, feature dim last.
    fn chain(&self) -> Vec<usize> {
        let mut c = vec![self.input_dim];
        c.extend(&self.hidden);
        c.push(self.feature_dim);
        c
    }
}

/// Encoder layers.
#[derive(Debug, Clone, PartialEq)]
pub struct EncoderParams {
    pub input_dim: usize,
    pub layers: Vec<Layer>,
}

impl EncoderParams {
    pub fn feature_dim(&self) -> usize {
        self.layers.last().map_or(self.input_dim, |l| l.weight.rows())
    }
}

/// Linear classification head; `weight` is `K × d`.
#[derive(Debug, Clone, PartialEq)]
pub struct HeadParams {
    pub weight: Matrix,
    pub bias: Vec<f64>,
}

/// Encoder plus head. Also used to hold gradients of the same shape.
#[derive(Debug, Clone, PartialEq)]
pub struct Model {
    pub encoder: EncoderParams,
    pub head: HeadParams,
}

/// Intermediate values of one forward pass, kept for the backward pass.
#[derive(Debug, Clone)]
pub struct ForwardCache {
    /// Input to each layer, starting with `x`.
    inputs: Vec<Vec<f64>>,
    /// Pre-activation of each layer.
    pre: Vec<Vec<f64>>,
    pub feature: Vec<f64>,
    pub logits: Vec<f64>,
}

/// Kaiming-normal initialisation (std `sqrt(2 / fan_in)`), zero biases.
///
/// Hidden layers use rectifiers; the final encoder layer is linear.
pub fn init_params(dims: &ModelDims, seed: u64) -> Result<Model> {
    dims.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut kaiming = |rows: usize, cols: usize| {
        let normal = Normal::new(0.0, (2.0 / cols as f64).sqrt()).expect("positive std");
        Matrix::from_fn(rows, cols, |_, _| normal.sample(&mut rng))
    };
    let chain = dims.chain();
    let n = chain.len() - 1;
    let layers = chain
        .windows(2)
        .enumerate()
        .map(|(i, w)| Layer {
            weight: kaiming(w[1], w[0]),
            bias: vec![0.0; w[1]],
            activation: if i + 1 == n { Activation::Identity } else { Activation::Relu },
        })
        .collect();
    let head = HeadParams { weight: kaiming(dims.num_classes, dims.feature_dim), bias: vec![0.0; dims.num_classes] };
    Ok(Model { encoder: EncoderParams { input_dim: dims.input_dim, layers }, head })
}

impl Model {
    pub fn dims(&self) -> ModelDims {
        let layers = &self.encoder.layers;
        ModelDims {
            input_dim: self.encoder.input_dim,
            hidden: layers[..layers.len().saturating_sub(1)].iter().map(|l| l.weight.rows()).collect(),
            feature_dim: self.encoder.feature_dim(),
            num_classes: self.head.weight.rows(),
        }
    }

    pub fn zeros_like(&self) -> Self {
        Self {
            encoder: EncoderParams {
                input_dim: self.encoder.input_dim,
                layers: self.encoder.layers.iter().map(Layer::zeros_like).collect(),
            },
            head: HeadParams {
                weight: Matrix::zeros(self.head.weight.rows(), self.head.weight.cols()),
                bias: vec![0.0; self.head.bias.len()],
            },
        }
    }

    /// Parameter slices in a fixed order: per layer weight then bias, then head.
    pub fn param_slices(&self) -> Vec<&[f64]> {
        let mut out: Vec<&[f64]> = Vec::with_capacity(2 * self.encoder.layers.len() + 2);
        for l in &self.encoder.layers {
            out.push(l.weight.as_slice());
            out.push(&l.bias);
        }
        out.push(self.head.weight.as_slice());
        out.push(&self.head.bias);
        out
    }

    pub fn param_slices_mut(&mut self) -> Vec<&mut [f64]> {
        let mut out: Vec<&mut [f64]> = Vec::with_capacity(2 * self.encoder.layers.len() + 2);
        for l in &mut self.encoder.layers {
            out.push(l.weight.as_mut_slice());
            out.push(&mut l.bias);
        }
        out.push(self.head.weight.as_mut_slice());
        out.push(&mut self.head.bias);
        out
    }

    pub fn num_params(&self) -> usize {
        self.param_slices().iter().map(|s| s.len()).sum()
    }

    /// Feature and logits for one input, with the cache needed by [`Model::backward`].
    pub fn forward(&self, x: &[f64]) -> Result<ForwardCache> {
        if x.len() != self.encoder.input_dim {
            return Err(Error::DimMismatch { expected: self.encoder.input_dim, got: x.len() });
        }
        let mut inputs = Vec::with_capacity(self.encoder.layers.len());
        let mut pre = Vec::with_capacity(self.encoder.layers.len());
        let mut h = x.to_vec();
        for layer in &self.encoder.layers {
            let mut a = layer.weight.matvec(&h);
            a.iter_mut().zip(&layer.bias).for_each(|(v, b)| *v += b);
            let out = a.iter().map(|&v| layer.activation.apply(v)).collect();
            inputs.push(std::mem::replace(&mut h, out));
            pre.push(a);
        }
        let mut logits = self.head.weight.matvec(&h);
        logits.iter_mut().zip(&self.head.bias).for_each(|(v, b)| *v += b);
        Ok(ForwardCache { inputs, pre, feature: h, logits })
    }

    /// Feature only.
    pub fn embed(&self, x: &[f64]) -> Result<Vec<f64>> {
        Ok(self.forward(x)?.feature)
    }

    /// Accumulate parameter gradients for a batch of cached forward passes.
    ///
    /// `feature_grads` and `logit_grads` hold `∂L/∂z_i` and `∂L/∂logits_i`
    /// row by row.
    pub fn backward(
        &self,
        caches: &[ForwardCache],
        feature_grads: &Matrix,
        logit_grads: &Matrix,
    ) -> Result<Model> {
        let m = caches.len();
        let (d, k) = (self.encoder.feature_dim(), self.head.weight.rows());
        if feature_grads.rows() != m || feature_grads.cols() != d {
            return Err(Error::DimMismatch { expected: m * d, got: feature_grads.rows() * feature_grads.cols() });
        }
        if logit_grads.rows() != m || logit_grads.cols() != k {
            return Err(Error::DimMismatch { expected: m * k, got: logit_grads.rows() * logit_grads.cols() });
        }
        let mut grads = self.zeros_like();
        for (i, cache) in caches.iter().enumerate() {
            let gl = logit_grads.row(i);
            outer_add(&mut grads.head.weight, gl, &cache.feature);
            grads.head.bias.iter_mut().zip(gl).for_each(|(b, g)| *b += g);

            let mut g = self.head.weight.matvec_t(gl);
            g.iter_mut().zip(feature_grads.row(i)).for_each(|(a, b)| *a += b);

            for (li, layer) in self.encoder.layers.iter().enumerate().rev() {
                let pre = &cache.pre[li];
                let g_pre: Vec<f64> =
                    g.iter().zip(pre).map(|(gv, &p)| gv * layer.activation.derivative(p)).collect();
                let gl_ = &mut grads.encoder.layers[li];
                outer_add(&mut gl_.weight, &g_pre, &cache.inputs[li]);
                gl_.bias.iter_mut().zip(&g_pre).for_each(|(b, gv)| *b += gv);
                if li > 0 {
                    g = layer.weight.matvec_t(&g_pre);
                }
            }
        }
        Ok(grads)
    }
}

fn outer_add(target: &mut Matrix, left: &[f64], right: &[f64]) {
    for (r, &l) in left.iter().enumerate() {
        if l == 0.0 {
            continue;
        }
        for (t, &x) in target.row_mut(r).iter_mut().zip(right) {
            *t += l * x;
        }
    }
}

/// On-disk model checkpoint.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Checkpoint {
    pub dims: ModelDims,
    pub seed: u64,
    pub epoch: usize,
    pub layers: Vec<LayerDoc>,
    pub head_weight: Vec<f64>,
    pub head_bias: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LayerDoc {
    pub rows: usize,
    pub cols: usize,
    pub activation: Activation,
    pub weight: Vec<f64>,
    pub bias: Vec<f64>,
}

impl Checkpoint {
    pub fn from_model(model: &Model, seed: u64, epoch: usize) -> Self {
        Self {
            dims: model.dims(),
            seed,
            epoch,
            layers: model
                .encoder
                .layers
                .iter()
                .map(|l| LayerDoc {
                    rows: l.weight.rows(),
                    cols: l.weight.cols(),
                    activation: l.activation,
                    weight: l.weight.as_slice().to_vec(),
                    bias: l.bias.clone(),
                })
                .collect(),
            head_weight: model.head.weight.as_slice().to_vec(),
            head_bias: model.head.bias.clone(),
        }
    }

    pub fn to_model(&self) -> Result<Model> {
        self.dims.validate()?;
        let chain = self.dims.chain();
        if chain.len() != self.layers.len() + 1 {
            return Err(Error::BadDims(format!("{} layers for dims {:?}", self.layers.len(), self.dims)));
        }
        let mut layers = Vec::with_capacity(self.layers.len());
        for (doc, w) in self.layers.iter().zip(chain.windows(2)) {
            if doc.rows != w[1] || doc.cols != w[0] || doc.bias.len() != w[1] {
                return Err(Error::BadDims(format!("layer {}x{} does not chain {:?}", doc.rows, doc.cols, w)));
            }
            layers.push(Layer {
                weight: Matrix::from_vec(doc.rows, doc.cols, doc.weight.clone())?,
                bias: doc.bias.clone(),
                activation: doc.activation,
            });
        }
        let (k, d) = (self.dims.num_classes, self.dims.feature_dim);
        if self.head_bias.len() != k {
            return Err(Error::BadDims("head bias length".into()));
        }
        let head = HeadParams { weight: Matrix::from_vec(k, d, self.head_weight.clone())?, bias: self.head_bias.clone() };
        Ok(Model { encoder: EncoderParams { input_dim: self.dims.input_dim, layers }, head })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::losses::{cross_entropy_loss, ins2cls_loss, local_prototypes, FeatureBatch};
    use rand::Rng;

    fn tiny_dims() -> ModelDims {
        ModelDims { input_dim: 4, hidden: vec![6, 5], feature_dim: 3, num_classes: 3 }
    }

    #[test]
    fn init_is_deterministic_with_zero_biases() {
        let a = init_params(&ModelDims::default(), 42).unwrap();
        let b = init_params(&ModelDims::default(), 42).unwrap();
        assert_eq!(a, b);
        let c = init_params(&ModelDims::default(), 43).unwrap();
        assert_ne!(a, c);
        assert!(a.encoder.layers.iter().all(|l| l.bias.iter().all(|&b| b == 0.0)));
        assert!(a.head.bias.iter().all(|&b| b == 0.0));
        assert_eq!(a.encoder.layers.last().unwrap().activation, Activation::Identity);
        assert_eq!(a.dims(), ModelDims::default());
    }

    #[test]
    fn kaiming_variance() {
        let dims = ModelDims { input_dim: 128, hidden: vec![], feature_dim: 80, num_classes: 2 };
        let m = init_params(&dims, 3).unwrap();
        let w = m.encoder.layers[0].weight.as_slice();
        assert!(w.len() >= 10_000);
        let mean = w.iter().sum::<f64>() / w.len() as f64;
        let var = w.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / w.len() as f64;
        let target = 2.0 / 128.0;
        assert!((var - target).abs() <= 0.1 * target, "{var} vs {target}");
    }

    #[test]
    fn bad_dims_rejected() {
        let dims = ModelDims { input_dim: 0, ..ModelDims::default() };
        assert!(matches!(init_params(&dims, 0), Err(Error::BadDims(_))));
        let dims = ModelDims { hidden: vec![8, 0], ..ModelDims::default() };
        assert!(matches!(init_params(&dims, 0), Err(Error::BadDims(_))));
    }

    #[test]
    fn identity_layer_and_zero_input() {
        let dims = ModelDims { input_dim: 3, hidden: vec![], feature_dim: 3, num_classes: 2 };
        let mut m = init_params(&dims, 1).unwrap();
        m.encoder.layers[0].weight = Matrix::identity(3);
        assert_eq!(m.embed(&[1.0, -2.0, 0.5]).unwrap(), vec![1.0, -2.0, 0.5]);

        let m = init_params(&ModelDims::default(), 5).unwrap();
        assert!(m.embed(&[0.0; 16]).unwrap().iter().all(|&z| z == 0.0));
        assert!(matches!(m.forward(&[0.0; 3]), Err(Error::DimMismatch { .. })));
    }

    #[test]
    fn zero_upstream_zero_gradient() {
        let m = init_params(&tiny_dims(), 2).unwrap();
        let caches: Vec<_> = (0..3).map(|i| m.forward(&[i as f64, 1.0, -1.0, 0.5]).unwrap()).collect();
        let g = m.backward(&caches, &Matrix::zeros(3, 3), &Matrix::zeros(3, 3)).unwrap();
        assert!(g.param_slices().iter().all(|s| s.iter().all(|&v| v == 0.0)));
    }

    #[test]
    fn linear_layer_weight_gradient_is_outer_product() {
        let dims = ModelDims { input_dim: 3, hidden: vec![], feature_dim: 2, num_classes: 2 };
        let m = init_params(&dims, 9).unwrap();
        let x = [0.5, -1.0, 2.0];
        let cache = m.forward(&x).unwrap();
        let up = Matrix::from_vec(1, 2, vec![3.0, -0.5]).unwrap();
        let g = m.backward(&[cache], &up, &Matrix::zeros(1, 2)).unwrap();
        let expected = Matrix::from_fn(2, 3, |r, c| up.get(0, r) * x[c]);
        assert_eq!(g.encoder.layers[0].weight, expected);
        assert_eq!(g.encoder.layers[0].bias, vec![3.0, -0.5]);
    }

    fn random_inputs(rng: &mut ChaCha8Rng, m: usize, n: usize) -> Vec<Vec<f64>> {
        (0..m).map(|_| (0..n).map(|_| rng.random_range(-1.0..1.0)).collect()).collect()
    }

    /// Scalar loss of the whole network: CE on logits plus the smooth feature losses.
    fn scalar_loss(m: &Model, xs: &[Vec<f64>], labels: &[usize]) -> f64 {
        let caches: Vec<_> = xs.iter().map(|x| m.forward(x).unwrap()).collect();
        let feats: Vec<Vec<f64>> = caches.iter().map(|c| c.feature.clone()).collect();
        let logits = Matrix::from_fn(xs.len(), 3, |i, j| caches[i].logits[j]);
        let batch = FeatureBatch::from_rows(&feats, labels.to_vec(), 3).unwrap();
        let p = local_prototypes(&batch).unwrap();
        // rank terms are piecewise constant, so only the smooth losses are probed
        cross_entropy_loss(&logits, labels).unwrap().value + ins2cls_loss(&batch, &p).unwrap().value
            + crate::losses::dispersion_term(&p)
    }

    #[test]
    fn full_backprop_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        // the dispersion term reaches ~1e3 on tiny features, so a smaller step drowns in roundoff
        let h = 1e-5;
        for trial in 0..50 {
            let mut m = init_params(&tiny_dims(), trial).unwrap();
            // zero biases put a ReLU exactly on its kink whenever a whole layer is dead
            for l in &mut m.encoder.layers {
                l.bias.iter_mut().for_each(|b| *b = rng.random_range(-0.1..0.1));
            }
            assert!(m.num_params() <= 200);
            let xs = random_inputs(&mut rng, 6, 4);
            let labels = vec![1, 2, 3, 1, 2, 3];
            let caches: Vec<_> = xs.iter().map(|x| m.forward(x).unwrap()).collect();
            let feats: Vec<Vec<f64>> = caches.iter().map(|c| c.feature.clone()).collect();
            let logits = Matrix::from_fn(6, 3, |i, j| caches[i].logits[j]);
            let batch = FeatureBatch::from_rows(&feats, labels.clone(), 3).unwrap();
            let p = local_prototypes(&batch).unwrap();
            let ce = cross_entropy_loss(&logits, &labels).unwrap();
            let i2c = ins2cls_loss(&batch, &p).unwrap();
            let full = crate::losses::cls2cls_loss(&batch, &p, &[1, 2, 3], Default::default(), false).unwrap();
            let rank_only = crate::losses::cls2cls_loss(&batch, &p, &[1, 2, 3], Default::default(), true).unwrap();
            let fg = Matrix::from_fn(6, 3, |i, j| {
                i2c.feature_grads.get(i, j) + full.feature_grads.get(i, j) - rank_only.feature_grads.get(i, j)
            });
            let g = m.backward(&caches, &fg, &ce.logit_grads).unwrap();

            let analytic: Vec<f64> = g.param_slices().concat();
            let mut probe = m.clone();
            for (k, &a) in analytic.iter().enumerate() {
                let (s, off) = locate(&probe, k);
                let orig = probe.param_slices()[s][off];
                probe.param_slices_mut()[s][off] = orig + h;
                let fp = scalar_loss(&probe, &xs, &labels);
                probe.param_slices_mut()[s][off] = orig - h;
                let fm = scalar_loss(&probe, &xs, &labels);
                probe.param_slices_mut()[s][off] = orig;
                let fd = (fp - fm) / (2.0 * h);
                assert!((a - fd).abs() <= 1e-5 * a.abs().max(fd.abs()).max(1e-2), "trial {trial} param {k}: {a} vs {fd}");
            }
        }
    }

    fn locate(m: &Model, mut k: usize) -> (usize, usize) {
        for (s, sl) in m.param_slices().iter().enumerate() {
            if k < sl.len() {
                return (s, k);
            }
            k -= sl.len();
        }
        unreachable!()
    }

    #[test]
    fn checkpoint_round_trip() {
        let m = init_params(&ModelDims::default(), 11).unwrap();
        let ck = Checkpoint::from_model(&m, 11, 60);
        let text = serde_json::to_string(&ck).unwrap();
        let back: Checkpoint = serde_json::from_str(&text).unwrap();
        assert_eq!(back, ck);
        assert_eq!(back.to_model().unwrap(), m);
    }
}
