//! Training loop, λ schedule, per-seed runs.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::config::bad;
use crate::data::{Dataset, StratifiedSampler, TrainingView};
use crate::encoder::{init_params, AdamConfig, AdamState, Model, ModelDims};
use crate::error::{Error, Result};
use crate::eval::{binary_metrics, mean_std, spearman, BinaryMetrics, ScoredSample};
use crate::linalg::{cosine_similarity, Matrix};
use crate::losses::{
    cross_entropy_loss, hybrid_components, local_prototypes, total_loss, FeatureBatch, HybridOptions, LossBundle,
};
use crate::prototypes::GlobalPrototypeStore;
use crate::ranking::BlackboxConfig;

/// Sampler streams are derived from the run seed so they never coincide with
/// the weight-initialisation stream.
const SAMPLER_STREAM: u64 = 0x5EED_0BA7_C4E5;

/// Training settings. Read from a flat config file; omitted keys take these defaults.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub num_classes: usize,
    pub epochs: usize,
    pub batch_size: usize,
    pub base_lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub adam_epsilon: f64,
    pub lr_decay: f64,
    pub sigma: f64,
    pub lambda_start: f64,
    pub lambda_end: f64,
    /// Step λ once per epoch instead of once per iteration.
    pub lambda_per_epoch: bool,
    pub lambda_interp: f64,
    pub ins2ins: bool,
    pub ins2cls: bool,
    pub cls2cls: bool,
    /// Report the class-dispersion term without letting it drive the features.
    pub detach_dispersion: bool,
    /// `[low, high]` classes whose prototypes become the global anchors.
    pub anchor_classes: [usize; 2],
    pub seeds: Vec<u64>,
    pub hidden: Vec<usize>,
    pub feature_dim: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        let adam = AdamConfig::default();
        Self {
            num_classes: 3,
            epochs: 60,
            batch_size: 8,
            base_lr: adam.base_lr,
            beta1: adam.beta1,
            beta2: adam.beta2,
            adam_epsilon: adam.epsilon,
            lr_decay: adam.decay,
            sigma: crate::prototypes::DEFAULT_SIGMA,
            lambda_start: 0.0,
            lambda_end: 1.0,
            lambda_per_epoch: false,
            lambda_interp: 1.0,
            ins2ins: true,
            ins2cls: true,
            cls2cls: true,
            detach_dispersion: false,
            anchor_classes: [1, 3],
            seeds: vec![0, 1, 2, 3, 4],
            hidden: vec![64, 64],
            feature_dim: 32,
        }
    }
}

/// Named loss-component presets.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Ablation {
    CeOnly,
    Ins2Ins,
    Ins2InsIns2Cls,
    Full,
}

impl Ablation {
    pub const ALL: [Ablation; 4] = [Ablation::CeOnly, Ablation::Ins2Ins, Ablation::Ins2InsIns2Cls, Ablation::Full];

    pub fn name(self) -> &'static str {
        match self {
            Ablation::CeOnly => "ce-only",
            Ablation::Ins2Ins => "ins2ins",
            Ablation::Ins2InsIns2Cls => "ins2ins-ins2cls",
            Ablation::Full => "full",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|a| a.name() == s)
    }

    pub fn apply(self, cfg: &TrainConfig) -> TrainConfig {
        let (a, b, c) = match self {
            Ablation::CeOnly => (false, false, false),
            Ablation::Ins2Ins => (true, false, false),
            Ablation::Ins2InsIns2Cls => (true, true, false),
            Ablation::Full => (true, true, true),
        };
        TrainConfig { ins2ins: a, ins2cls: b, cls2cls: c, ..cfg.clone() }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.num_classes < 3 {
            return Err(bad("num_classes", "need at least 3 classes"));
        }
        if self.epochs == 0 {
            return Err(bad("epochs", "must be at least 1"));
        }
        if self.batch_size < self.num_classes {
            return Err(bad("batch_size", format!("must be at least num_classes = {}", self.num_classes)));
        }
        if !(self.base_lr > 0.0 && self.base_lr.is_finite()) {
            return Err(bad("base_lr", "must be positive"));
        }
        for (key, v) in [("beta1", self.beta1), ("beta2", self.beta2)] {
            if !(0.0..1.0).contains(&v) {
                return Err(bad(key, "must lie in [0, 1)"));
            }
        }
        if self.adam_epsilon.is_nan() || self.adam_epsilon <= 0.0 {
            return Err(bad("adam_epsilon", "must be positive"));
        }
        if !(self.lr_decay > 0.0 && self.lr_decay <= 1.0) {
            return Err(bad("lr_decay", "must lie in (0, 1]"));
        }
        if !(self.sigma > 0.0 && self.sigma < 1.0) {
            return Err(bad("sigma", "must lie in (0, 1)"));
        }
        for (key, v) in [("lambda_start", self.lambda_start), ("lambda_end", self.lambda_end)] {
            if !(0.0..=1.0).contains(&v) {
                return Err(bad(key, "must lie in [0, 1]"));
            }
        }
        if self.lambda_start > self.lambda_end {
            return Err(bad("lambda_start", "must not exceed lambda_end"));
        }
        if !(self.lambda_interp > 0.0 && self.lambda_interp.is_finite()) {
            return Err(bad("lambda_interp", "must be positive"));
        }
        let [lo, hi] = self.anchor_classes;
        if lo == hi || lo == 0 || hi == 0 || lo > self.num_classes || hi > self.num_classes {
            return Err(bad("anchor_classes", format!("need two distinct classes in 1..={}", self.num_classes)));
        }
        if self.seeds.is_empty() {
            return Err(bad("seeds", "need at least one seed"));
        }
        if self.feature_dim == 0 {
            return Err(bad("feature_dim", "must be positive"));
        }
        if self.hidden.contains(&0) {
            return Err(bad("hidden", "widths must be positive"));
        }
        Ok(())
    }

    pub fn adam(&self) -> AdamConfig {
        AdamConfig {
            base_lr: self.base_lr,
            beta1: self.beta1,
            beta2: self.beta2,
            epsilon: self.adam_epsilon,
            decay: self.lr_decay,
        }
    }

    pub fn hybrid_options(&self) -> HybridOptions {
        HybridOptions {
            ins2ins: self.ins2ins,
            ins2cls: self.ins2cls,
            cls2cls: self.cls2cls,
            detach_dispersion: self.detach_dispersion,
            blackbox: BlackboxConfig { lambda_interp: self.lambda_interp },
        }
    }

    pub fn model_dims(&self, input_dim: usize) -> ModelDims {
        ModelDims {
            input_dim,
            hidden: self.hidden.clone(),
            feature_dim: self.feature_dim,
            num_classes: self.num_classes,
        }
    }

    /// λ at a step of the schedule, mapped from `[0, 1]` onto `[lambda_start, lambda_end]`.
    pub fn lambda_at(&self, iter: usize, total: usize) -> Result<f64> {
        let s = lambda_schedule(iter, total)?;
        Ok(self.lambda_start + (self.lambda_end - self.lambda_start) * s)
    }
}

/// Linear ramp `iter / total`.
pub fn lambda_schedule(iter: usize, total: usize) -> Result<f64> {
    if total == 0 || iter > total {
        return Err(Error::OutOfRange(format!("schedule step {iter} of {total}")));
    }
    Ok(iter as f64 / total as f64)
}

/// One optimisation step.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IterationRecord {
    pub iteration: usize,
    pub epoch: usize,
    pub lr: f64,
    pub lambda: f64,
    pub loss_total: f64,
    pub loss_ce: f64,
    pub loss_i2i: f64,
    pub loss_i2c: f64,
    pub loss_c2c: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainHistory {
    pub records: Vec<IterationRecord>,
    /// Mean total loss of each epoch.
    pub epoch_loss: Vec<f64>,
}

impl TrainHistory {
    pub fn write_csv<W: std::io::Write>(&self, w: W) -> Result<()> {
        let mut out = csv::Writer::from_writer(w);
        for r in &self.records {
            out.serialize(r).map_err(|e| Error::Io(std::io::Error::other(e)))?;
        }
        out.flush()?;
        Ok(())
    }

    /// Trailing moving average of `loss_total` over `window` iterations.
    pub fn smoothed_total(&self, window: usize) -> Vec<f64> {
        let w = window.max(1);
        let v: Vec<f64> = self.records.iter().map(|r| r.loss_total).collect();
        (0..v.len())
            .map(|i| {
                let lo = (i + 1).saturating_sub(w);
                v[lo..=i].iter().sum::<f64>() / (i + 1 - lo) as f64
            })
            .collect()
    }
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub seed: u64,
    pub model: Model,
    pub store: GlobalPrototypeStore,
    pub history: TrainHistory,
}

fn at_iteration(iteration: usize) -> impl Fn(Error) -> Error {
    move |e| match e {
        Error::DegenerateBatch(m) => Error::DegenerateBatch(format!("iteration {iteration}: {m}")),
        Error::ZeroVector | Error::OutOfRange(_) => Error::Numeric { iteration, msg: e.to_string() },
        other => other,
    }
}

/// Train one model from `seed`.
pub fn train(config: &TrainConfig, data: &TrainingView, seed: u64) -> Result<TrainOutcome> {
    config.validate()?;
    if data.num_classes != config.num_classes {
        return Err(bad(
            "num_classes",
            format!("config says {}, data has {}", config.num_classes, data.num_classes),
        ));
    }
    let dims = config.model_dims(data.input_dim());
    let mut model = init_params(&dims, seed)?;
    let mut adam = AdamState::new(config.adam(), &model);
    let [lo, hi] = config.anchor_classes;
    let mut store = GlobalPrototypeStore::new(config.feature_dim, config.sigma, (lo, hi), config.num_classes)?;
    let sampler = StratifiedSampler::new(&data.labels, config.num_classes, config.batch_size)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ SAMPLER_STREAM);
    let opts = config.hybrid_options();

    let epochs: Vec<Vec<Vec<usize>>> = (0..config.epochs).map(|_| sampler.epoch(&mut rng)).collect();
    let total_iters: usize = epochs.iter().map(Vec::len).sum();
    let mut history = TrainHistory::default();
    let mut iteration = 0usize;

    for (epoch, batches) in epochs.iter().enumerate() {
        let lr = config.adam().lr_at(epoch);
        let mut epoch_sum = 0.0;
        for idx in batches {
            let ctx = at_iteration(iteration);
            let lambda = if config.lambda_per_epoch {
                config.lambda_at(epoch + 1, config.epochs)?
            } else {
                config.lambda_at(iteration + 1, total_iters)?
            };
            let caches = idx.iter().map(|&i| model.forward(&data.inputs[i])).collect::<Result<Vec<_>>>()?;
            let m = idx.len();
            let feats = Matrix::from_fn(m, config.feature_dim, |r, c| caches[r].feature[c]);
            let logits = Matrix::from_fn(m, config.num_classes, |r, c| caches[r].logits[c]);
            let labels: Vec<usize> = idx.iter().map(|&i| data.labels[i]).collect();
            let batch = FeatureBatch::new(feats, labels, config.num_classes).map_err(&ctx)?;
            let protos = local_prototypes(&batch).map_err(&ctx)?;

            let ce = cross_entropy_loss(&logits, batch.labels()).map_err(&ctx)?;
            let (hyb, parts) = if opts.any() {
                let h = hybrid_components(&batch, &protos, &opts).map_err(&ctx)?;
                let parts = [h.ins2ins, h.ins2cls, h.cls2cls];
                (h.total, parts)
            } else {
                (LossBundle::zero(m, config.feature_dim), [0.0; 3])
            };
            let tot = total_loss(&ce, &hyb, lambda);
            if !tot.value.is_finite() || tot.feature_grads.as_slice().iter().any(|g| !g.is_finite()) {
                return Err(Error::Numeric { iteration, msg: format!("non-finite loss {}", tot.value) });
            }
            let grads = model.backward(&caches, &tot.feature_grads, &tot.logit_grads)?;
            adam.step(&mut model, &grads, epoch)?;

            let mu_lo = protos.class_mean(lo).ok_or_else(|| ctx(Error::DegenerateBatch(format!("class {lo} absent"))))?;
            let mu_hi = protos.class_mean(hi).ok_or_else(|| ctx(Error::DegenerateBatch(format!("class {hi} absent"))))?;
            store.ema_update(mu_lo, mu_hi).map_err(&ctx)?;

            history.records.push(IterationRecord {
                iteration,
                epoch,
                lr,
                lambda,
                loss_total: tot.value,
                loss_ce: ce.value,
                loss_i2i: parts[0],
                loss_i2c: parts[1],
                loss_c2c: parts[2],
            });
            epoch_sum += tot.value;
            iteration += 1;
        }
        history.epoch_loss.push(epoch_sum / batches.len() as f64);
    }
    Ok(TrainOutcome { seed, model, store, history })
}

/// Evaluation of a trained model on a labelled cohort.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Evaluation {
    pub metrics: BinaryMetrics,
    /// Spearman correlation of `cos(z, anchor_high)` with `latent_t` over every sample.
    pub ordinality: f64,
}

/// Fine-split metrics on the samples carrying a fine label, plus the
/// ordinality diagnostic over the whole cohort.
pub fn evaluate(model: &Model, store: &GlobalPrototypeStore, data: &Dataset) -> Result<Evaluation> {
    let mut scored = Vec::new();
    let mut cos = Vec::with_capacity(data.len());
    let mut latent = Vec::with_capacity(data.len());
    for s in &data.samples {
        let z = model.embed(&s.x)?;
        if let Some(truth) = s.fine_label {
            scored.push(ScoredSample::new(store.predict_progression(&z)?, truth)?);
        }
        cos.push(cosine_similarity(&z, store.anchor_high())?);
        latent.push(s.latent_t);
    }
    Ok(Evaluation { metrics: binary_metrics(&scored)?, ordinality: spearman(&cos, &latent)? })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeedRow {
    pub seed: u64,
    #[serde(flatten)]
    pub metrics: BinaryMetrics,
    pub spearman: f64,
}

/// Mean and population standard deviation of each real-valued metric.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub acc: f64,
    pub auc: f64,
    pub f1: f64,
    pub precision: f64,
    pub recall: f64,
    pub spearman: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeedReport {
    pub per_seed: Vec<SeedRow>,
    pub mean: Summary,
    pub std: Summary,
}

impl SeedReport {
    pub fn from_rows(per_seed: Vec<SeedRow>) -> Self {
        let col = |f: fn(&SeedRow) -> f64| mean_std(&per_seed.iter().map(f).collect::<Vec<_>>());
        let acc = col(|r| r.metrics.acc);
        let auc = col(|r| r.metrics.auc);
        let f1 = col(|r| r.metrics.f1);
        let precision = col(|r| r.metrics.precision);
        let recall = col(|r| r.metrics.recall);
        let rho = col(|r| r.spearman);
        let mean = Summary { acc: acc.0, auc: auc.0, f1: f1.0, precision: precision.0, recall: recall.0, spearman: rho.0 };
        let std = Summary { acc: acc.1, auc: auc.1, f1: f1.1, precision: precision.1, recall: recall.1, spearman: rho.1 };
        SeedReport { per_seed, mean, std }
    }
}

/// Train once per configured seed (in parallel) and evaluate each run on
/// `eval`. Rows follow the order of `config.seeds`.
pub fn run_seeds(config: &TrainConfig, train_data: &TrainingView, eval: &Dataset) -> Result<(SeedReport, Vec<TrainOutcome>)> {
    config.validate()?;
    let results: Vec<Result<(SeedRow, TrainOutcome)>> = config
        .seeds
        .par_iter()
        .map(|&seed| {
            let out = train(config, train_data, seed)?;
            let ev = evaluate(&out.model, &out.store, eval)?;
            Ok((SeedRow { seed, metrics: ev.metrics, spearman: ev.ordinality }, out))
        })
        .collect();
    let mut rows = Vec::with_capacity(results.len());
    let mut outs = Vec::with_capacity(results.len());
    for r in results {
        let (row, out) = r?;
        rows.push(row);
        outs.push(out);
    }
    Ok((SeedReport::from_rows(rows), outs))
}
