//! Command-line front end.
//!
//! Exit codes: 0 success, 2 config or usage, 3 I/O or unreadable input,
//! 4 numeric failure, 5 incompatible artifacts.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::config::read_flat;
use crate::data::{generate, kfold_split, load_dataset, save_dataset, Dataset, GenConfig};
use crate::encoder::{Checkpoint, Model};
use crate::error::{Error, Result};
use crate::eval::mean_std;
use crate::prototypes::GlobalPrototypeStore;
use crate::trainer::{evaluate, run_seeds, train, Ablation, Evaluation, SeedReport, TrainConfig};

#[derive(Debug, Parser)]
#[command(name = "ordproto", version, about = "Ordinal prototype learning on coarse stage labels")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a synthetic ordinal cohort as CSV.
    GenData {
        #[arg(long)]
        config: PathBuf,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train once per configured seed and write per-seed artifacts.
    Train {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Cohort used for evaluation; defaults to the training file.
        #[arg(long)]
        test: Option<PathBuf>,
        /// Loss-component preset: ce-only, ins2ins, ins2ins-ins2cls or full.
        #[arg(long)]
        ablate: Option<String>,
    },
    /// Score a cohort with a trained checkpoint and prototype store.
    Eval {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        store: PathBuf,
        #[arg(long)]
        data: PathBuf,
        /// Also write the metrics JSON here.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Write features and progression probabilities for every sample.
    ExportEmbeddings {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        store: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Stratified k-fold cross-validation with the first configured seed.
    Crossval {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long, default_value_t = 5)]
        k: usize,
        /// Also write the fold table as JSON here.
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

pub fn exit_code(e: &Error) -> i32 {
    match e {
        Error::BadConfig { .. } | Error::BatchTooSmall { .. } | Error::BadK { .. } => 2,
        Error::Io(_) | Error::Parse { .. } | Error::EmptyInput | Error::LabelOutOfRange { .. } => 3,
        Error::Incompatible(_) | Error::DimMismatch { .. } | Error::ShapeMismatch(_) | Error::BadDims(_) => 5,
        _ => 4,
    }
}

/// Paths written by `train`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub config_path: String,
    pub config: TrainConfig,
    pub data_path: String,
    pub eval_path: String,
    pub seeds: Vec<u64>,
    pub out_dir: String,
    pub metrics: String,
    pub runs: Vec<SeedArtifacts>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeedArtifacts {
    pub seed: u64,
    pub checkpoint: String,
    pub store: String,
    pub history: String,
    pub embeddings: String,
}

/// One held-out fold of a cross-validation run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FoldRow {
    pub fold: String,
    pub acc: f64,
    pub auc: f64,
    pub f1: f64,
    pub precision: f64,
    pub recall: f64,
}

pub fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::GenData { config, seed, out } => cmd_gen_data(&config, seed, &out),
        Command::Train { config, data, out, test, ablate } => {
            cmd_train(&config, &data, &out, test.as_deref(), ablate.as_deref()).map(|_| ())
        }
        Command::Eval { checkpoint, store, data, out } => {
            let ev = cmd_eval(&checkpoint, &store, &data)?;
            let text = to_json(&EvalDoc::from(ev))?;
            print!("{text}");
            if let Some(p) = out {
                fs::write(p, text)?;
            }
            Ok(())
        }
        Command::ExportEmbeddings { checkpoint, store, data, out } => {
            let model = read_checkpoint(&checkpoint)?;
            let store = read_store(&store)?;
            let ds = load_dataset(&data)?;
            check_compatible(&model, &store, &ds)?;
            export_embeddings(&model, &store, &ds, &out)
        }
        Command::Crossval { config, data, k, out } => {
            let rows = cmd_crossval(&config, &data, k)?;
            print_folds(&rows);
            if let Some(p) = out {
                fs::write(p, to_json(&rows)?)?;
            }
            Ok(())
        }
    }
}

fn to_json<T: Serialize>(v: &T) -> Result<String> {
    let mut s = serde_json::to_string_pretty(v).map_err(|e| Error::Io(std::io::Error::other(e)))?;
    s.push('\n');
    Ok(s)
}

fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path)?;
    serde_json::from_str(&text).map_err(|e| Error::Parse { line: e.line() as u64, msg: format!("{}: {e}", path.display()) })
}

pub fn read_checkpoint(path: &Path) -> Result<Model> {
    read_json::<Checkpoint>(path)?.to_model()
}

pub fn read_store(path: &Path) -> Result<GlobalPrototypeStore> {
    read_json(path)
}

fn check_compatible(model: &Model, store: &GlobalPrototypeStore, ds: &Dataset) -> Result<()> {
    let dims = model.dims();
    if dims.input_dim != ds.input_dim() {
        return Err(Error::Incompatible(format!(
            "checkpoint expects {} inputs, data has {}",
            dims.input_dim,
            ds.input_dim()
        )));
    }
    if dims.feature_dim != store.dim() {
        return Err(Error::Incompatible(format!(
            "checkpoint features have dim {}, store has {}",
            dims.feature_dim,
            store.dim()
        )));
    }
    Ok(())
}

pub fn cmd_gen_data(config: &Path, seed: u64, out: &Path) -> Result<()> {
    let cfg: GenConfig = read_flat(config)?;
    let ds = generate(&cfg, seed)?;
    save_dataset(&ds, out)?;
    for (k, n) in ds.class_counts().iter().enumerate() {
        println!("class {}: {n}", k + 1);
    }
    Ok(())
}

fn load_train_config(path: &Path, ablate: Option<&str>) -> Result<TrainConfig> {
    let mut cfg: TrainConfig = read_flat(path)?;
    if let Some(name) = ablate {
        let a = Ablation::parse(name).ok_or_else(|| Error::BadConfig {
            key: "ablate".into(),
            msg: format!("unknown preset {name:?}; expected ce-only, ins2ins, ins2ins-ins2cls or full"),
        })?;
        cfg = a.apply(&cfg);
    }
    cfg.validate()?;
    Ok(cfg)
}

pub fn cmd_train(
    config: &Path,
    data: &Path,
    out: &Path,
    test: Option<&Path>,
    ablate: Option<&str>,
) -> Result<RunManifest> {
    let cfg = load_train_config(config, ablate)?;
    let train_ds = load_dataset(data)?;
    let eval_path = test.unwrap_or(data);
    let eval_ds = if test.is_some() { load_dataset(eval_path)? } else { train_ds.clone() };
    if eval_ds.input_dim() != train_ds.input_dim() {
        return Err(Error::Incompatible(format!(
            "evaluation data has {} inputs, training data {}",
            eval_ds.input_dim(),
            train_ds.input_dim()
        )));
    }
    let (report, outs) = run_seeds(&cfg, &train_ds.training_view(), &eval_ds)?;

    fs::create_dir_all(out)?;
    let mut runs = Vec::new();
    for o in &outs {
        let dir = out.join(format!("seed-{}", o.seed));
        fs::create_dir_all(&dir)?;
        let art = SeedArtifacts {
            seed: o.seed,
            checkpoint: dir.join("checkpoint.json").display().to_string(),
            store: dir.join("store.json").display().to_string(),
            history: dir.join("history.csv").display().to_string(),
            embeddings: dir.join("embeddings.csv").display().to_string(),
        };
        fs::write(&art.checkpoint, to_json(&Checkpoint::from_model(&o.model, o.seed, cfg.epochs))?)?;
        fs::write(&art.store, to_json(&o.store)?)?;
        o.history.write_csv(fs::File::create(&art.history)?)?;
        export_embeddings(&o.model, &o.store, &eval_ds, Path::new(&art.embeddings))?;
        runs.push(art);
    }
    let metrics = out.join("metrics.json");
    fs::write(&metrics, to_json(&report)?)?;
    let manifest = RunManifest {
        config_path: config.display().to_string(),
        config: cfg.clone(),
        data_path: data.display().to_string(),
        eval_path: eval_path.display().to_string(),
        seeds: cfg.seeds.clone(),
        out_dir: out.display().to_string(),
        metrics: metrics.display().to_string(),
        runs,
    };
    fs::write(out.join("manifest.json"), to_json(&manifest)?)?;
    print_report(&report);
    Ok(manifest)
}

fn print_report(r: &SeedReport) {
    println!("seed      acc     auc      f1    prec  recall  spearman");
    for row in &r.per_seed {
        let m = &row.metrics;
        println!(
            "{:<6} {:7.4} {:7.4} {:7.4} {:7.4} {:7.4} {:9.4}",
            row.seed, m.acc, m.auc, m.f1, m.precision, m.recall, row.spearman
        );
    }
    for (name, s) in [("mean", &r.mean), ("std", &r.std)] {
        println!(
            "{:<6} {:7.4} {:7.4} {:7.4} {:7.4} {:7.4} {:9.4}",
            name, s.acc, s.auc, s.f1, s.precision, s.recall, s.spearman
        );
    }
}

/// Flat metrics object written by `eval`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalDoc {
    #[serde(flatten)]
    pub metrics: crate::eval::BinaryMetrics,
    pub spearman: f64,
}

impl From<Evaluation> for EvalDoc {
    fn from(e: Evaluation) -> Self {
        EvalDoc { metrics: e.metrics, spearman: e.ordinality }
    }
}

pub fn cmd_eval(checkpoint: &Path, store: &Path, data: &Path) -> Result<Evaluation> {
    let model = read_checkpoint(checkpoint)?;
    let store = read_store(store)?;
    let ds = load_dataset(data)?;
    check_compatible(&model, &store, &ds)?;
    evaluate(&model, &store, &ds)
}

pub fn export_embeddings(model: &Model, store: &GlobalPrototypeStore, ds: &Dataset, out: &Path) -> Result<()> {
    let d = model.dims().feature_dim;
    let mut w = std::io::BufWriter::new(fs::File::create(out)?);
    let mut header = vec!["id".to_string(), "coarse_label".into(), "fine_label".into()];
    header.extend((0..d).map(|j| format!("z{j}")));
    header.push("p_progressive".into());
    writeln!(w, "{}", header.join(","))?;
    for s in &ds.samples {
        let z = model.embed(&s.x)?;
        let p = store.predict_progression(&z)?;
        let mut row = vec![s.id.to_string(), s.coarse_label.to_string(), s.fine_label.map_or(String::new(), |f| f.to_string())];
        row.extend(z.iter().map(f64::to_string));
        row.push(p.to_string());
        writeln!(w, "{}", row.join(","))?;
    }
    w.flush()?;
    Ok(())
}

/// Train on `k − 1` folds, score the held-out fold; `k` fold rows then a
/// mean and a standard-deviation row.
pub fn cmd_crossval(config: &Path, data: &Path, k: usize) -> Result<Vec<FoldRow>> {
    let cfg = load_train_config(config, None)?;
    let ds = load_dataset(data)?;
    let seed = cfg.seeds[0];
    let split = kfold_split(&ds.labels(), ds.num_classes, k, seed)?;
    let rows = (1..=k)
        .into_par_iter()
        .map(|f| {
            let (tr, te) = split.partition(f);
            let out = train(&cfg, &ds.subset(&tr).training_view(), seed)?;
            let ev = evaluate(&out.model, &out.store, &ds.subset(&te))?;
            let m = ev.metrics;
            Ok(FoldRow { fold: f.to_string(), acc: m.acc, auc: m.auc, f1: m.f1, precision: m.precision, recall: m.recall })
        })
        .collect::<Result<Vec<_>>>()?;
    let col = |g: fn(&FoldRow) -> f64| mean_std(&rows.iter().map(g).collect::<Vec<_>>());
    let stats = [col(|r| r.acc), col(|r| r.auc), col(|r| r.f1), col(|r| r.precision), col(|r| r.recall)];
    let agg = |name: &str, pick: fn((f64, f64)) -> f64| FoldRow {
        fold: name.into(),
        acc: pick(stats[0]),
        auc: pick(stats[1]),
        f1: pick(stats[2]),
        precision: pick(stats[3]),
        recall: pick(stats[4]),
    };
    let mut all = rows.clone();
    all.push(agg("mean", |s| s.0));
    all.push(agg("std", |s| s.1));
    Ok(all)
}

fn print_folds(rows: &[FoldRow]) {
    println!("fold      acc     auc      f1    prec  recall");
    for r in rows {
        println!("{:<6} {:7.4} {:7.4} {:7.4} {:7.4} {:7.4}", r.fold, r.acc, r.auc, r.f1, r.precision, r.recall);
    }
}
