use std::io::Write;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::metrics::{evaluate_scores, MeanMetrics, MetricsReport, DEFAULT_THRESHOLD};
use crate::data::{
    filter_by_interactions, select_common_genes, stratified_kfold, ExpressionDataset, FoldSplit,
    GeneInteractionSet, NormalizationStats,
};
use crate::error::{Error, Result};
use crate::models::{predict, ModelConfig, ModelParams};
use crate::rng::derive_seed;
use crate::train::{train, MetaConfig, TrainerKind};

const SPLIT_STREAM: u64 = 0x5EED_5917;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CvConfig {
    /// Architecture template; `input_dim` is replaced by the number of
    /// selected genes.
    pub model: ModelConfig,
    /// Training settings; `seed` is replaced by a per-fold seed.
    pub train: MetaConfig,
    pub folds: usize,
    pub seed: u64,
    /// Worker threads for folds and λ points. 1 runs inline.
    pub jobs: usize,
}

/// One fold's normalized train/test split of the target.
#[derive(Clone, Debug)]
pub struct PreparedFold {
    pub train: ExpressionDataset,
    pub test: ExpressionDataset,
    pub stats: NormalizationStats,
}

/// Feature-selected, normalized datasets and folds, reusable across trainers
/// and λ values.
#[derive(Clone, Debug)]
pub struct CvData {
    pub genes: Vec<String>,
    /// Every non-target dataset, each normalized with its own statistics.
    pub sources: Vec<ExpressionDataset>,
    pub split: FoldSplit,
    pub folds: Vec<PreparedFold>,
}

/// Selects the shared genes (optionally restricted to the interaction set),
/// projects every dataset onto them, normalizes sources on their own data
/// and each target training fold on itself, applying the training-fold
/// statistics to the held-out fold.
pub fn prepare_cv(
    datasets: &[ExpressionDataset],
    target: &str,
    interactions: Option<&GeneInteractionSet>,
    folds: usize,
    seed: u64,
) -> Result<CvData> {
    let target_ds = datasets
        .iter()
        .find(|d| d.name() == target)
        .ok_or_else(|| Error::Contract(format!("target dataset `{target}` not among inputs")))?;
    let mut genes = select_common_genes(datasets)?;
    if let Some(set) = interactions {
        genes = filter_by_interactions(&genes, set)?;
    }
    let target_ds = target_ds.project(&genes)?;
    let sources = datasets
        .iter()
        .filter(|d| d.name() != target)
        .map(|d| {
            let p = d.project(&genes)?;
            NormalizationStats::fit(&p)?.apply(&p)
        })
        .collect::<Result<Vec<_>>>()?;
    let split = stratified_kfold(target_ds.labels(), folds, derive_seed(seed, &[SPLIT_STREAM]))?;
    let prepared = (0..split.k())
        .map(|f| {
            let train = target_ds.subset(&split.train_indices(f));
            let test = target_ds.subset(split.test_indices(f));
            let stats = NormalizationStats::fit(&train).map_err(|e| Error::Fold {
                fold: f,
                source: Box::new(e),
            })?;
            Ok(PreparedFold {
                train: stats.apply(&train)?,
                test: stats.apply(&test)?,
                stats,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(CvData {
        genes,
        sources,
        split,
        folds: prepared,
    })
}

/// Seed for the training run of fold `fold`; independent of trainer kind and
/// λ so every configuration sees the same initialisation and batches.
pub fn fold_seed(seed: u64, fold: usize) -> u64 {
    derive_seed(seed, &[fold as u64])
}

#[derive(Clone, Debug, PartialEq)]
pub struct CvResult {
    pub folds: Vec<MetricsReport>,
    pub mean: MeanMetrics,
}

#[derive(Serialize)]
struct CvRow<'a> {
    fold: &'a str,
    accuracy: f64,
    precision: f64,
    recall: f64,
    f1: f64,
    pr_auc: Option<f64>,
    tp: Option<usize>,
    fp: Option<usize>,
    tn: Option<usize>,
    #[serde(rename = "fn")]
    fn_: Option<usize>,
    n_samples: Option<usize>,
}

impl CvResult {
    pub fn from_folds(folds: Vec<MetricsReport>) -> Result<CvResult> {
        let mean = MeanMetrics::of(&folds)?;
        Ok(CvResult { folds, mean })
    }

    /// Per-fold rows followed by a `mean` row (counts left blank there).
    pub fn to_csv_writer<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        let labels: Vec<String> = (0..self.folds.len()).map(|f| f.to_string()).collect();
        for (r, label) in self.folds.iter().zip(&labels) {
            w.serialize(CvRow {
                fold: label,
                accuracy: r.accuracy,
                precision: r.precision,
                recall: r.recall,
                f1: r.f1,
                pr_auc: r.pr_auc,
                tp: Some(r.tp),
                fp: Some(r.fp),
                tn: Some(r.tn),
                fn_: Some(r.fn_),
                n_samples: Some(r.n_samples),
            })?;
        }
        let m = &self.mean;
        w.serialize(CvRow {
            fold: "mean",
            accuracy: m.accuracy,
            precision: m.precision,
            recall: m.recall,
            f1: m.f1,
            pr_auc: m.pr_auc,
            tp: None,
            fp: None,
            tn: None,
            fn_: None,
            n_samples: None,
        })?;
        w.flush()?;
        Ok(())
    }

    pub fn write_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        self.to_csv_writer(std::fs::File::create(path)?)
    }

    pub fn f1_std(&self) -> f64 {
        sample_std(&self.folds.iter().map(|r| r.f1).collect::<Vec<_>>())
    }
}

/// Standard deviation with the `n − 1` denominator; 0 for fewer than two
/// values.
pub fn sample_std(values: &[f64]) -> f64 {
    if values.len() < 2 {
        return 0.0;
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt()
}

pub(crate) fn run_parallel<T: Send>(jobs: usize, n: usize, f: impl Fn(usize) -> T + Sync) -> Result<Vec<T>> {
    if jobs <= 1 || n <= 1 {
        return Ok((0..n).map(f).collect());
    }
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(jobs)
        .build()
        .map_err(|e| Error::Contract(format!("thread pool: {e}")))?;
    Ok(pool.install(|| (0..n).into_par_iter().map(&f).collect()))
}

/// Trains on one prepared fold and returns the fitted parameters together
/// with the model config actually used.
pub fn train_fold(
    data: &CvData,
    fold: usize,
    config: &CvConfig,
    kind: TrainerKind,
) -> Result<(ModelConfig, ModelParams)> {
    let pf = &data.folds[fold];
    let mut model = config.model.clone();
    model.input_dim = data.genes.len();
    let train_cfg = MetaConfig {
        seed: fold_seed(config.seed, fold),
        ..config.train.clone()
    };
    let (params, log) = train(kind, &train_cfg, &model, &data.sources, &pf.train)?;
    log::debug!(
        "fold {fold}: {kind} finished {} steps, last target loss {:?}",
        log.len(),
        log.target_losses().last()
    );
    Ok((model, params))
}

fn evaluate_fold(data: &CvData, fold: usize, config: &CvConfig, kind: TrainerKind) -> Result<MetricsReport> {
    let (model, params) = train_fold(data, fold, config, kind)?;
    let test = &data.folds[fold].test;
    let scores = predict(&params, &model, test.matrix())?;
    evaluate_scores(scores.data(), test.labels(), DEFAULT_THRESHOLD)
}

/// k-fold cross-validation of one trainer on prepared data.
pub fn cross_validate_prepared(data: &CvData, config: &CvConfig, kind: TrainerKind) -> Result<CvResult> {
    let results = run_parallel(config.jobs, data.folds.len(), |f| {
        evaluate_fold(data, f, config, kind).map_err(|e| Error::Fold {
            fold: f,
            source: Box::new(e),
        })
    })?;
    CvResult::from_folds(results.into_iter().collect::<Result<Vec<_>>>()?)
}

pub fn cross_validate(
    datasets: &[ExpressionDataset],
    target: &str,
    interactions: Option<&GeneInteractionSet>,
    config: &CvConfig,
    kind: TrainerKind,
) -> Result<CvResult> {
    let data = prepare_cv(datasets, target, interactions, config.folds, config.seed)?;
    cross_validate_prepared(&data, config, kind)
}

#[derive(Clone, Debug, PartialEq)]
pub struct SweepRow {
    pub lambda: f64,
    pub f1_mean: f64,
    pub f1_std: f64,
    pub cv: CvResult,
}

/// Meta-learning cross-validation at each λ. Fold seeds do not depend on λ,
/// so the λ = 1 row reproduces plain training.
pub fn lambda_sweep_prepared(data: &CvData, config: &CvConfig, lambdas: &[f64]) -> Result<Vec<SweepRow>> {
    if lambdas.is_empty() {
        return Err(Error::Contract("empty λ list".into()));
    }
    if let Some(bad) = lambdas.iter().find(|l| !(0.0..=1.0).contains(*l)) {
        return Err(Error::Contract(format!("λ = {bad} lies outside [0,1]")));
    }
    let k = data.folds.len();
    let cells = run_parallel(config.jobs, lambdas.len() * k, |i| {
        let (li, f) = (i / k, i % k);
        let cfg = CvConfig {
            train: MetaConfig {
                lambda: lambdas[li],
                ..config.train.clone()
            },
            ..config.clone()
        };
        evaluate_fold(data, f, &cfg, TrainerKind::Meta).map_err(|e| Error::Fold {
            fold: f,
            source: Box::new(e),
        })
    })?;
    let mut cells = cells.into_iter();
    lambdas
        .iter()
        .map(|&lambda| {
            let folds = cells.by_ref().take(k).collect::<Result<Vec<_>>>()?;
            let cv = CvResult::from_folds(folds)?;
            Ok(SweepRow {
                lambda,
                f1_mean: cv.mean.f1,
                f1_std: cv.f1_std(),
                cv,
            })
        })
        .collect()
}

pub fn lambda_sweep(
    datasets: &[ExpressionDataset],
    target: &str,
    interactions: Option<&GeneInteractionSet>,
    config: &CvConfig,
    lambdas: &[f64],
) -> Result<Vec<SweepRow>> {
    let data = prepare_cv(datasets, target, interactions, config.folds, config.seed)?;
    lambda_sweep_prepared(&data, config, lambdas)
}

/// λ with the highest mean F1. Ties go to the larger λ, so a source-weighted
/// setting is only preferred when it strictly beats the alternatives.
pub fn best_lambda(rows: &[SweepRow]) -> Option<&SweepRow> {
    rows.iter().fold(None, |best: Option<&SweepRow>, r| match best {
        Some(b) if b.f1_mean > r.f1_mean || (b.f1_mean == r.f1_mean && b.lambda > r.lambda) => Some(b),
        _ => Some(r),
    })
}

#[derive(Serialize)]
struct SweepCsvRow {
    lambda: f64,
    f1_mean: f64,
    f1_std: f64,
}

pub fn write_sweep_csv<W: Write>(rows: &[SweepRow], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    for r in rows {
        w.serialize(SweepCsvRow {
            lambda: r.lambda,
            f1_mean: r.f1_mean,
            f1_std: r.f1_std,
        })?;
    }
    w.flush()?;
    Ok(())
}
