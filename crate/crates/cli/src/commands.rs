use std::collections::HashSet;
use std::fs::{self, File};
use std::path::{Path, PathBuf};

use clap::Args;
use genemeta::data::{
    filter_by_interactions, load_expression_tsv, load_interactions_tsv, select_common_genes, write_expression_tsv,
};
use genemeta::eval::{
    best_lambda, cross_validate_prepared, evaluate_scores, lambda_sweep_prepared, prepare_cv, write_sweep_csv,
    CvData, DEFAULT_THRESHOLD,
};
use genemeta::explain::{rank_features, write_attributions_csv, write_ranking_csv, ModelScorer};
use genemeta::models::{load_checkpoint, predict, save_checkpoint};
use genemeta::rng::derive_seed;
use genemeta::synth::write_task_family;
use genemeta::{
    generate_task_family, shapley_exact, shapley_sampled, CvConfig, Error, ExpressionDataset, ModelConfig,
    NormalizationStats, SynthSpec, TrainerKind,
};
use serde::Serialize;

use crate::config::{Overrides, RunConfig};
use crate::CliError;

type CmdResult = Result<(), CliError>;

fn prepare_out(cfg: &RunConfig) -> CmdResult {
    fs::create_dir_all(&cfg.out)?;
    fs::write(cfg.out.join("config.toml"), cfg.to_toml()?)?;
    Ok(())
}

fn load_datasets(cfg: &RunConfig) -> Result<Vec<ExpressionDataset>, CliError> {
    let datasets = cfg
        .data
        .datasets
        .iter()
        .map(load_expression_tsv)
        .collect::<genemeta::Result<Vec<_>>>()?;
    let mut seen = HashSet::new();
    for d in &datasets {
        if !seen.insert(d.name()) {
            return Err(CliError::Config(format!("two datasets are named `{}`", d.name())));
        }
    }
    let target = cfg.target_name();
    if !seen.contains(target.as_str()) {
        return Err(CliError::Config(format!("target `{target}` is not among the datasets")));
    }
    Ok(datasets)
}

fn load_interactions(cfg: &RunConfig) -> Result<Option<genemeta::GeneInteractionSet>, CliError> {
    Ok(cfg.data.interactions.as_ref().map(load_interactions_tsv).transpose()?)
}

fn prepare(cfg: &RunConfig) -> Result<CvData, CliError> {
    let datasets = load_datasets(cfg)?;
    let interactions = load_interactions(cfg)?;
    Ok(prepare_cv(
        &datasets,
        &cfg.target_name(),
        interactions.as_ref(),
        cfg.eval.folds,
        cfg.seed,
    )?)
}

fn resolved_model(cfg: &RunConfig, n_genes: usize) -> Result<ModelConfig, CliError> {
    let mut model = cfg.model.clone();
    model.input_dim = n_genes;
    model.validate()?;
    Ok(model)
}

fn cv_config(cfg: &RunConfig, model: ModelConfig) -> CvConfig {
    CvConfig {
        model,
        train: cfg.train.meta.clone(),
        folds: cfg.eval.folds,
        seed: cfg.seed,
        jobs: cfg.jobs,
    }
}

fn warn_ignored_lambda(cfg: &RunConfig) {
    if cfg.train.trainer != TrainerKind::Meta && cfg.train.lambda_given {
        log::warn!("λ is ignored by the {} trainer", cfg.train.trainer);
    }
}

fn write_lines(path: PathBuf, lines: &[String]) -> CmdResult {
    let mut text = lines.join("\n");
    text.push('\n');
    fs::write(path, text)?;
    Ok(())
}

#[derive(Serialize)]
struct DatasetReport {
    name: String,
    samples: usize,
    genes: usize,
}

#[derive(Serialize)]
struct SelectionReport {
    datasets: Vec<DatasetReport>,
    target: String,
    intersection: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    after_interactions: Option<usize>,
    selected: usize,
}

pub fn preprocess(config: Option<&Path>, ov: &Overrides) -> CmdResult {
    let cfg = RunConfig::load(config, ov)?;
    let datasets = load_datasets(&cfg)?;
    let interactions = load_interactions(&cfg)?;
    let common = select_common_genes(&datasets)?;
    let genes = match &interactions {
        Some(set) => filter_by_interactions(&common, set)?,
        None => common.clone(),
    };
    prepare_out(&cfg)?;
    let dir = cfg.out.join("preprocessed");
    fs::create_dir_all(&dir)?;
    for d in &datasets {
        let projected = d.project(&genes)?;
        let normalized = NormalizationStats::fit(&projected)?.apply(&projected)?;
        write_expression_tsv(&normalized, dir.join(format!("{}.tsv", d.name())))?;
    }
    write_lines(cfg.out.join("genes.txt"), &genes)?;
    let report = SelectionReport {
        datasets: datasets
            .iter()
            .map(|d| DatasetReport {
                name: d.name().to_string(),
                samples: d.n_samples(),
                genes: d.n_features(),
            })
            .collect(),
        target: cfg.target_name(),
        intersection: common.len(),
        after_interactions: interactions.as_ref().map(|_| genes.len()),
        selected: genes.len(),
    };
    let text = serde_json::to_string_pretty(&report).map_err(|e| CliError::Config(e.to_string()))?;
    fs::write(cfg.out.join("selection_report.json"), text + "\n")?;

    for d in &report.datasets {
        println!("{:<24} {:>6} samples {:>7} genes", d.name, d.samples, d.genes);
    }
    println!("intersection: {} genes", report.intersection);
    if let Some(n) = report.after_interactions {
        println!("after interaction filter: {n} genes");
    }
    Ok(())
}

/// Trains on the training part of fold 0; fold 0's held-out samples stay
/// unseen so `explain` can use them.
pub fn train(config: Option<&Path>, ov: &Overrides) -> CmdResult {
    let cfg = RunConfig::load(config, ov)?;
    warn_ignored_lambda(&cfg);
    let data = prepare(&cfg)?;
    let model = resolved_model(&cfg, data.genes.len())?;
    prepare_out(&cfg)?;
    let fold = &data.folds[0];
    let (params, log) = genemeta::train(cfg.train.trainer, &cfg.train.meta, &model, &data.sources, &fold.train)?;
    save_checkpoint(cfg.out.join("checkpoint.json"), &model, &params)?;
    log.write_csv(cfg.out.join("train_log.csv"))?;
    write_lines(cfg.out.join("genes.txt"), &data.genes)?;

    let scores = predict(&params, &model, fold.test.matrix())?;
    let held_out = evaluate_scores(scores.data(), fold.test.labels(), DEFAULT_THRESHOLD)?;
    println!(
        "{} {} on {} genes: {} steps, final target loss {:.4}",
        cfg.train.trainer,
        model.architecture,
        data.genes.len(),
        log.len(),
        log.target_losses().last().copied().unwrap_or(f64::NAN)
    );
    println!(
        "held-out fold 0 ({} samples): accuracy {:.4}  f1 {:.4}",
        held_out.n_samples, held_out.accuracy, held_out.f1
    );
    Ok(())
}

#[derive(Serialize)]
struct SummaryRow<'a> {
    model: &'a str,
    accuracy: f64,
    f1: f64,
    precision: f64,
    recall: f64,
    prauc: Option<f64>,
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map_or_else(|| "n/a".to_string(), |v| format!("{v:.4}"))
}

pub fn evaluate(config: Option<&Path>, ov: &Overrides) -> CmdResult {
    let cfg = RunConfig::load(config, ov)?;
    warn_ignored_lambda(&cfg);
    let data = prepare(&cfg)?;
    let model = resolved_model(&cfg, data.genes.len())?;
    prepare_out(&cfg)?;
    let result = cross_validate_prepared(&data, &cv_config(&cfg, model), cfg.train.trainer)?;
    result.write_csv(cfg.out.join("cv_folds.csv"))?;

    let name = cfg.train.trainer.to_string();
    let m = &result.mean;
    let mut w = csv::Writer::from_path(cfg.out.join("evaluation.csv")).map_err(Error::from)?;
    w.serialize(SummaryRow {
        model: &name,
        accuracy: m.accuracy,
        f1: m.f1,
        precision: m.precision,
        recall: m.recall,
        prauc: m.pr_auc,
    })
    .map_err(Error::from)?;
    w.flush()?;

    println!("{:<10} {:>9} {:>9} {:>9} {:>9} {:>9}", "model", "accuracy", "f1", "precision", "recall", "prauc");
    println!(
        "{:<10} {:>9.4} {:>9.4} {:>9.4} {:>9.4} {:>9}",
        name,
        m.accuracy,
        m.f1,
        m.precision,
        m.recall,
        fmt_opt(m.pr_auc)
    );
    Ok(())
}

pub fn sweep(config: Option<&Path>, ov: &Overrides) -> CmdResult {
    let cfg = RunConfig::load(config, ov)?;
    if let Some(bad) = cfg.eval.lambdas.iter().find(|l| !(0.0..=1.0).contains(*l)) {
        return Err(CliError::Config(format!("λ = {bad} lies outside [0,1]")));
    }
    if cfg.eval.lambdas.is_empty() {
        return Err(CliError::Config("empty λ list".into()));
    }
    let data = prepare(&cfg)?;
    let model = resolved_model(&cfg, data.genes.len())?;
    prepare_out(&cfg)?;
    let rows = lambda_sweep_prepared(&data, &cv_config(&cfg, model), &cfg.eval.lambdas)?;
    write_sweep_csv(&rows, File::create(cfg.out.join("sweep.csv"))?)?;
    println!("{:>6} {:>9} {:>9}", "lambda", "f1_mean", "f1_std");
    for r in &rows {
        println!("{:>6} {:>9.4} {:>9.4}", r.lambda, r.f1_mean, r.f1_std);
    }
    if let Some(best) = best_lambda(&rows) {
        println!("best λ = {} (F1 {:.4})", best.lambda, best.f1_mean);
    }
    Ok(())
}

#[derive(Args)]
pub struct ExplainArgs {
    /// Checkpoint to explain; defaults to `<out>/checkpoint.json`.
    #[arg(long)]
    checkpoint: Option<PathBuf>,
    /// Held-out samples to explain.
    #[arg(long, default_value_t = 10)]
    samples: usize,
    /// Random feature orderings per sample.
    #[arg(long, default_value_t = 1000)]
    permutations: usize,
    /// Genes in the ranking summary.
    #[arg(long, default_value_t = 20)]
    top_k: usize,
    /// Enumerate all coalitions instead of sampling (at most 12 genes).
    #[arg(long)]
    exact: bool,
}

pub fn explain(config: Option<&Path>, ov: &Overrides, args: &ExplainArgs) -> CmdResult {
    if args.permutations == 0 && !args.exact {
        return Err(CliError::Config("--permutations must be >= 1".into()));
    }
    if args.samples == 0 || args.top_k == 0 {
        return Err(CliError::Config("--samples and --top-k must be >= 1".into()));
    }
    let cfg = RunConfig::load(config, ov)?;
    let ckpt_path = args.checkpoint.clone().unwrap_or_else(|| cfg.out.join("checkpoint.json"));
    let ckpt = load_checkpoint(&ckpt_path)?;
    let data = prepare(&cfg)?;
    let model = resolved_model(&cfg, data.genes.len())?;
    if ckpt.config != model {
        return Err(Error::Checkpoint(format!(
            "{} holds a {} model over {} genes, which does not match the configured {} model over {} genes",
            ckpt_path.display(),
            ckpt.config.architecture,
            ckpt.config.input_dim,
            model.architecture,
            model.input_dim
        ))
        .into());
    }
    prepare_out(&cfg)?;

    let fold = &data.folds[0];
    let scorer = ModelScorer {
        params: &ckpt.params,
        config: &ckpt.config,
    };
    let background = fold.train.matrix();
    let n = args.samples.min(fold.test.n_samples());
    let attributions = (0..n)
        .map(|i| {
            let id = &fold.test.sample_ids()[i];
            let x = fold.test.row(i);
            if args.exact {
                shapley_exact(&scorer, background, x, &data.genes, id)
            } else {
                let seed = derive_seed(cfg.seed, &[i as u64]);
                shapley_sampled(&scorer, background, x, &data.genes, id, args.permutations, seed)
            }
        })
        .collect::<genemeta::Result<Vec<_>>>()?;
    let ranking = rank_features(&attributions, args.top_k)?;
    write_attributions_csv(&attributions, File::create(cfg.out.join("attributions.csv"))?)?;
    write_ranking_csv(&ranking, File::create(cfg.out.join("ranking.csv"))?)?;

    println!("explained {n} held-out samples over {} genes", data.genes.len());
    for (rank, (gene, v)) in ranking.iter().enumerate() {
        println!("{:>3}  {:<16} {:.5}", rank + 1, gene, v);
    }
    Ok(())
}

#[derive(Args)]
pub struct SynthArgs {
    #[arg(long, default_value_t = SynthSpec::default().n_sources)]
    sources: usize,
    /// Samples per source dataset.
    #[arg(long, default_value_t = SynthSpec::default().source_samples)]
    source_samples: usize,
    #[arg(long, default_value_t = SynthSpec::default().target_samples)]
    target_samples: usize,
    #[arg(long, default_value_t = SynthSpec::default().n_features)]
    features: usize,
    /// Features that carry the class signal.
    #[arg(long, default_value_t = SynthSpec::default().signal_dim)]
    signal_dim: usize,
    /// Strength of the per-dataset rotation and shift.
    #[arg(long, default_value_t = SynthSpec::default().perturbation)]
    perturbation: f64,
    #[arg(long, default_value_t = SynthSpec::default().label_noise)]
    label_noise: f64,
    /// Fraction of positive samples.
    #[arg(long, default_value_t = SynthSpec::default().balance)]
    balance: f64,
}

pub fn synth(ov: &Overrides, args: &SynthArgs) -> CmdResult {
    let out = ov
        .out
        .clone()
        .ok_or_else(|| CliError::Config("synth needs --out".into()))?;
    let spec = SynthSpec {
        n_sources: args.sources,
        source_samples: args.source_samples,
        target_samples: args.target_samples,
        n_features: args.features,
        signal_dim: args.signal_dim,
        perturbation: args.perturbation,
        label_noise: args.label_noise,
        balance: args.balance,
        seed: ov.seed.unwrap_or(0),
    };
    let family = generate_task_family(&spec)?;
    let manifest = write_task_family(&family, &spec, &out)?;
    for p in manifest.sources.iter().chain(std::iter::once(&manifest.target)) {
        println!("{}", out.join(p).display());
    }
    Ok(())
}
