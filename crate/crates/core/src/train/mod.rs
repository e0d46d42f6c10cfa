//! Outer training loops: first-order meta-learning over source datasets,
//! plain target-only training, and pretrain-then-finetune transfer.
//!
//! All three share the same target batch schedule. Each run derives three
//! independent streams from `MetaConfig::seed`: model initialisation, target
//! shuffling, and source sampling. Because the target stream never sees the
//! source draws, a meta run with `λ = 1` walks exactly the same trajectory as
//! a plain run with the same seed.

mod log;
mod optim;

use std::fmt;
use std::str::FromStr;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::autodiff::Tensor;
use crate::data::{sample_batch, ExpressionDataset};
use crate::error::{Error, Result};
use crate::models::{init_model, loss_and_grad, ModelConfig, ModelParams, ParamGrads, ParamSet};
use crate::rng::{derive_seed, seeded, Rng};

pub use self::log::{StepRecord, TrainLog};
pub use optim::{AdamHyper, AdamState, SgdState};

const STREAM_INIT: u64 = 0;
const STREAM_TARGET: u64 = 1;
const STREAM_SOURCE: u64 = 2;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MetaConfig {
    /// Inner SGD learning rate α.
    pub inner_lr: f64,
    pub inner_momentum: f64,
    /// Outer Adam learning rate β.
    pub outer_lr: f64,
    /// Weight of the target loss in the meta loss.
    pub lambda: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub seed: u64,
    /// Evaluate each adapted copy on a second, independently drawn source
    /// batch instead of the batch it was adapted on.
    pub fresh_source_batch: bool,
    /// Pooled-source epochs before fine-tuning (transfer only). The
    /// fine-tuning stage runs for `epochs`.
    pub pretrain_epochs: usize,
}

impl Default for MetaConfig {
    fn default() -> Self {
        MetaConfig {
            inner_lr: 0.0004,
            inner_momentum: 0.2,
            outer_lr: 0.0004,
            lambda: 0.5,
            epochs: 40,
            batch_size: 32,
            seed: 0,
            fresh_source_batch: false,
            pretrain_epochs: 40,
        }
    }
}

impl MetaConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Contract(format!("training config: {m}")));
        if !(self.inner_lr >= 0.0 && self.inner_lr.is_finite()) {
            return bad("inner learning rate must be finite and non-negative");
        }
        if !(self.outer_lr > 0.0 && self.outer_lr.is_finite()) {
            return bad("outer learning rate must be positive");
        }
        if !(0.0..1.0).contains(&self.inner_momentum) {
            return bad("inner momentum must lie in [0,1)");
        }
        check_lambda(self.lambda)?;
        if self.epochs == 0 {
            return bad("epochs must be >= 1");
        }
        if self.batch_size == 0 {
            return bad("batch size must be >= 1");
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TrainerKind {
    Plain,
    Meta,
    Transfer,
}

impl fmt::Display for TrainerKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            TrainerKind::Plain => "plain",
            TrainerKind::Meta => "meta",
            TrainerKind::Transfer => "transfer",
        })
    }
}

impl FromStr for TrainerKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "plain" => Ok(TrainerKind::Plain),
            "meta" => Ok(TrainerKind::Meta),
            "transfer" => Ok(TrainerKind::Transfer),
            other => Err(Error::Contract(format!("unknown trainer `{other}`"))),
        }
    }
}

fn check_lambda(lambda: f64) -> Result<()> {
    if (0.0..=1.0).contains(&lambda) {
        Ok(())
    } else {
        Err(Error::Contract(format!("λ = {lambda} lies outside [0,1]")))
    }
}

fn non_finite(what: &str, value: f64) -> Error {
    Error::Training {
        step: 0,
        message: format!("{what} is {value}"),
    }
}

/// Rewrites the step of a training error to `step`; other errors pass through.
fn at_step(step: usize) -> impl Fn(Error) -> Error {
    move |e| match e {
        Error::Training { message, .. } => Error::Training { step, message },
        other => other,
    }
}

/// One momentum-SGD step on the source batch, applied to a copy of `params`.
pub fn inner_adapt(
    params: &ModelParams,
    model: &ModelConfig,
    x: &Tensor,
    labels: &[f64],
    lr: f64,
    momentum: f64,
    sgd: &mut SgdState,
) -> Result<ModelParams> {
    let (loss, grads) = loss_and_grad(params, model, x, labels)?;
    if !loss.is_finite() {
        return Err(non_finite("source loss before adaptation", loss));
    }
    sgd.step(params, &grads, lr, momentum)
}

/// Source term of the meta loss together with its first-order gradient.
#[derive(Clone, Debug)]
pub struct SourceLoss {
    /// Mean post-adaptation loss over sources.
    pub loss: f64,
    pub per_source: Vec<f64>,
    /// Mean over sources of the loss gradient at each adapted copy.
    pub grad: ParamGrads,
}

/// Adapts a copy of `params` to a batch of every source and evaluates the
/// adapted copies. Velocity starts at zero for every source.
pub fn source_meta_loss(
    params: &ModelParams,
    model: &ModelConfig,
    sources: &[ExpressionDataset],
    config: &MetaConfig,
    rng: &mut Rng,
) -> Result<SourceLoss> {
    if sources.is_empty() {
        return Err(Error::Contract("meta-learning needs at least one source".into()));
    }
    let mut grad = params.zeros_like();
    let mut per_source = Vec::with_capacity(sources.len());
    for source in sources {
        let (x, y) = sample_batch(source, config.batch_size, rng)?;
        let mut sgd = SgdState::new(params);
        let adapted = inner_adapt(params, model, &x, &y, config.inner_lr, config.inner_momentum, &mut sgd)?;
        let (loss, g) = if config.fresh_source_batch {
            let (x2, y2) = sample_batch(source, config.batch_size, rng)?;
            loss_and_grad(&adapted, model, &x2, &y2)?
        } else {
            loss_and_grad(&adapted, model, &x, &y)?
        };
        if !loss.is_finite() {
            return Err(non_finite(&format!("adapted loss on `{}`", source.name()), loss));
        }
        grad.add_scaled(1.0, &g)?;
        per_source.push(loss);
    }
    let n = sources.len() as f64;
    let grad = ParamSet::lincomb(1.0 / n, &grad, 0.0, &grad)?;
    Ok(SourceLoss {
        loss: per_source.iter().sum::<f64>() / n,
        per_source,
        grad,
    })
}

/// Mean BCE of `params` on a target batch.
pub fn target_loss(params: &ModelParams, model: &ModelConfig, x: &Tensor, labels: &[f64]) -> Result<f64> {
    crate::models::loss(params, model, x, labels)
}

/// `λ·L_target + (1 − λ)·L_source`.
pub fn meta_loss(l_target: f64, l_source: f64, lambda: f64) -> Result<f64> {
    check_lambda(lambda)?;
    Ok(lambda * l_target + (1.0 - lambda) * l_source)
}

/// Gradient of the meta loss under the first-order rule.
pub fn meta_gradient(g_target: &ParamGrads, g_source: &ParamGrads, lambda: f64) -> Result<ParamGrads> {
    check_lambda(lambda)?;
    ParamSet::lincomb(lambda, g_target, 1.0 - lambda, g_source)
}

/// One Adam step on a copy of `params`.
pub fn outer_step(params: &ModelParams, grads: &ParamGrads, adam: &mut AdamState, lr: f64) -> Result<ModelParams> {
    let mut next = params.clone();
    adam.step(&mut next, grads, lr)?;
    Ok(next)
}

/// Called after every outer step with the step index and new parameters.
pub type StepObserver<'a> = &'a mut dyn FnMut(usize, &ModelParams);

fn check_inputs(model: &ModelConfig, config: &MetaConfig, datasets: &[&ExpressionDataset]) -> Result<()> {
    config.validate()?;
    model.validate()?;
    for d in datasets {
        if d.n_samples() == 0 {
            return Err(Error::Contract(format!("dataset `{}` is empty", d.name())));
        }
        if d.n_features() != model.input_dim {
            return Err(Error::Dimension(format!(
                "dataset `{}` has {} features, model expects {}",
                d.name(),
                d.n_features(),
                model.input_dim
            )));
        }
    }
    Ok(())
}

struct Run {
    params: ModelParams,
    adam: AdamState,
    log: TrainLog,
    step: usize,
}

impl Run {
    fn start(model: &ModelConfig, seed: u64) -> Result<Run> {
        let params = init_model(model, derive_seed(seed, &[STREAM_INIT]))?;
        let adam = AdamState::new(&params);
        Ok(Run {
            params,
            adam,
            log: TrainLog::new(),
            step: 0,
        })
    }

    /// Shuffled passes over `data` in chunks of `batch` rows; `body` returns
    /// the gradient to apply and the record to log for each chunk.
    #[allow(clippy::too_many_arguments)]
    fn epochs(
        &mut self,
        data: &ExpressionDataset,
        epochs: usize,
        first_epoch: usize,
        config: &MetaConfig,
        order_rng: &mut Rng,
        observer: &mut Option<StepObserver>,
        mut body: impl FnMut(&ModelParams, &Tensor, &[f64]) -> Result<(ParamGrads, StepRecord)>,
    ) -> Result<()> {
        let mut order: Vec<usize> = (0..data.n_samples()).collect();
        for epoch in first_epoch..first_epoch + epochs {
            order.shuffle(order_rng);
            for chunk in order.chunks(config.batch_size) {
                let (x, y) = data.batch(chunk);
                let step = self.step;
                let (grads, mut record) = body(&self.params, &x, &y).map_err(at_step(step))?;
                self.params =
                    outer_step(&self.params, &grads, &mut self.adam, config.outer_lr).map_err(at_step(step))?;
                record.step = step;
                record.epoch = epoch;
                self.log.push(record);
                if let Some(f) = observer.as_mut() {
                    f(step, &self.params);
                }
                self.step += 1;
            }
        }
        Ok(())
    }
}

fn plain_body(model: &ModelConfig) -> impl Fn(&ModelParams, &Tensor, &[f64]) -> Result<(ParamGrads, StepRecord)> + '_ {
    move |params, x, y| {
        let (lt, gt) = loss_and_grad(params, model, x, y)?;
        if !lt.is_finite() {
            return Err(non_finite("target loss", lt));
        }
        let record = StepRecord {
            step: 0,
            epoch: 0,
            loss_target: Some(lt),
            loss_source: None,
            loss_meta: None,
        };
        Ok((gt, record))
    }
}

/// Meta-learning run. `config.lambda` weighs target against sources.
pub fn train_meta(
    config: &MetaConfig,
    model: &ModelConfig,
    sources: &[ExpressionDataset],
    target: &ExpressionDataset,
) -> Result<(ModelParams, TrainLog)> {
    train_meta_observed(config, model, sources, target, None)
}

pub fn train_meta_observed(
    config: &MetaConfig,
    model: &ModelConfig,
    sources: &[ExpressionDataset],
    target: &ExpressionDataset,
    mut observer: Option<StepObserver>,
) -> Result<(ModelParams, TrainLog)> {
    if sources.is_empty() {
        return Err(Error::Contract("meta-learning needs at least one source".into()));
    }
    let mut all: Vec<&ExpressionDataset> = sources.iter().collect();
    all.push(target);
    check_inputs(model, config, &all)?;

    let mut run = Run::start(model, config.seed)?;
    let mut target_rng = seeded(derive_seed(config.seed, &[STREAM_TARGET]));
    let mut source_rng = seeded(derive_seed(config.seed, &[STREAM_SOURCE]));
    let lambda = config.lambda;
    run.epochs(target, config.epochs, 0, config, &mut target_rng, &mut observer, |params, x, y| {
        let (lt, gt) = loss_and_grad(params, model, x, y)?;
        if !lt.is_finite() {
            return Err(non_finite("target loss", lt));
        }
        let src = source_meta_loss(params, model, sources, config, &mut source_rng)?;
        let lm = meta_loss(lt, src.loss, lambda)?;
        let g = meta_gradient(&gt, &src.grad, lambda)?;
        let record = StepRecord {
            step: 0,
            epoch: 0,
            loss_target: Some(lt),
            loss_source: Some(src.loss),
            loss_meta: Some(lm),
        };
        Ok((g, record))
    })?;
    Ok((run.params, run.log))
}

/// Adam on the target loss alone, same schedule as [`train_meta`].
pub fn train_plain(
    config: &MetaConfig,
    model: &ModelConfig,
    target: &ExpressionDataset,
) -> Result<(ModelParams, TrainLog)> {
    train_plain_observed(config, model, target, None)
}

pub fn train_plain_observed(
    config: &MetaConfig,
    model: &ModelConfig,
    target: &ExpressionDataset,
    mut observer: Option<StepObserver>,
) -> Result<(ModelParams, TrainLog)> {
    check_inputs(model, config, &[target])?;
    let mut run = Run::start(model, config.seed)?;
    let mut target_rng = seeded(derive_seed(config.seed, &[STREAM_TARGET]));
    run.epochs(target, config.epochs, 0, config, &mut target_rng, &mut observer, plain_body(model))?;
    Ok((run.params, run.log))
}

/// Pretrains on the pooled sources for `pretrain_epochs`, then fine-tunes on
/// the target for `finetune_epochs` with a fresh Adam state.
pub fn train_transfer(
    config: &MetaConfig,
    model: &ModelConfig,
    sources: &[ExpressionDataset],
    target: &ExpressionDataset,
    pretrain_epochs: usize,
    finetune_epochs: usize,
) -> Result<(ModelParams, TrainLog)> {
    if sources.is_empty() {
        return Err(Error::Contract("transfer learning needs at least one source".into()));
    }
    let mut all: Vec<&ExpressionDataset> = sources.iter().collect();
    all.push(target);
    let cfg = MetaConfig {
        epochs: config.epochs.max(1),
        ..config.clone()
    };
    check_inputs(model, &cfg, &all)?;

    let mut run = Run::start(model, config.seed)?;
    let mut none: Option<StepObserver> = None;
    if pretrain_epochs > 0 {
        let pooled = ExpressionDataset::concat("pooled-sources", sources)?;
        let mut source_rng = seeded(derive_seed(config.seed, &[STREAM_SOURCE]));
        run.epochs(&pooled, pretrain_epochs, 0, config, &mut source_rng, &mut none, |params, x, y| {
            let (ls, gs) = loss_and_grad(params, model, x, y)?;
            if !ls.is_finite() {
                return Err(non_finite("pooled source loss", ls));
            }
            let record = StepRecord {
                step: 0,
                epoch: 0,
                loss_target: None,
                loss_source: Some(ls),
                loss_meta: None,
            };
            Ok((gs, record))
        })?;
    }
    run.log.mark_finetune_start(run.step);
    run.adam = AdamState::new(&run.params);
    let mut target_rng = seeded(derive_seed(config.seed, &[STREAM_TARGET]));
    run.epochs(
        target,
        finetune_epochs,
        pretrain_epochs,
        config,
        &mut target_rng,
        &mut none,
        plain_body(model),
    )?;
    Ok((run.params, run.log))
}

/// Dispatches on `kind`. Transfer runs use `config.pretrain_epochs` followed
/// by `config.epochs` of fine-tuning.
pub fn train(
    kind: TrainerKind,
    config: &MetaConfig,
    model: &ModelConfig,
    sources: &[ExpressionDataset],
    target: &ExpressionDataset,
) -> Result<(ModelParams, TrainLog)> {
    match kind {
        TrainerKind::Plain => train_plain(config, model, target),
        TrainerKind::Meta => train_meta(config, model, sources, target),
        TrainerKind::Transfer => {
            train_transfer(config, model, sources, target, config.pretrain_epochs, config.epochs)
        }
    }
}

#[cfg(test)]
mod tests;
