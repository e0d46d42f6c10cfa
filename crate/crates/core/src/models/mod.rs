//! The three classifiers (MLP, 1-D CNN, self-attention encoder) behind one
//! forward interface that maps a `[B×d]` batch to `B` cancer probabilities.
//!
//! All three end in the same head: a single bias-free linear unit followed by
//! a sigmoid.

mod checkpoint;
mod params;

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::autodiff::{Tape, Tensor, Var};
use crate::error::{Error, Result};
use crate::rng::seeded;

pub use checkpoint::{load_checkpoint, save_checkpoint, Checkpoint, CHECKPOINT_VERSION};
pub use params::{ModelParams, ParamGrads, ParamSet};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Architecture {
    Mlp,
    Cnn,
    Transformer,
}

impl fmt::Display for Architecture {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Architecture::Mlp => "mlp",
            Architecture::Cnn => "cnn",
            Architecture::Transformer => "transformer",
        })
    }
}

impl FromStr for Architecture {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "mlp" => Ok(Architecture::Mlp),
            "cnn" => Ok(Architecture::Cnn),
            "transformer" => Ok(Architecture::Transformer),
            other => Err(Error::contract(format!("unknown architecture `{other}`"))),
        }
    }
}

/// Architecture hyperparameters. Fields irrelevant to the chosen
/// architecture are carried along but ignored.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub architecture: Architecture,
    pub input_dim: usize,
    /// MLP hidden widths.
    pub hidden: Vec<usize>,
    /// CNN output channels (shared by every conv layer).
    pub channels: usize,
    pub kernel_size: usize,
    pub conv_stride: usize,
    pub padding: usize,
    pub pool_size: usize,
    pub pool_stride: usize,
    pub conv_layers: usize,
    /// Transformer embedding width.
    pub embed_dim: usize,
    /// Number of contiguous feature chunks fed to attention as tokens.
    pub tokens: usize,
    pub attention_layers: usize,
    pub slope: f64,
}

impl ModelConfig {
    pub fn new(architecture: Architecture, input_dim: usize) -> Self {
        ModelConfig {
            architecture,
            input_dim,
            hidden: vec![128, 64],
            channels: 32,
            kernel_size: 3,
            conv_stride: 1,
            padding: 1,
            pool_size: 2,
            pool_stride: 2,
            conv_layers: 2,
            embed_dim: 32,
            tokens: 16,
            attention_layers: 1,
            slope: 0.01,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |what: &str| Err(Error::contract(format!("model config: {what}")));
        if self.input_dim == 0 {
            return bad("input_dim must be positive");
        }
        if !(self.slope > 0.0 && self.slope < 1.0) {
            return bad("slope must lie in (0,1)");
        }
        match self.architecture {
            Architecture::Mlp => {
                if self.hidden.is_empty() || self.hidden.contains(&0) {
                    return bad("MLP needs at least one positive hidden width");
                }
            }
            Architecture::Cnn => {
                if self.channels == 0
                    || self.kernel_size == 0
                    || self.conv_stride == 0
                    || self.pool_size == 0
                    || self.pool_stride == 0
                    || self.conv_layers == 0
                {
                    return bad("CNN sizes must be positive");
                }
                self.cnn_lengths()?;
            }
            Architecture::Transformer => {
                if self.embed_dim == 0 || self.tokens == 0 || self.attention_layers == 0 {
                    return bad("transformer sizes must be positive");
                }
            }
        }
        Ok(())
    }

    /// Sequence length after each conv/pool stage, ending with the
    /// flattened length per channel.
    pub fn cnn_lengths(&self) -> Result<Vec<usize>> {
        let mut len = self.input_dim;
        let mut out = Vec::with_capacity(self.conv_layers * 2);
        for layer in 0..self.conv_layers {
            if len + 2 * self.padding < self.kernel_size {
                return Err(Error::dim(format!(
                    "conv layer {layer}: length {len} too short for kernel {}",
                    self.kernel_size
                )));
            }
            len = (len + 2 * self.padding - self.kernel_size) / self.conv_stride + 1;
            out.push(len);
            if len < self.pool_size {
                return Err(Error::dim(format!(
                    "pool layer {layer}: length {len} shorter than pool {}",
                    self.pool_size
                )));
            }
            len = (len - self.pool_size) / self.pool_stride + 1;
            out.push(len);
        }
        Ok(out)
    }

    /// Width of each transformer token chunk.
    pub fn chunk_size(&self) -> usize {
        self.input_dim.div_ceil(self.tokens)
    }

    /// Expected parameter names, shapes and fan-in, in name order.
    pub fn param_layout(&self) -> Result<Vec<(String, Vec<usize>, usize)>> {
        self.validate()?;
        let mut layout = Vec::new();
        match self.architecture {
            Architecture::Mlp => {
                let mut prev = self.input_dim;
                for (i, &h) in self.hidden.iter().enumerate() {
                    layout.push((format!("hidden.{i}.weight"), vec![h, prev], prev));
                    layout.push((format!("hidden.{i}.bias"), vec![h], prev));
                    prev = h;
                }
                layout.push(("output.weight".into(), vec![1, prev], prev));
            }
            Architecture::Cnn => {
                let mut c_in = 1;
                for i in 0..self.conv_layers {
                    layout.push((
                        format!("conv.{i}.weight"),
                        vec![self.channels, c_in, self.kernel_size],
                        c_in * self.kernel_size,
                    ));
                    c_in = self.channels;
                }
                let flat = self.channels * self.cnn_lengths()?.last().copied().unwrap_or(0);
                layout.push(("output.weight".into(), vec![1, flat], flat));
            }
            Architecture::Transformer => {
                let (c, e) = (self.chunk_size(), self.embed_dim);
                layout.push(("token.weight".into(), vec![e, c], c));
                for l in 0..self.attention_layers {
                    for part in ["query", "key", "value"] {
                        layout.push((format!("attention.{l}.{part}"), vec![e, e], e));
                    }
                }
                layout.push(("output.weight".into(), vec![1, e], e));
            }
        }
        layout.sort_by(|a, b| a.0.cmp(&b.0));
        Ok(layout)
    }

    /// Errors unless `params` has exactly the layout this config expects.
    pub fn check_params(&self, params: &ModelParams) -> Result<()> {
        let layout = self.param_layout()?;
        let matches = layout.len() == params.len()
            && layout
                .iter()
                .zip(params.iter())
                .all(|((name, shape, _), (pn, pt))| name == pn && shape.as_slice() == pt.shape());
        if matches {
            Ok(())
        } else {
            Err(Error::contract(format!(
                "parameters do not match the {} configuration",
                self.architecture
            )))
        }
    }
}

/// Weights drawn from `U(-1/√fan_in, 1/√fan_in)`, biases zero.
pub fn init_model(config: &ModelConfig, seed: u64) -> Result<ModelParams> {
    let mut rng = seeded(seed);
    let mut params = ParamSet::new();
    for (name, shape, fan_in) in config.param_layout()? {
        let n: usize = shape.iter().product();
        let data = if name.ends_with(".bias") {
            vec![0.0; n]
        } else {
            let bound = 1.0 / (fan_in as f64).sqrt();
            (0..n).map(|_| rng.random_range(-bound..=bound)).collect()
        };
        params.insert(name, Tensor::new(shape, data)?);
    }
    Ok(params)
}

/// Parameters registered on a tape.
#[derive(Clone, Debug)]
pub struct BoundParams {
    vars: BTreeMap<String, Var>,
}

impl BoundParams {
    /// Registers every tensor of `params` as a differentiable leaf.
    pub fn bind(tape: &mut Tape, params: &ModelParams) -> Self {
        let vars = params
            .iter()
            .map(|(name, t)| (name.to_string(), tape.param(t.clone())))
            .collect();
        BoundParams { vars }
    }

    pub fn var(&self, name: &str) -> Result<Var> {
        self.vars
            .get(name)
            .copied()
            .ok_or_else(|| Error::contract(format!("missing parameter `{name}`")))
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, Var)> {
        self.vars.iter().map(|(k, v)| (k.as_str(), *v))
    }
}

fn check_width(tape: &Tape, config: &ModelConfig, x: Var) -> Result<usize> {
    let shape = tape.value(x).shape();
    if shape.len() != 2 || shape[1] != config.input_dim {
        return Err(Error::dim(format!(
            "batch shape {:?} does not match input dimension {}",
            shape, config.input_dim
        )));
    }
    Ok(shape[0])
}

/// Sigmoid of the bias-free output unit applied to `h: [B×d_last]`.
fn output_head(tape: &mut Tape, params: &BoundParams, h: Var, batch: usize) -> Result<Var> {
    let logits = tape.matmul_nt(h, params.var("output.weight")?)?;
    let logits = tape.reshape(logits, &[batch])?;
    Ok(tape.sigmoid(logits))
}

/// Stacked `LeakyReLU(x·Wᵀ + b)` layers, then the sigmoid head.
pub fn forward_mlp(tape: &mut Tape, config: &ModelConfig, params: &BoundParams, x: Var) -> Result<Var> {
    let batch = check_width(tape, config, x)?;
    let mut h = x;
    for i in 0..config.hidden.len() {
        let z = tape.matmul_nt(h, params.var(&format!("hidden.{i}.weight"))?)?;
        let z = tape.add_bias(z, params.var(&format!("hidden.{i}.bias"))?)?;
        h = tape.leaky_relu(z, config.slope)?;
    }
    output_head(tape, params, h, batch)
}

/// Input viewed as one channel of length `d`; each stage is
/// conv → LeakyReLU → max-pool; the result is flattened into the head.
pub fn forward_cnn(tape: &mut Tape, config: &ModelConfig, params: &BoundParams, x: Var) -> Result<Var> {
    let batch = check_width(tape, config, x)?;
    let lengths = config.cnn_lengths()?;
    let mut h = tape.reshape(x, &[batch, 1, config.input_dim])?;
    for i in 0..config.conv_layers {
        let w = params.var(&format!("conv.{i}.weight"))?;
        let z = tape.conv1d(h, w, config.conv_stride, config.padding)?;
        let z = tape.leaky_relu(z, config.slope)?;
        h = tape.max_pool1d(z, config.pool_size, config.pool_stride)?;
    }
    let flat = config.channels * lengths.last().copied().unwrap_or(0);
    let h = tape.reshape(h, &[batch, flat])?;
    output_head(tape, params, h, batch)
}

/// Features split into `tokens` zero-padded chunks, each projected to the
/// embedding width; single-head scaled dot-product self-attention layers;
/// mean over tokens; sigmoid head.
pub fn forward_transformer(
    tape: &mut Tape,
    config: &ModelConfig,
    params: &BoundParams,
    x: Var,
) -> Result<Var> {
    let batch = check_width(tape, config, x)?;
    let (t, c, e) = (config.tokens, config.chunk_size(), config.embed_dim);
    let padded = tape.pad_last(x, t * c)?;
    let chunks = tape.reshape(padded, &[batch * t, c])?;
    let mut h = tape.matmul_nt(chunks, params.var("token.weight")?)?;
    let scale = 1.0 / (e as f64).sqrt();
    for l in 0..config.attention_layers {
        let project = |tape: &mut Tape, part: &str| -> Result<Var> {
            let p = tape.matmul_nt(h, params.var(&format!("attention.{l}.{part}"))?)?;
            tape.reshape(p, &[batch, t, e])
        };
        let q = project(tape, "query")?;
        let k = project(tape, "key")?;
        let v = project(tape, "value")?;
        let scores = tape.matmul_nt(q, k)?;
        let scores = tape.scale(scores, scale);
        let weights = tape.softmax(scores, 2)?;
        let attended = tape.matmul(weights, v)?;
        h = tape.reshape(attended, &[batch * t, e])?;
    }
    let h = tape.reshape(h, &[batch, t, e])?;
    let pooled = tape.mean_axis(h, 1)?;
    output_head(tape, params, pooled, batch)
}

/// Dispatches to the forward pass matching `config.architecture`.
pub fn forward(tape: &mut Tape, config: &ModelConfig, params: &BoundParams, x: Var) -> Result<Var> {
    match config.architecture {
        Architecture::Mlp => forward_mlp(tape, config, params, x),
        Architecture::Cnn => forward_cnn(tape, config, params, x),
        Architecture::Transformer => forward_transformer(tape, config, params, x),
    }
}

/// Cancer probability for each row of `batch`.
pub fn predict(params: &ModelParams, config: &ModelConfig, batch: &Tensor) -> Result<Tensor> {
    config.check_params(params)?;
    let mut tape = Tape::new();
    let bound = BoundParams::bind(&mut tape, params);
    let x = tape.constant(batch.clone());
    let y = forward(&mut tape, config, &bound, x)?;
    Ok(tape.value(y).clone())
}

/// Mean BCE of the model on `(x, labels)` and its gradient with respect to
/// every parameter. Uses one tape, discarded afterwards.
pub fn loss_and_grad(
    params: &ModelParams,
    config: &ModelConfig,
    x: &Tensor,
    labels: &[f64],
) -> Result<(f64, ParamGrads)> {
    config.check_params(params)?;
    let mut tape = Tape::new();
    let bound = BoundParams::bind(&mut tape, params);
    let xv = tape.constant(x.clone());
    let pred = forward(&mut tape, config, &bound, xv)?;
    let loss = tape.bce_loss(pred, labels)?;
    let value = tape.value(loss).item()?;
    let mut grads = tape.backward(loss)?;
    let mut out = ParamSet::new();
    for (name, var) in bound.iter() {
        out.insert(name, grads.take(var));
    }
    Ok((value, out))
}

/// Mean BCE without gradients.
pub fn loss(params: &ModelParams, config: &ModelConfig, x: &Tensor, labels: &[f64]) -> Result<f64> {
    let pred = predict(params, config, x)?;
    let mut tape = Tape::new();
    let p = tape.constant(pred);
    let l = tape.bce_loss(p, labels)?;
    tape.value(l).item()
}

#[cfg(test)]
mod tests;
