use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::models::{ModelParams, ParamGrads, ParamSet};

/// Velocity buffers for SGD with momentum.
#[derive(Clone, Debug, PartialEq)]
pub struct SgdState {
    velocity: ParamSet,
}

impl SgdState {
    pub fn new(params: &ModelParams) -> Self {
        SgdState {
            velocity: params.zeros_like(),
        }
    }

    pub fn velocity(&self) -> &ParamSet {
        &self.velocity
    }

    /// `v ← m·v + g`, then returns `Θ − lr·v`.
    pub fn step(
        &mut self,
        params: &ModelParams,
        grads: &ParamGrads,
        lr: f64,
        momentum: f64,
    ) -> Result<ModelParams> {
        self.velocity = ParamSet::lincomb(momentum, &self.velocity, 1.0, grads)?;
        ParamSet::lincomb(1.0, params, -lr, &self.velocity)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdamHyper {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamHyper {
    fn default() -> Self {
        AdamHyper {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// Bias-corrected Adam moments.
#[derive(Clone, Debug, PartialEq)]
pub struct AdamState {
    m: ParamSet,
    v: ParamSet,
    t: usize,
    hyper: AdamHyper,
}

impl AdamState {
    pub fn new(params: &ModelParams) -> Self {
        Self::with_hyper(params, AdamHyper::default())
    }

    pub fn with_hyper(params: &ModelParams, hyper: AdamHyper) -> Self {
        AdamState {
            m: params.zeros_like(),
            v: params.zeros_like(),
            t: 0,
            hyper,
        }
    }

    pub fn steps(&self) -> usize {
        self.t
    }

    pub fn hyper(&self) -> AdamHyper {
        self.hyper
    }

    /// Applies one update with learning rate `lr` in place.
    pub fn step(&mut self, params: &mut ModelParams, grads: &ParamGrads, lr: f64) -> Result<()> {
        if !grads.is_finite() {
            return Err(Error::Training {
                step: self.t,
                message: "non-finite gradient".into(),
            });
        }
        if !params.same_layout(grads) || !params.same_layout(&self.m) {
            return Err(Error::Contract("Adam state does not match parameters".into()));
        }
        self.t += 1;
        let AdamHyper { beta1, beta2, eps } = self.hyper;
        let c1 = 1.0 - beta1.powi(self.t as i32);
        let c2 = 1.0 - beta2.powi(self.t as i32);
        let tensors = params
            .iter_mut()
            .zip(grads.iter())
            .zip(self.m.iter_mut().zip(self.v.iter_mut()));
        for (((_, p), (_, g)), ((_, m), (_, v))) in tensors {
            let (p, g) = (p.data_mut(), g.data());
            let (m, v) = (m.data_mut(), v.data_mut());
            for i in 0..p.len() {
                m[i] = beta1 * m[i] + (1.0 - beta1) * g[i];
                v[i] = beta2 * v[i] + (1.0 - beta2) * g[i] * g[i];
                let m_hat = m[i] / c1;
                let v_hat = v[i] / c2;
                p[i] -= lr * m_hat / (v_hat.sqrt() + eps);
            }
        }
        Ok(())
    }
}
