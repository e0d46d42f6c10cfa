use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::autodiff::Tensor;
use crate::error::{Error, Result};

/// Named tensors in a fixed (lexicographic) order.
///
/// Used both for model weights and for gradients of those weights. Cloning
/// is a deep copy.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct ParamSet {
    tensors: BTreeMap<String, Tensor>,
}

pub type ModelParams = ParamSet;
pub type ParamGrads = ParamSet;

impl ParamSet {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, name: impl Into<String>, t: Tensor) {
        self.tensors.insert(name.into(), t);
    }

    pub fn get(&self, name: &str) -> Option<&Tensor> {
        self.tensors.get(name)
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut Tensor> {
        self.tensors.get_mut(name)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor)> {
        self.tensors.iter().map(|(k, v)| (k.as_str(), v))
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = (&str, &mut Tensor)> {
        self.tensors.iter_mut().map(|(k, v)| (k.as_str(), v))
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.tensors.keys().map(String::as_str)
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    /// Total number of scalar entries.
    pub fn numel(&self) -> usize {
        self.tensors.values().map(Tensor::len).sum()
    }

    pub fn zeros_like(&self) -> ParamSet {
        ParamSet {
            tensors: self
                .tensors
                .iter()
                .map(|(k, v)| (k.clone(), Tensor::zeros(v.shape())))
                .collect(),
        }
    }

    pub fn is_finite(&self) -> bool {
        self.tensors.values().all(Tensor::is_finite)
    }

    /// True when both sets have identical names and shapes.
    pub fn same_layout(&self, other: &ParamSet) -> bool {
        self.tensors.len() == other.tensors.len()
            && self
                .tensors
                .iter()
                .zip(&other.tensors)
                .all(|((ka, va), (kb, vb))| ka == kb && va.shape() == vb.shape())
    }

    fn check_layout(&self, other: &ParamSet) -> Result<()> {
        if self.same_layout(other) {
            Ok(())
        } else {
            Err(Error::contract("parameter sets have different layouts"))
        }
    }

    /// `a·x + b·y` elementwise.
    pub fn lincomb(a: f64, x: &ParamSet, b: f64, y: &ParamSet) -> Result<ParamSet> {
        x.check_layout(y)?;
        let mut out = x.clone();
        for ((_, o), (_, yv)) in out.tensors.iter_mut().zip(&y.tensors) {
            for (oi, yi) in o.data_mut().iter_mut().zip(yv.data()) {
                *oi = a * *oi + b * yi;
            }
        }
        Ok(out)
    }

    /// `self += c·other` elementwise.
    pub fn add_scaled(&mut self, c: f64, other: &ParamSet) -> Result<()> {
        self.check_layout(other)?;
        for (a, b) in self.tensors.values_mut().zip(other.tensors.values()) {
            for (ai, bi) in a.data_mut().iter_mut().zip(b.data()) {
                *ai += c * bi;
            }
        }
        Ok(())
    }

    /// Largest absolute elementwise difference between two sets.
    pub fn max_abs_diff(&self, other: &ParamSet) -> Result<f64> {
        self.check_layout(other)?;
        Ok(self
            .tensors
            .values()
            .zip(other.tensors.values())
            .flat_map(|(a, b)| a.data().iter().zip(b.data()).map(|(x, y)| (x - y).abs()))
            .fold(0.0, f64::max))
    }

    /// Flattens every tensor, in name order, into one vector.
    pub fn flatten(&self) -> Vec<f64> {
        self.tensors
            .values()
            .flat_map(|t| t.data().iter().copied())
            .collect()
    }
}
