use serde::{Deserialize, Serialize};

use super::ExpressionDataset;
use crate::autodiff::Tensor;
use crate::error::{Error, Result};

/// Per-feature mean and population standard deviation.
///
/// Features with zero spread get `std = 1`, so they normalize to all zeros
/// instead of dividing by zero.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NormalizationStats {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

impl NormalizationStats {
    pub fn fit(dataset: &ExpressionDataset) -> Result<Self> {
        let n = dataset.n_samples();
        if n < 2 {
            return Err(Error::Statistics(format!(
                "need at least 2 samples to fit normalization, got {n}"
            )));
        }
        let d = dataset.n_features();
        let mut mean = vec![0.0; d];
        for i in 0..n {
            for (m, v) in mean.iter_mut().zip(dataset.row(i)) {
                *m += v;
            }
        }
        for m in &mut mean {
            *m /= n as f64;
        }
        let mut var = vec![0.0; d];
        for i in 0..n {
            for ((s, v), m) in var.iter_mut().zip(dataset.row(i)).zip(&mean) {
                *s += (v - m) * (v - m);
            }
        }
        let std = var
            .into_iter()
            .map(|s| {
                let sd = (s / n as f64).sqrt();
                if sd > 0.0 && sd.is_finite() {
                    sd
                } else {
                    1.0
                }
            })
            .collect();
        Ok(NormalizationStats { mean, std })
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    pub fn apply(&self, dataset: &ExpressionDataset) -> Result<ExpressionDataset> {
        if dataset.n_features() != self.dim() {
            return Err(Error::dim(format!(
                "normalization fitted on {} features applied to {}",
                self.dim(),
                dataset.n_features()
            )));
        }
        let mut data = dataset.matrix().data().to_vec();
        for row in data.chunks_exact_mut(self.dim().max(1)) {
            for ((v, m), s) in row.iter_mut().zip(&self.mean).zip(&self.std) {
                *v = (*v - m) / s;
            }
        }
        Ok(dataset.with_matrix(Tensor::new(dataset.matrix().shape().to_vec(), data)?))
    }
}
