//! Expression datasets and everything that prepares them for training:
//! TSV ingestion, shared-gene selection, z-normalization, stratified folds
//! and batch sampling.

mod normalize;
mod selection;
mod split;
mod tsv;

use std::collections::HashSet;

use rand::seq::index;
use rand::Rng as _;

use crate::autodiff::Tensor;
use crate::error::{Error, Result};
use crate::rng::Rng;

pub use normalize::NormalizationStats;
pub use selection::{filter_by_interactions, select_common_genes, GeneInteractionSet};
pub use split::{stratified_kfold, FoldSplit};
pub use tsv::{load_expression_tsv, load_interactions_tsv, write_expression_tsv};

/// Sample-by-gene expression matrix with binary labels (1 = cancer).
#[derive(Clone, Debug, PartialEq)]
pub struct ExpressionDataset {
    name: String,
    gene_ids: Vec<String>,
    sample_ids: Vec<String>,
    matrix: Tensor,
    labels: Vec<u8>,
}

impl ExpressionDataset {
    /// Builds a dataset, checking every structural invariant.
    pub fn new(
        name: impl Into<String>,
        gene_ids: Vec<String>,
        sample_ids: Vec<String>,
        matrix: Tensor,
        labels: Vec<u8>,
    ) -> Result<Self> {
        let name = name.into();
        if matrix.ndim() != 2 {
            return Err(Error::dim(format!(
                "dataset {name}: matrix must be 2-D, got {:?}",
                matrix.shape()
            )));
        }
        let (rows, cols) = (matrix.shape()[0], matrix.shape()[1]);
        if rows != labels.len() || rows != sample_ids.len() {
            return Err(Error::dim(format!(
                "dataset {name}: {rows} rows, {} labels, {} sample ids",
                labels.len(),
                sample_ids.len()
            )));
        }
        if cols != gene_ids.len() {
            return Err(Error::dim(format!(
                "dataset {name}: {cols} columns but {} gene ids",
                gene_ids.len()
            )));
        }
        let mut seen = HashSet::with_capacity(cols);
        if let Some(dup) = gene_ids.iter().find(|g| !seen.insert(g.as_str())) {
            return Err(Error::contract(format!("dataset {name}: duplicate gene {dup}")));
        }
        if let Some(bad) = labels.iter().find(|&&l| l > 1) {
            return Err(Error::contract(format!("dataset {name}: label {bad} not in {{0,1}}")));
        }
        Ok(ExpressionDataset {
            name,
            gene_ids,
            sample_ids,
            matrix,
            labels,
        })
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn gene_ids(&self) -> &[String] {
        &self.gene_ids
    }

    pub fn sample_ids(&self) -> &[String] {
        &self.sample_ids
    }

    pub fn matrix(&self) -> &Tensor {
        &self.matrix
    }

    pub fn labels(&self) -> &[u8] {
        &self.labels
    }

    pub fn n_samples(&self) -> usize {
        self.labels.len()
    }

    pub fn n_features(&self) -> usize {
        self.gene_ids.len()
    }

    pub fn n_positive(&self) -> usize {
        self.labels.iter().filter(|&&l| l == 1).count()
    }

    pub fn row(&self, i: usize) -> &[f64] {
        self.matrix.row(i)
    }

    /// Rows `indices` (in that order) as a `[len×d]` batch plus float labels.
    pub fn batch(&self, indices: &[usize]) -> (Tensor, Vec<f64>) {
        let d = self.n_features();
        let mut data = Vec::with_capacity(indices.len() * d);
        let mut labels = Vec::with_capacity(indices.len());
        for &i in indices {
            data.extend_from_slice(self.row(i));
            labels.push(f64::from(self.labels[i]));
        }
        let x = Tensor::new(vec![indices.len(), d], data).expect("batch shape");
        (x, labels)
    }

    /// New dataset holding the rows `indices`.
    pub fn subset(&self, indices: &[usize]) -> ExpressionDataset {
        let (matrix, _) = self.batch(indices);
        ExpressionDataset {
            name: self.name.clone(),
            gene_ids: self.gene_ids.clone(),
            sample_ids: indices.iter().map(|&i| self.sample_ids[i].clone()).collect(),
            matrix,
            labels: indices.iter().map(|&i| self.labels[i]).collect(),
        }
    }

    /// Columns reordered/subset to `genes`. Labels and sample order are kept.
    pub fn project(&self, genes: &[String]) -> Result<ExpressionDataset> {
        let cols: Vec<usize> = genes
            .iter()
            .map(|g| {
                self.gene_ids.iter().position(|x| x == g).ok_or_else(|| {
                    Error::Selection(format!("gene {g} not present in dataset {}", self.name))
                })
            })
            .collect::<Result<_>>()?;
        let n = self.n_samples();
        let mut data = Vec::with_capacity(n * cols.len());
        for i in 0..n {
            let row = self.row(i);
            data.extend(cols.iter().map(|&c| row[c]));
        }
        ExpressionDataset::new(
            self.name.clone(),
            genes.to_vec(),
            self.sample_ids.clone(),
            Tensor::new(vec![n, cols.len()], data)?,
            self.labels.clone(),
        )
    }

    /// Stacks datasets that share the same gene list.
    pub fn concat(name: impl Into<String>, parts: &[ExpressionDataset]) -> Result<ExpressionDataset> {
        let first = parts
            .first()
            .ok_or_else(|| Error::contract("concat of zero datasets"))?;
        let d = first.n_features();
        let mut data = Vec::new();
        let mut labels = Vec::new();
        let mut sample_ids = Vec::new();
        for p in parts {
            if p.gene_ids != first.gene_ids {
                return Err(Error::dim(format!(
                    "concat: dataset {} has a different gene list than {}",
                    p.name, first.name
                )));
            }
            data.extend_from_slice(p.matrix.data());
            labels.extend_from_slice(&p.labels);
            sample_ids.extend(p.sample_ids.iter().map(|s| format!("{}:{s}", p.name)));
        }
        ExpressionDataset::new(
            name,
            first.gene_ids.clone(),
            sample_ids,
            Tensor::new(vec![labels.len(), d], data)?,
            labels,
        )
    }

    pub(crate) fn with_matrix(&self, matrix: Tensor) -> ExpressionDataset {
        ExpressionDataset {
            matrix,
            ..self.clone()
        }
    }
}

/// Draws `size` row indices uniformly at random: without replacement when
/// `size <= N`, with replacement otherwise.
pub fn sample_indices(n: usize, size: usize, rng: &mut Rng) -> Result<Vec<usize>> {
    if size == 0 {
        return Err(Error::contract("batch size must be >= 1"));
    }
    if n == 0 {
        return Err(Error::contract("cannot sample from an empty dataset"));
    }
    if size <= n {
        Ok(index::sample(rng, n, size).into_vec())
    } else {
        Ok((0..size).map(|_| rng.random_range(0..n)).collect())
    }
}

/// Uniform random batch from `dataset`; see [`sample_indices`].
pub fn sample_batch(
    dataset: &ExpressionDataset,
    size: usize,
    rng: &mut Rng,
) -> Result<(Tensor, Vec<f64>)> {
    let idx = sample_indices(dataset.n_samples(), size, rng)?;
    Ok(dataset.batch(&idx))
}

#[cfg(test)]
pub(crate) fn toy_dataset(name: &str, genes: &[&str], rows: &[&[f64]], labels: &[u8]) -> ExpressionDataset {
    let matrix = Tensor::from_rows(&rows.iter().map(|r| r.to_vec()).collect::<Vec<_>>()).unwrap();
    let matrix = if rows.is_empty() {
        Tensor::zeros(&[0, genes.len()])
    } else {
        matrix
    };
    ExpressionDataset::new(
        name,
        genes.iter().map(|g| g.to_string()).collect(),
        (0..labels.len()).map(|i| format!("s{i}")).collect(),
        matrix,
        labels.to_vec(),
    )
    .unwrap()
}
