//! Shapley attributions of a scalar model output.
//!
//! The value of a feature coalition is the output on the explained sample
//! with every feature outside the coalition replaced by its background mean.
//! For models the explained output is the predicted probability.

use std::io::Write;

use rand::seq::SliceRandom;
use serde::Serialize;

use crate::autodiff::Tensor;
use crate::error::{Error, Result};
use crate::models::{predict, ModelConfig, ModelParams};
use crate::rng::seeded;

/// Largest feature count accepted by [`shapley_exact`].
pub const MAX_EXACT_FEATURES: usize = 12;

/// Rows of permutations evaluated per batch by [`shapley_sampled`].
const PERMUTATIONS_PER_BATCH: usize = 256;

/// Anything that maps a `[B×d]` batch to `B` scalar outputs.
pub trait Scorer {
    fn n_features(&self) -> usize;
    fn score(&self, batch: &Tensor) -> Result<Vec<f64>>;
}

/// A trained model; scores are sigmoid probabilities.
pub struct ModelScorer<'a> {
    pub params: &'a ModelParams,
    pub config: &'a ModelConfig,
}

impl Scorer for ModelScorer<'_> {
    fn n_features(&self) -> usize {
        self.config.input_dim
    }

    fn score(&self, batch: &Tensor) -> Result<Vec<f64>> {
        Ok(predict(self.params, self.config, batch)?.into_data())
    }
}

/// A plain function of one feature row.
pub struct FnScorer<F> {
    dim: usize,
    f: F,
}

impl<F: Fn(&[f64]) -> f64> FnScorer<F> {
    pub fn new(dim: usize, f: F) -> Self {
        FnScorer { dim, f }
    }
}

impl<F: Fn(&[f64]) -> f64> Scorer for FnScorer<F> {
    fn n_features(&self) -> usize {
        self.dim
    }

    fn score(&self, batch: &Tensor) -> Result<Vec<f64>> {
        if batch.ndim() != 2 || batch.shape()[1] != self.dim {
            return Err(Error::Dimension(format!(
                "batch shape {:?} does not match {} features",
                batch.shape(),
                self.dim
            )));
        }
        Ok((0..batch.shape()[0]).map(|i| (self.f)(batch.row(i))).collect())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Attribution {
    pub sample_id: String,
    pub gene_ids: Vec<String>,
    /// Shapley value per feature.
    pub values: Vec<f64>,
    /// The explained sample's feature values.
    pub sample: Vec<f64>,
    /// Output with every feature at its background mean.
    pub base_value: f64,
    /// Output on the explained sample.
    pub prediction: f64,
}

impl Attribution {
    /// `Σ φ − (f(x) − base)`; zero up to rounding for exact attributions.
    pub fn efficiency_gap(&self) -> f64 {
        self.values.iter().sum::<f64>() - (self.prediction - self.base_value)
    }
}

struct Game<'a> {
    scorer: &'a dyn Scorer,
    reference: Vec<f64>,
    sample: &'a [f64],
}

impl<'a> Game<'a> {
    fn new(scorer: &'a dyn Scorer, background: &Tensor, sample: &'a [f64], gene_ids: &[String]) -> Result<Self> {
        let d = scorer.n_features();
        if background.ndim() != 2 || background.shape()[0] == 0 {
            return Err(Error::Contract("background set is empty".into()));
        }
        if background.shape()[1] != d || sample.len() != d || gene_ids.len() != d {
            return Err(Error::Dimension(format!(
                "scorer has {d} features; background {:?}, sample {}, gene ids {}",
                background.shape(),
                sample.len(),
                gene_ids.len()
            )));
        }
        let n = background.shape()[0] as f64;
        let mut reference = vec![0.0; d];
        for i in 0..background.shape()[0] {
            for (r, v) in reference.iter_mut().zip(background.row(i)) {
                *r += v;
            }
        }
        reference.iter_mut().for_each(|r| *r /= n);
        Ok(Game {
            scorer,
            reference,
            sample,
        })
    }

    fn d(&self) -> usize {
        self.reference.len()
    }

    fn row_into(&self, revealed: impl Fn(usize) -> bool, out: &mut Vec<f64>) {
        out.extend((0..self.d()).map(|j| if revealed(j) { self.sample[j] } else { self.reference[j] }));
    }

    fn endpoints(&self) -> Result<(f64, f64)> {
        let mut rows = Vec::with_capacity(2 * self.d());
        self.row_into(|_| false, &mut rows);
        self.row_into(|_| true, &mut rows);
        let v = self.scorer.score(&Tensor::new(vec![2, self.d()], rows)?)?;
        Ok((v[0], v[1]))
    }
}

fn attribution(game: &Game, values: Vec<f64>, gene_ids: &[String], sample_id: &str) -> Result<Attribution> {
    let (base_value, prediction) = game.endpoints()?;
    Ok(Attribution {
        sample_id: sample_id.to_string(),
        gene_ids: gene_ids.to_vec(),
        values,
        sample: game.sample.to_vec(),
        base_value,
        prediction,
    })
}

/// Exact Shapley values by enumerating all `2^d` coalitions.
pub fn shapley_exact(
    scorer: &dyn Scorer,
    background: &Tensor,
    sample: &[f64],
    gene_ids: &[String],
    sample_id: &str,
) -> Result<Attribution> {
    let d = scorer.n_features();
    if d > MAX_EXACT_FEATURES {
        return Err(Error::Scale(format!(
            "exact Shapley enumeration supports at most {MAX_EXACT_FEATURES} features, got {d}"
        )));
    }
    let game = Game::new(scorer, background, sample, gene_ids)?;
    let subsets = 1usize << d;
    let mut rows = Vec::with_capacity(subsets * d);
    for mask in 0..subsets {
        game.row_into(|j| mask & (1 << j) != 0, &mut rows);
    }
    let v = scorer.score(&Tensor::new(vec![subsets, d], rows)?)?;

    // weight[s] = s!(d−s−1)!/d! for a coalition of size s not containing i.
    let fact = |n: usize| (1..=n).map(|k| k as f64).product::<f64>();
    let weight: Vec<f64> = (0..d).map(|s| fact(s) * fact(d - s - 1) / fact(d)).collect();
    let mut phi = vec![0.0; d];
    for mask in 0..subsets {
        let size = mask.count_ones() as usize;
        for (i, p) in phi.iter_mut().enumerate() {
            if mask & (1 << i) == 0 {
                *p += weight[size] * (v[mask | (1 << i)] - v[mask]);
            }
        }
    }
    attribution(&game, phi, gene_ids, sample_id)
}

/// Monte Carlo estimate from `n_permutations` random feature orderings.
pub fn shapley_sampled(
    scorer: &dyn Scorer,
    background: &Tensor,
    sample: &[f64],
    gene_ids: &[String],
    sample_id: &str,
    n_permutations: usize,
    seed: u64,
) -> Result<Attribution> {
    if n_permutations == 0 {
        return Err(Error::Contract("need at least one permutation".into()));
    }
    let game = Game::new(scorer, background, sample, gene_ids)?;
    let d = game.d();
    let mut rng = seeded(seed);
    let mut phi = vec![0.0; d];
    let mut order: Vec<usize> = (0..d).collect();
    let mut done = 0;
    while done < n_permutations {
        let batch = PERMUTATIONS_PER_BATCH.min(n_permutations - done);
        let mut orders = Vec::with_capacity(batch);
        let mut rows = Vec::with_capacity(batch * (d + 1) * d);
        for _ in 0..batch {
            order.shuffle(&mut rng);
            let mut current = game.reference.clone();
            rows.extend_from_slice(&current);
            for &j in &order {
                current[j] = sample[j];
                rows.extend_from_slice(&current);
            }
            orders.push(order.clone());
        }
        let v = scorer.score(&Tensor::new(vec![batch * (d + 1), d], rows)?)?;
        for (p, perm) in orders.iter().enumerate() {
            let base = p * (d + 1);
            for (step, &j) in perm.iter().enumerate() {
                phi[j] += v[base + step + 1] - v[base + step];
            }
        }
        done += batch;
    }
    phi.iter_mut().for_each(|p| *p /= n_permutations as f64);
    attribution(&game, phi, gene_ids, sample_id)
}

/// Genes ordered by mean |Shapley value| over the explained samples,
/// descending, ties by gene id; at most `top_k` entries.
pub fn rank_features(attributions: &[Attribution], top_k: usize) -> Result<Vec<(String, f64)>> {
    if top_k == 0 {
        return Err(Error::Contract("top_k must be >= 1".into()));
    }
    let Some(first) = attributions.first() else {
        return Ok(Vec::new());
    };
    if attributions.iter().any(|a| a.gene_ids != first.gene_ids) {
        return Err(Error::Contract("attributions cover different genes".into()));
    }
    let n = attributions.len() as f64;
    let mut ranked: Vec<(String, f64)> = first
        .gene_ids
        .iter()
        .enumerate()
        .map(|(j, g)| (g.clone(), attributions.iter().map(|a| a.values[j].abs()).sum::<f64>() / n))
        .collect();
    ranked.sort_by(|a, b| b.1.total_cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
    ranked.truncate(top_k);
    Ok(ranked)
}

#[derive(Serialize)]
struct AttributionRow<'a> {
    sample_id: &'a str,
    gene_id: &'a str,
    shap_value: f64,
    feature_value: f64,
}

/// One row per (explained sample, gene).
pub fn write_attributions_csv<W: Write>(attributions: &[Attribution], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    for a in attributions {
        for ((g, &phi), &x) in a.gene_ids.iter().zip(&a.values).zip(&a.sample) {
            w.serialize(AttributionRow {
                sample_id: &a.sample_id,
                gene_id: g,
                shap_value: phi,
                feature_value: x,
            })?;
        }
    }
    w.flush()?;
    Ok(())
}

#[derive(Serialize)]
struct RankRow<'a> {
    rank: usize,
    gene_id: &'a str,
    mean_abs_shap: f64,
}

pub fn write_ranking_csv<W: Write>(ranking: &[(String, f64)], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    for (i, (g, v)) in ranking.iter().enumerate() {
        w.serialize(RankRow {
            rank: i + 1,
            gene_id: g,
            mean_abs_shap: *v,
        })?;
    }
    w.flush()?;
    Ok(())
}
