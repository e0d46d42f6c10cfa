use std::collections::{BTreeSet, HashSet};

use super::ExpressionDataset;
use crate::error::{Error, Result};

/// Undirected gene-gene interactions. Each pair is stored with its symbols
/// in lexicographic order.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct GeneInteractionSet {
    pairs: BTreeSet<(String, String)>,
}

impl GeneInteractionSet {
    pub fn insert(&mut self, a: &str, b: &str) {
        let pair = if a <= b { (a, b) } else { (b, a) };
        self.pairs.insert((pair.0.to_string(), pair.1.to_string()));
    }

    pub fn len(&self) -> usize {
        self.pairs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pairs.is_empty()
    }

    pub fn pairs(&self) -> impl Iterator<Item = (&str, &str)> {
        self.pairs.iter().map(|(a, b)| (a.as_str(), b.as_str()))
    }

    /// Every symbol appearing in at least one pair.
    pub fn genes(&self) -> HashSet<&str> {
        self.pairs().flat_map(|(a, b)| [a, b]).collect()
    }
}

impl<'a> FromIterator<(&'a str, &'a str)> for GeneInteractionSet {
    fn from_iter<I: IntoIterator<Item = (&'a str, &'a str)>>(iter: I) -> Self {
        let mut set = GeneInteractionSet::default();
        for (a, b) in iter {
            set.insert(a, b);
        }
        set
    }
}

/// Genes measured in every dataset, sorted lexicographically.
pub fn select_common_genes(datasets: &[ExpressionDataset]) -> Result<Vec<String>> {
    let (first, rest) = datasets
        .split_first()
        .ok_or_else(|| Error::Selection("no datasets given".into()))?;
    let mut common: BTreeSet<&str> = first.gene_ids().iter().map(String::as_str).collect();
    for d in rest {
        let genes: HashSet<&str> = d.gene_ids().iter().map(String::as_str).collect();
        common.retain(|g| genes.contains(g));
    }
    if common.is_empty() {
        return Err(Error::Selection("empty intersection of gene sets".into()));
    }
    Ok(common.into_iter().map(str::to_string).collect())
}

/// Keeps the genes that take part in at least one interaction, preserving
/// input order.
pub fn filter_by_interactions(
    genes: &[String],
    interactions: &GeneInteractionSet,
) -> Result<Vec<String>> {
    let interacting = interactions.genes();
    let kept: Vec<String> = genes
        .iter()
        .filter(|g| interacting.contains(g.as_str()))
        .cloned()
        .collect();
    if kept.is_empty() {
        return Err(Error::Selection(
            "no selected gene appears in the interaction set".into(),
        ));
    }
    Ok(kept)
}
