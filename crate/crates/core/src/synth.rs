//! Synthetic families of related expression datasets.
//!
//! Every dataset shares one concept over a latent Gaussian vector `z`: the
//! label is positive when `w·z_s + 0.3·((v·z_s)² − 1) > 0`, where `z_s` is
//! the first `signal_dim` coordinates. Each dataset then observes `z`
//! through its own rotation and shift. The rotation is a product of Givens
//! rotations pairing every signal coordinate with another coordinate, with
//! angles proportional to `perturbation`, so perturbation 0 gives identically
//! distributed datasets.

use std::f64::consts::FRAC_PI_4;
use std::fs;
use std::path::{Path, PathBuf};

use rand::Rng as _;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::autodiff::Tensor;
use crate::data::{write_expression_tsv, ExpressionDataset};
use crate::error::{Error, Result};
use crate::rng::{derive_seed, seeded, Rng};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthSpec {
    pub n_sources: usize,
    pub source_samples: usize,
    pub target_samples: usize,
    pub n_features: usize,
    pub signal_dim: usize,
    /// Per-dataset rotation/shift strength; 0 means no shift between datasets.
    pub perturbation: f64,
    pub label_noise: f64,
    /// Fraction of positive samples before label noise.
    pub balance: f64,
    pub seed: u64,
}

impl Default for SynthSpec {
    fn default() -> Self {
        SynthSpec {
            n_sources: 3,
            source_samples: 200,
            target_samples: 60,
            n_features: 50,
            signal_dim: 8,
            perturbation: 0.6,
            label_noise: 0.05,
            balance: 0.5,
            seed: 0,
        }
    }
}

impl SynthSpec {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Contract(format!("synth spec: {m}")));
        if self.n_sources == 0 || self.source_samples == 0 || self.target_samples == 0 {
            return bad("dataset counts and sizes must be positive");
        }
        if self.signal_dim == 0 || self.signal_dim > self.n_features {
            return bad("signal_dim must lie in 1..=n_features");
        }
        if self.n_features < 2 {
            return bad("need at least two features");
        }
        if !(self.perturbation >= 0.0 && self.perturbation.is_finite()) {
            return bad("perturbation must be finite and non-negative");
        }
        if !(0.0..0.5).contains(&self.label_noise) {
            return bad("label_noise must lie in [0, 0.5)");
        }
        if !(self.balance > 0.0 && self.balance < 1.0) {
            return bad("balance must lie in (0, 1)");
        }
        Ok(())
    }
}

#[derive(Clone, Debug)]
pub struct TaskFamily {
    pub sources: Vec<ExpressionDataset>,
    pub target: ExpressionDataset,
}

impl TaskFamily {
    /// Sources followed by the target.
    pub fn datasets(&self) -> Vec<ExpressionDataset> {
        let mut all = self.sources.clone();
        all.push(self.target.clone());
        all
    }
}

struct Concept {
    w: Vec<f64>,
    v: Vec<f64>,
}

impl Concept {
    fn draw(k: usize, rng: &mut Rng) -> Concept {
        Concept {
            w: unit_vector(k, rng),
            v: unit_vector(k, rng),
        }
    }

    fn score(&self, z: &[f64]) -> f64 {
        let dot = |a: &[f64]| a.iter().zip(z).map(|(x, y)| x * y).sum::<f64>();
        let q = dot(&self.v);
        dot(&self.w) + 0.3 * (q * q - 1.0)
    }
}

fn unit_vector(k: usize, rng: &mut Rng) -> Vec<f64> {
    loop {
        let v: Vec<f64> = (0..k).map(|_| StandardNormal.sample(rng)).collect();
        let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm > 1e-12 {
            return v.into_iter().map(|x| x / norm).collect();
        }
    }
}

/// Rotation and shift through which one dataset observes the latent vector.
struct View {
    givens: Vec<(usize, usize, f64, f64)>,
    shift: Vec<f64>,
}

impl View {
    fn draw(spec: &SynthSpec, rng: &mut Rng) -> View {
        let d = spec.n_features;
        let p = spec.perturbation;
        let mut givens = Vec::with_capacity(spec.signal_dim);
        for i in 0..spec.signal_dim {
            let mut j = rng.random_range(0..d - 1);
            if j >= i {
                j += 1;
            }
            let sign = if rng.random::<bool>() { 1.0 } else { -1.0 };
            let angle = p * FRAC_PI_4 * sign * rng.random_range(0.5..1.0);
            givens.push((i, j, angle.cos(), angle.sin()));
        }
        let shift = (0..d)
            .map(|_| {
                let n: f64 = StandardNormal.sample(rng);
                p * 0.5 * n
            })
            .collect();
        View { givens, shift }
    }

    fn apply(&self, z: &mut [f64]) {
        for &(i, j, c, s) in &self.givens {
            let (a, b) = (z[i], z[j]);
            z[i] = c * a - s * b;
            z[j] = s * a + c * b;
        }
        for (x, b) in z.iter_mut().zip(&self.shift) {
            *x += b;
        }
    }
}

fn gene_ids(d: usize) -> Vec<String> {
    (1..=d).map(|j| format!("G{j:04}")).collect()
}

fn draw_dataset(
    name: &str,
    n: usize,
    spec: &SynthSpec,
    concept: &Concept,
    view: &View,
    rng: &mut Rng,
) -> Result<ExpressionDataset> {
    let d = spec.n_features;
    let want_pos = ((spec.balance * n as f64).round() as usize).min(n);
    let mut quota = [n - want_pos, want_pos];
    let mut data = Vec::with_capacity(n * d);
    let mut labels = Vec::with_capacity(n);
    let max_draws = 10_000 * n.max(1);
    let mut draws = 0;
    while labels.len() < n {
        draws += 1;
        if draws > max_draws {
            return Err(Error::Contract(format!(
                "synth: could not reach class balance {} for `{name}`",
                spec.balance
            )));
        }
        let mut z: Vec<f64> = (0..d).map(|_| StandardNormal.sample(&mut *rng)).collect();
        let y = usize::from(concept.score(&z[..spec.signal_dim]) > 0.0);
        if quota[y] == 0 {
            continue;
        }
        quota[y] -= 1;
        view.apply(&mut z);
        data.extend_from_slice(&z);
        labels.push(y as u8);
    }
    // Quotas fill in draw order, so shuffle rows before noise is applied.
    let mut order: Vec<usize> = (0..n).collect();
    rand::seq::SliceRandom::shuffle(order.as_mut_slice(), rng);
    let mut shuffled = Vec::with_capacity(n * d);
    let mut shuffled_labels = Vec::with_capacity(n);
    for &i in &order {
        shuffled.extend_from_slice(&data[i * d..(i + 1) * d]);
        let flip = rng.random::<f64>() < spec.label_noise;
        shuffled_labels.push(labels[i] ^ u8::from(flip));
    }
    ExpressionDataset::new(
        name,
        gene_ids(d),
        (1..=n).map(|i| format!("{name}_S{i:04}")).collect(),
        Tensor::new(vec![n, d], shuffled)?,
        shuffled_labels,
    )
}

/// Sources `source1..` and a `target`, all sharing gene ids `G0001..`.
pub fn generate_task_family(spec: &SynthSpec) -> Result<TaskFamily> {
    spec.validate()?;
    let concept = Concept::draw(spec.signal_dim, &mut seeded(derive_seed(spec.seed, &[0])));
    let make = |task: usize, name: &str, n: usize| -> Result<ExpressionDataset> {
        let view = View::draw(spec, &mut seeded(derive_seed(spec.seed, &[1, task as u64])));
        let mut rng = seeded(derive_seed(spec.seed, &[2, task as u64]));
        draw_dataset(name, n, spec, &concept, &view, &mut rng)
    };
    let sources = (0..spec.n_sources)
        .map(|i| make(i, &format!("source{}", i + 1), spec.source_samples))
        .collect::<Result<Vec<_>>>()?;
    let target = make(spec.n_sources, "target", spec.target_samples)?;
    Ok(TaskFamily { sources, target })
}

#[derive(Debug, Serialize, Deserialize)]
pub struct SynthManifest {
    pub spec: SynthSpec,
    pub sources: Vec<PathBuf>,
    pub target: PathBuf,
}

/// Writes every dataset as `<name>.tsv` into `dir` plus `manifest.json`
/// describing the spec and file roles. Returns the manifest.
pub fn write_task_family(family: &TaskFamily, spec: &SynthSpec, dir: impl AsRef<Path>) -> Result<SynthManifest> {
    let dir = dir.as_ref();
    fs::create_dir_all(dir)?;
    let mut sources = Vec::new();
    for s in &family.sources {
        let file = PathBuf::from(format!("{}.tsv", s.name()));
        write_expression_tsv(s, dir.join(&file))?;
        sources.push(file);
    }
    let target = PathBuf::from(format!("{}.tsv", family.target.name()));
    write_expression_tsv(&family.target, dir.join(&target))?;
    let manifest = SynthManifest {
        spec: spec.clone(),
        sources,
        target,
    };
    let text = serde_json::to_string_pretty(&manifest).map_err(|e| Error::Contract(e.to_string()))?;
    fs::write(dir.join("manifest.json"), text + "\n")?;
    Ok(manifest)
}
