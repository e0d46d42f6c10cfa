//! Run configuration: a TOML file with `[data]`, `[model]`, `[train]` and
//! `[eval]` sections. Relative paths are resolved against the file's
//! directory; command-line flags are applied on top afterwards.

use std::fs;
use std::path::{Path, PathBuf};

use genemeta::{Architecture, MetaConfig, ModelConfig, TrainerKind};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::CliError;

pub const DEFAULT_LAMBDAS: [f64; 6] = [0.1, 0.3, 0.5, 0.7, 0.9, 1.0];

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DataSection {
    /// Expression TSV files; sources and target together.
    pub datasets: Vec<PathBuf>,
    /// Name (file stem) or path of the target dataset.
    pub target: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub interactions: Option<PathBuf>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalSection {
    pub folds: usize,
    pub lambdas: Vec<f64>,
}

impl Default for EvalSection {
    fn default() -> Self {
        EvalSection {
            folds: 10,
            lambdas: DEFAULT_LAMBDAS.to_vec(),
        }
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct TrainSection {
    pub trainer: TrainerKind,
    #[serde(flatten)]
    pub meta: MetaConfig,
    /// Whether λ was set explicitly, in the file or on the command line.
    #[serde(skip)]
    pub lambda_given: bool,
}

/// Fully resolved settings for one run. Serializes back to a loadable file.
#[derive(Clone, Debug, Serialize)]
pub struct RunConfig {
    pub seed: u64,
    pub jobs: usize,
    pub out: PathBuf,
    pub data: DataSection,
    pub model: ModelConfig,
    pub train: TrainSection,
    pub eval: EvalSection,
}

#[derive(Deserialize, Default)]
#[serde(deny_unknown_fields)]
struct RawConfig {
    seed: Option<u64>,
    jobs: Option<usize>,
    out: Option<PathBuf>,
    data: Option<DataSection>,
    #[serde(default)]
    model: toml::Table,
    #[serde(default)]
    train: toml::Table,
    #[serde(default)]
    eval: EvalSection,
}

/// Values given on the command line; each one wins over the file.
#[derive(Clone, Debug, Default)]
pub struct Overrides {
    pub seed: Option<u64>,
    pub jobs: Option<usize>,
    pub out: Option<PathBuf>,
    pub trainer: Option<TrainerKind>,
    pub lambda: Option<f64>,
    pub epochs: Option<usize>,
    pub folds: Option<usize>,
    pub lambdas: Option<Vec<f64>>,
}

/// Replaces keys of `base` by those in `patch`, rejecting keys `base` lacks.
fn overlay<T: Serialize + DeserializeOwned>(base: &T, patch: toml::Table, section: &str) -> Result<T, CliError> {
    let mut table = toml::Table::try_from(base).map_err(|e| CliError::Config(format!("[{section}]: {e}")))?;
    for (key, value) in patch {
        if !table.contains_key(&key) {
            return Err(CliError::Config(format!("[{section}]: unknown key `{key}`")));
        }
        table.insert(key, value);
    }
    toml::Value::Table(table)
        .try_into()
        .map_err(|e| CliError::Config(format!("[{section}]: {e}")))
}

fn resolve(base: &Path, p: &Path) -> PathBuf {
    if p.is_absolute() {
        p.to_path_buf()
    } else {
        base.join(p)
    }
}

/// Integers are accepted wherever a float is expected.
fn widen_floats(table: &mut toml::Table, keys: &[&str]) {
    for key in keys {
        if let Some(toml::Value::Integer(i)) = table.get(*key) {
            let v = *i as f64;
            table.insert(key.to_string(), toml::Value::Float(v));
        }
    }
}

impl RunConfig {
    pub fn load(path: Option<&Path>, ov: &Overrides) -> Result<RunConfig, CliError> {
        let (raw, base) = match path {
            Some(p) => {
                let text = fs::read_to_string(p)
                    .map_err(|e| CliError::Config(format!("cannot read config {}: {e}", p.display())))?;
                let raw: RawConfig =
                    toml::from_str(&text).map_err(|e| CliError::Config(format!("{}: {e}", p.display())))?;
                (raw, p.parent().map(Path::to_path_buf).unwrap_or_default())
            }
            None => (RawConfig::default(), PathBuf::new()),
        };

        let mut data = raw
            .data
            .ok_or_else(|| CliError::Config("missing [data] section (pass --config)".into()))?;
        data.datasets = data.datasets.iter().map(|p| resolve(&base, p)).collect();
        data.interactions = data.interactions.map(|p| resolve(&base, &p));
        if data.datasets.len() < 2 {
            return Err(CliError::Config("[data]: need a target and at least one source dataset".into()));
        }

        let mut model_table = raw.model;
        widen_floats(&mut model_table, &["slope"]);
        let model = overlay(&ModelConfig::new(Architecture::Mlp, 0), model_table, "model")?;

        let mut train_table = raw.train;
        let trainer = match train_table.remove("trainer") {
            None => TrainerKind::Meta,
            Some(toml::Value::String(s)) => s.parse().map_err(|e: genemeta::Error| CliError::Config(e.to_string()))?,
            Some(other) => return Err(CliError::Config(format!("[train]: trainer must be a string, got {other}"))),
        };
        let file_seed = train_table.remove("seed").and_then(|v| v.as_integer()).map(|s| s as u64);
        let lambda_in_file = train_table.contains_key("lambda");
        widen_floats(&mut train_table, &["inner_lr", "inner_momentum", "outer_lr", "lambda"]);
        let mut meta = overlay(&MetaConfig::default(), train_table, "train")?;

        let seed = ov.seed.or(raw.seed).or(file_seed).unwrap_or(0);
        meta.seed = seed;
        if let Some(l) = ov.lambda {
            meta.lambda = l;
        }
        if let Some(e) = ov.epochs {
            meta.epochs = e;
        }
        meta.validate()?;

        let mut eval = raw.eval;
        if let Some(k) = ov.folds {
            eval.folds = k;
        }
        if let Some(ls) = &ov.lambdas {
            eval.lambdas = ls.clone();
        }

        let out = match (&ov.out, raw.out) {
            (Some(o), _) => o.clone(),
            (None, Some(o)) => resolve(&base, &o),
            (None, None) => return Err(CliError::Config("no output directory (set `out` or pass --out)".into())),
        };
        let jobs = ov.jobs.or(raw.jobs).unwrap_or(1).max(1);

        Ok(RunConfig {
            seed,
            jobs,
            out,
            data,
            model,
            train: TrainSection {
                trainer: ov.trainer.unwrap_or(trainer),
                meta,
                lambda_given: lambda_in_file || ov.lambda.is_some(),
            },
            eval,
        })
    }

    /// Dataset name the target designation refers to: a path listed under
    /// `datasets` maps to its file stem, anything else is taken as a name.
    pub fn target_name(&self) -> String {
        let t = Path::new(&self.data.target);
        let listed = self
            .data
            .datasets
            .iter()
            .any(|p| p.ends_with(t) && t.extension().is_some());
        if listed {
            t.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default()
        } else {
            self.data.target.clone()
        }
    }

    pub fn to_toml(&self) -> Result<String, CliError> {
        toml::to_string_pretty(self).map_err(|e| CliError::Config(format!("cannot serialize config: {e}")))
    }
}
