use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{ModelConfig, ModelParams};
use crate::error::{Error, Result};

pub const CHECKPOINT_VERSION: u32 = 1;
const FORMAT: &str = "genemeta-checkpoint";

/// On-disk model: JSON with the config and every named parameter tensor.
/// Floats are written in shortest round-trip form and parsed exactly.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub format: String,
    pub version: u32,
    pub config: ModelConfig,
    pub params: ModelParams,
}

impl Checkpoint {
    pub fn new(config: ModelConfig, params: ModelParams) -> Result<Self> {
        config.check_params(&params)?;
        Ok(Checkpoint {
            format: FORMAT.to_string(),
            version: CHECKPOINT_VERSION,
            config,
            params,
        })
    }

    pub fn to_json(&self) -> Result<String> {
        serde_json::to_string_pretty(self).map_err(|e| Error::Checkpoint(e.to_string()))
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let ckpt: Checkpoint =
            serde_json::from_str(text).map_err(|e| Error::Checkpoint(e.to_string()))?;
        if ckpt.format != FORMAT {
            return Err(Error::Checkpoint(format!("unknown format `{}`", ckpt.format)));
        }
        if ckpt.version != CHECKPOINT_VERSION {
            return Err(Error::Checkpoint(format!(
                "unsupported checkpoint version {} (expected {CHECKPOINT_VERSION})",
                ckpt.version
            )));
        }
        ckpt.config
            .check_params(&ckpt.params)
            .map_err(|e| Error::Checkpoint(e.to_string()))?;
        Ok(ckpt)
    }
}

pub fn save_checkpoint(path: impl AsRef<Path>, config: &ModelConfig, params: &ModelParams) -> Result<()> {
    let text = Checkpoint::new(config.clone(), params.clone())?.to_json()?;
    fs::write(path, text + "\n")?;
    Ok(())
}

pub fn load_checkpoint(path: impl AsRef<Path>) -> Result<Checkpoint> {
    Checkpoint::from_json(&fs::read_to_string(path)?)
}
