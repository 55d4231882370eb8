//! Versioned JSON config files. Unknown keys are rejected so that typos in an
//! experiment sweep fail loudly.

use std::path::Path;

use hetdyn_core::gnn::TrainConfig;
use hetdyn_core::simulate::SystemConfig;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::error::{HdynError, Result};

pub const CONFIG_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimulateFile {
    pub version: u32,
    pub system: SystemConfig,
    /// Independently initialized series sharing latents and structure.
    #[serde(default = "one")]
    pub series: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainFile {
    pub version: u32,
    pub train: TrainConfig,
    /// Hidden width of the interaction and update networks.
    #[serde(default)]
    pub hidden: Option<usize>,
}

fn one() -> usize {
    1
}

/// Parses `text` as a config of type `T`. Errors are usage errors naming the
/// offending field path.
pub fn parse_config<T: DeserializeOwned>(text: &str, source: &Path) -> Result<T> {
    let de = &mut serde_json::Deserializer::from_str(text);
    let value: T = serde_path_to_error::deserialize(de).map_err(|e| {
        let path = e.path().to_string();
        HdynError::Usage(format!("{}: invalid config at `{path}`: {}", source.display(), e.inner()))
    })?;
    Ok(value)
}

fn check_version(version: u32, source: &Path) -> Result<()> {
    if version != CONFIG_VERSION {
        return Err(HdynError::Usage(format!(
            "{}: config version {version} is not supported (expected {CONFIG_VERSION})",
            source.display()
        )));
    }
    Ok(())
}

pub fn read_simulate_config(path: &Path) -> Result<SimulateFile> {
    let text = std::fs::read_to_string(path).map_err(|e| HdynError::io(path, e))?;
    let cfg: SimulateFile = parse_config(&text, path)?;
    check_version(cfg.version, path)?;
    if cfg.series == 0 {
        return Err(HdynError::Usage(format!("{}: invalid config at `series`: must be at least 1", path.display())));
    }
    cfg.system.validate()?;
    Ok(cfg)
}

pub fn read_train_config(path: &Path) -> Result<TrainFile> {
    let text = std::fs::read_to_string(path).map_err(|e| HdynError::io(path, e))?;
    let cfg: TrainFile = parse_config(&text, path)?;
    check_version(cfg.version, path)?;
    Ok(cfg)
}
