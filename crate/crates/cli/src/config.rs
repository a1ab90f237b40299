//! Run configuration file. Every field is optional; missing fields take
//! the library defaults. The default path may be set through
//! `RRAMFIT_CONFIG`.

use std::path::Path;

use rramfit::dataset::ParamRanges;
use rramfit::estimator::DEFAULT_K;
use rramfit::heuristics::PipelineConfig;
use rramfit::{Error, Result};
use serde::{Deserialize, Serialize};

pub const CONFIG_ENV: &str = "RRAMFIT_CONFIG";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CliConfig {
    /// Pipeline settings, including the simulation sweep and constants.
    pub pipeline: PipelineConfig,
    /// Dataset sampling ranges for `gen-dataset`.
    pub ranges: ParamRanges,
    /// Neighbors for the nearest-neighbor estimator.
    pub k: usize,
}

impl Default for CliConfig {
    fn default() -> Self {
        CliConfig {
            pipeline: PipelineConfig::default(),
            ranges: ParamRanges::default(),
            k: DEFAULT_K,
        }
    }
}

impl CliConfig {
    pub fn resolve(path: Option<&Path>) -> Result<Self> {
        match path {
            Some(p) => read_json(p),
            None => Ok(CliConfig::default()),
        }
    }
}

pub fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::Io {
        path: path.to_path_buf(),
        source: e,
    })?;
    serde_json::from_str(&text).map_err(|e| Error::Parse {
        path: path.to_path_buf(),
        line: e.line() as u64,
        msg: e.to_string(),
    })
}
