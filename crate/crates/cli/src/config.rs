//! Run configuration: one JSON document plus command-line overrides.

use std::path::Path;

use anyhow::{Context, Result};
use pnal::noise::NoiseSpec;
use pnal::synth::SynthSpec;
use pnal::trainer::TrainConfig;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::Failure;

pub const DEFAULT_SCENE_COUNT: usize = 10;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub synth: SynthSpec,
    pub noise: NoiseSpec,
    pub train: TrainConfig,
    pub scene_count: usize,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            synth: SynthSpec::default(),
            noise: NoiseSpec::default(),
            train: TrainConfig::default(),
            scene_count: DEFAULT_SCENE_COUNT,
        }
    }
}

impl RunConfig {
    /// Defaults, or the file at `path` when given.
    pub fn load(path: Option<&Path>) -> Result<Self> {
        let Some(path) = path else {
            return Ok(Self::default());
        };
        let text = std::fs::read_to_string(path)
            .map_err(Failure::Io)
            .with_context(|| format!("reading config {}", path.display()))?;
        serde_json::from_str(&text)
            .map_err(|e| Failure::Invalid(e.to_string()))
            .with_context(|| format!("parsing config {}", path.display()))
    }
}

/// Parses a snake_case enum name the same way the config file does.
pub fn parse_name<T: DeserializeOwned>(s: &str) -> std::result::Result<T, String> {
    serde_json::from_value(serde_json::Value::String(s.to_string())).map_err(|e| e.to_string())
}

/// `a:b` pairs separated by commas, e.g. `0:1,2:3`.
pub fn parse_pairs(s: &str) -> std::result::Result<Vec<(u32, u32)>, String> {
    s.split(',')
        .filter(|p| !p.trim().is_empty())
        .map(|p| {
            let (a, b) = p.split_once(':').ok_or_else(|| format!("`{p}` is not of the form a:b"))?;
            let a = a.trim().parse().map_err(|_| format!("`{a}` is not a class id"))?;
            let b = b.trim().parse().map_err(|_| format!("`{b}` is not a class id"))?;
            Ok((a, b))
        })
        .collect()
}
