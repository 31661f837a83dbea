use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::block::{DEFAULT_BLOCK_SIZE, DEFAULT_SAMPLE_POINTS, DEFAULT_STRIDE};
use crate::boundary::DEFAULT_BOUNDARY_K;
use crate::cleaning::{DEFAULT_GAMMA, DEFAULT_HISTORY, DEFAULT_SIGMA};
use crate::cluster::{DEFAULT_EPS, DEFAULT_MIN_PTS};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Pipeline {
    /// Plain cross-entropy on the noisy labels for every epoch.
    Ce,
    Pnal,
    PnalBoundary,
    /// PNAL for `total_epochs`, then `boundary_epochs` of PNAL-boundary.
    Mixed,
}

impl FromStr for Pipeline {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "ce" => Ok(Self::Ce),
            "pnal" => Ok(Self::Pnal),
            "pnal_boundary" => Ok(Self::PnalBoundary),
            "mixed" => Ok(Self::Mixed),
            other => Err(Error::UnknownPipeline(other.to_string())),
        }
    }
}

impl fmt::Display for Pipeline {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::Ce => "ce",
            Self::Pnal => "pnal",
            Self::PnalBoundary => "pnal_boundary",
            Self::Mixed => "mixed",
        })
    }
}

/// Stage of an epoch, as written to the epoch log.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Phase {
    Ce,
    Warmup,
    Pnal,
    PnalBoundary,
}

/// Where correction clusters come from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum ClusterSource {
    #[default]
    Dbscan,
    /// Ground-truth instance ids; an upper bound for the clustering step.
    Instances,
}

/// Warm-up length: a fixed count or `"auto"`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "WarmupRepr", into = "WarmupRepr")]
pub enum Warmup {
    Auto,
    Epochs(usize),
}

#[derive(Serialize, Deserialize)]
#[serde(untagged)]
enum WarmupRepr {
    Epochs(usize),
    Word(String),
}

impl TryFrom<WarmupRepr> for Warmup {
    type Error = String;

    fn try_from(r: WarmupRepr) -> std::result::Result<Self, String> {
        match r {
            WarmupRepr::Epochs(n) => Ok(Warmup::Epochs(n)),
            WarmupRepr::Word(w) if w == "auto" => Ok(Warmup::Auto),
            WarmupRepr::Word(w) => Err(format!("e_warmup must be a count or \"auto\", got {w:?}")),
        }
    }
}

impl From<Warmup> for WarmupRepr {
    fn from(w: Warmup) -> Self {
        match w {
            Warmup::Auto => WarmupRepr::Word("auto".into()),
            Warmup::Epochs(n) => WarmupRepr::Epochs(n),
        }
    }
}

impl FromStr for Warmup {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        if s == "auto" {
            return Ok(Warmup::Auto);
        }
        s.parse()
            .map(Warmup::Epochs)
            .map_err(|_| Error::invalid("e_warmup", format!("expected a count or \"auto\", got {s:?}")))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub pipeline: Pipeline,
    pub total_epochs: usize,
    pub e_warmup: Warmup,
    /// Extra PNAL-boundary epochs of the mixed pipeline.
    pub boundary_epochs: usize,
    pub q: usize,
    pub sigma: f64,
    pub gamma: f64,
    pub k_boundary: usize,
    pub eps_dbscan: f64,
    pub min_pts: usize,
    pub clusters: ClusterSource,
    pub learning_rate: f64,
    pub batch_size: usize,
    pub block_size: f64,
    pub stride: f64,
    pub points_per_block: usize,
    pub seed: u64,
    /// Confirmed labels (winner equals current label) join the loss mask.
    pub mask_on_confirm: bool,
    /// `false` freezes the boundary band at its first extraction.
    pub progressive: bool,
    /// Clear prediction histories when the mixed pipeline switches phase.
    pub reset_history: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            pipeline: Pipeline::Pnal,
            total_epochs: 30,
            e_warmup: Warmup::Epochs(5),
            boundary_epochs: 10,
            q: DEFAULT_HISTORY,
            sigma: DEFAULT_SIGMA,
            gamma: DEFAULT_GAMMA,
            k_boundary: DEFAULT_BOUNDARY_K,
            eps_dbscan: DEFAULT_EPS,
            min_pts: DEFAULT_MIN_PTS,
            clusters: ClusterSource::Dbscan,
            learning_rate: 0.002,
            batch_size: 256,
            block_size: DEFAULT_BLOCK_SIZE,
            stride: DEFAULT_STRIDE,
            points_per_block: DEFAULT_SAMPLE_POINTS,
            seed: 0,
            mask_on_confirm: true,
            progressive: true,
            reset_history: false,
        }
    }
}

/// Warm-up length whose cleaning stage is five times as long, rounded.
pub fn auto_warmup(total_epochs: usize, q: usize) -> usize {
    let ratio = (0..=total_epochs)
        .find(|&w| ((total_epochs - w) as f64 / 5.0).round() as usize == w)
        .unwrap_or_else(|| (total_epochs as f64 / 6.0).round() as usize);
    ratio.max(q)
}

impl TrainConfig {
    pub fn warmup_epochs(&self) -> usize {
        match self.e_warmup {
            Warmup::Epochs(n) => n,
            Warmup::Auto => auto_warmup(self.total_epochs, self.q),
        }
    }

    pub fn clean_epochs(&self) -> usize {
        self.total_epochs.saturating_sub(self.warmup_epochs())
    }

    /// The `(phase, epochs)` sequence the pipeline runs.
    pub fn schedule(&self) -> Vec<(Phase, usize)> {
        let w = self.warmup_epochs();
        let c = self.clean_epochs();
        match self.pipeline {
            Pipeline::Ce => vec![(Phase::Ce, self.total_epochs)],
            Pipeline::Pnal => vec![(Phase::Warmup, w), (Phase::Pnal, c)],
            Pipeline::PnalBoundary => vec![(Phase::Warmup, w), (Phase::PnalBoundary, c)],
            Pipeline::Mixed => vec![
                (Phase::Warmup, w),
                (Phase::Pnal, c),
                (Phase::PnalBoundary, self.boundary_epochs),
            ],
        }
    }

    pub fn uses_boundary(&self) -> bool {
        matches!(self.pipeline, Pipeline::PnalBoundary | Pipeline::Mixed)
    }

    pub fn validate(&self) -> Result<()> {
        if self.total_epochs == 0 {
            return Err(Error::invalid("total_epochs", "must be positive"));
        }
        if self.q == 0 {
            return Err(Error::invalid("q", "history length must be positive"));
        }
        if self.pipeline != Pipeline::Ce {
            let w = self.warmup_epochs();
            if w > self.total_epochs {
                return Err(Error::invalid("e_warmup", "exceeds total_epochs"));
            }
            if w < self.q {
                return Err(Error::invalid("e_warmup", format!("{w} is shorter than the history length q = {}", self.q)));
            }
        }
        if !(0.0..=1.0).contains(&self.sigma) {
            return Err(Error::invalid("sigma", "must lie in [0, 1]"));
        }
        if !(self.gamma >= 1.0) || !self.gamma.is_finite() {
            return Err(Error::invalid("gamma", "must be at least 1"));
        }
        if self.k_boundary == 0 {
            return Err(Error::invalid("k_boundary", "must be positive"));
        }
        if !(self.eps_dbscan > 0.0) || self.min_pts == 0 {
            return Err(Error::invalid("eps_dbscan", "eps and min_pts must be positive"));
        }
        if !(self.learning_rate >= 0.0) || !self.learning_rate.is_finite() {
            return Err(Error::invalid("learning_rate", "must be finite and non-negative"));
        }
        if self.batch_size == 0 || self.points_per_block == 0 {
            return Err(Error::invalid("batch_size", "batch and block sample sizes must be positive"));
        }
        if !(self.block_size > 0.0) || !(self.stride > 0.0) || self.stride > self.block_size {
            return Err(Error::invalid("stride", "need 0 < stride <= block_size"));
        }
        Ok(())
    }
}
