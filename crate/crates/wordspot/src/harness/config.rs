//! Pipeline configuration: one document, TOML or JSON, covering every
//! tunable stage. All fields default to the values the test suite pins.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::net::train::TrainConfig;
use crate::net::ArchConfig;
use crate::phoc::PhocConfig;
use crate::proposals::FilterTrainConfig;
use crate::retrieval::Metric;
use crate::harness::synth::SynthSpec;

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct ImagingConfig {
    pub binarize_factor: f64,
    pub core_density: f64,
    pub smooth_window: usize,
    pub line_min_frac: f64,
    pub line_overlap_frac: f64,
}

impl Default for ImagingConfig {
    fn default() -> Self {
        Self {
            binarize_factor: 0.75,
            core_density: 0.9,
            smooth_window: 15,
            line_min_frac: 0.5,
            line_overlap_frac: 0.5,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct ProposalsConfig {
    /// Column strips per candidate.
    pub p: usize,
    /// Row strips per candidate.
    pub q: usize,
    pub max_run: usize,
    pub filter: FilterTrainConfig,
    pub filter_threshold: f64,
    /// IoU bands for filter training labels.
    pub iou_pos: f64,
    pub iou_neg: f64,
}

impl Default for ProposalsConfig {
    fn default() -> Self {
        Self {
            p: 8,
            q: 4,
            max_run: 8,
            filter: FilterTrainConfig::default(),
            filter_threshold: 0.0,
            iou_pos: 0.5,
            iou_neg: 0.2,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct RetrievalConfig {
    pub metric: Metric,
    pub iou_threshold: f64,
    /// Drop the query's own record from QBE rankings.
    pub exclude_self: bool,
    pub fold_seed: u64,
    pub bins: usize,
}

impl Default for RetrievalConfig {
    fn default() -> Self {
        Self {
            metric: Metric::Cosine,
            iou_threshold: 0.5,
            exclude_self: false,
            fold_seed: 0,
            bins: 4,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize, Default)]
#[serde(default)]
pub struct NetConfig {
    /// Architecture override; the desk default sized to the PHOC dimension
    /// applies when absent.
    pub arch: Option<ArchConfig>,
    pub train: TrainConfig,
}

#[derive(Debug, Clone, Serialize, Deserialize, Default)]
#[serde(default)]
pub struct PipelineConfig {
    pub phoc: PhocConfig,
    pub imaging: ImagingConfig,
    pub proposals: ProposalsConfig,
    pub net: NetConfig,
    pub retrieval: RetrievalConfig,
    pub synth: SynthSpec,
}

impl PipelineConfig {
    /// The architecture to use: the configured one, or the desk default
    /// sized to this config's PHOC dimension.
    pub fn arch(&self) -> ArchConfig {
        self.net
            .arch
            .clone()
            .unwrap_or_else(|| ArchConfig::desk_default(self.phoc.dimension()))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let is_json = path.extension().is_some_and(|e| e == "json");
        let cfg: PipelineConfig = if is_json {
            serde_json::from_str(&text)
                .map_err(|e| Error::Config(format!("{}: {e}", path.display())))?
        } else {
            toml::from_str(&text)
                .map_err(|e| Error::Config(format!("{}: {e}", path.display())))?
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load_or_default(path: Option<&Path>) -> Result<Self> {
        match path {
            Some(p) => Self::load(p),
            None => Ok(Self::default()),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.imaging.binarize_factor > 0.0 && self.imaging.binarize_factor < 1.0) {
            return Err(Error::Config("imaging.binarize_factor must lie in (0, 1)".into()));
        }
        if self.imaging.smooth_window == 0 || self.imaging.smooth_window % 2 == 0 {
            return Err(Error::Config("imaging.smooth_window must be odd".into()));
        }
        if self.proposals.max_run == 0 || self.proposals.p == 0 || self.proposals.q == 0 {
            return Err(Error::Config("proposals.p, q and max_run must be positive".into()));
        }
        if self.net.train.iou_bg >= self.net.train.iou_pos {
            return Err(Error::Config("net.train.iou_bg must fall below iou_pos".into()));
        }
        if !(self.net.train.positive_fraction > 0.0 && self.net.train.positive_fraction <= 1.0) {
            return Err(Error::Config("net.train.positive_fraction must lie in (0, 1]".into()));
        }
        self.arch().validate()
    }
}
