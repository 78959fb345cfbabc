//! Pipeline configuration (JSON).

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::manifest::ManifestEntry;
use super::PipelineError;
use crate::automaton::{BackgroundInit, EvolutionConfig, SmoothingRule, ThresholdKind, ThresholdStrategy};
use crate::decoder::DecoderParams;
use crate::encoder::{load_architecture, Architecture};
use crate::error::{invalid, Error};
use crate::imagery::BinaryMask;
use crate::merge::TrainConfig;
use crate::metrics::MetricParams;

/// How background strengths are seeded; `prior` reads each entry's mask.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum InitStrategy {
    Dilation { radius: usize },
    Prior,
}

impl Default for InitStrategy {
    fn default() -> Self {
        InitStrategy::Dilation { radius: 10 }
    }
}

impl InitStrategy {
    pub fn background(&self, mask: Option<&BinaryMask>) -> crate::Result<BackgroundInit> {
        match (self, mask) {
            (InitStrategy::Dilation { radius }, _) => Ok(BackgroundInit::Dilation(*radius)),
            (InitStrategy::Prior, Some(m)) => Ok(BackgroundInit::Prior(m.clone())),
            (InitStrategy::Prior, None) => Err(invalid("prior initialization needs a mask")),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ThresholdConfig {
    pub kind: ThresholdKind,
    pub k_sigma: f64,
    pub top_fraction: f64,
    pub window_fraction: f64,
}

impl Default for ThresholdConfig {
    fn default() -> Self {
        let s = ThresholdStrategy::otsu();
        ThresholdConfig {
            kind: s.kind,
            k_sigma: s.k_sigma,
            top_fraction: s.top_fraction,
            window_fraction: s.window_fraction,
        }
    }
}

impl ThresholdConfig {
    pub fn strategy(&self, mask: Option<BinaryMask>) -> ThresholdStrategy {
        ThresholdStrategy {
            kind: self.kind,
            k_sigma: self.k_sigma,
            top_fraction: self.top_fraction,
            window_fraction: self.window_fraction,
            mask,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct MetricsConfig {
    #[serde(flatten)]
    pub params: MetricParams,
    /// Components outside `[min, max]` pixels are dropped before scoring.
    pub area_range: Option<(usize, usize)>,
}

impl Default for MetricsConfig {
    fn default() -> Self {
        MetricsConfig {
            params: MetricParams::default(),
            area_range: None,
        }
    }
}

/// Which axis the worker pool parallelizes during inference.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ParallelAxis {
    #[default]
    Levels,
    Images,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PipelineConfig {
    pub architecture: PathBuf,
    #[serde(default)]
    pub decoder: DecoderParams,
    #[serde(default)]
    pub init: InitStrategy,
    #[serde(default)]
    pub evolution: EvolutionConfig,
    #[serde(default)]
    pub threshold: ThresholdConfig,
    #[serde(default)]
    pub merge: TrainConfig,
    #[serde(default)]
    pub metrics: MetricsConfig,
    #[serde(default = "default_output_root")]
    pub output_root: PathBuf,
    /// Per-image inference budget; overruns are reported, not fatal.
    #[serde(default)]
    pub wall_time_budget_ms: Option<u64>,
    #[serde(default)]
    pub parallel_axis: ParallelAxis,
    #[serde(default)]
    pub seed: u64,
}

fn default_output_root() -> PathBuf {
    PathBuf::from("out")
}

impl PipelineConfig {
    /// Dilation init, LAB-guided smoothing, Otsu on the probability map and
    /// the `[1000, 9000]` area filter.
    pub fn parasite(architecture: impl Into<PathBuf>) -> Self {
        PipelineConfig {
            architecture: architecture.into(),
            decoder: DecoderParams::default(),
            init: InitStrategy::default(),
            evolution: EvolutionConfig::parasite(),
            threshold: ThresholdConfig::default(),
            merge: TrainConfig::default(),
            metrics: MetricsConfig {
                params: MetricParams::default(),
                area_range: Some((1000, 9000)),
            },
            output_root: default_output_root(),
            wall_time_budget_ms: Some(3000),
            parallel_axis: ParallelAxis::Levels,
            seed: 0,
        }
    }

    /// Brain-mask prior, intensity smoothing, histogram-peak threshold and
    /// the `[100, 20000]` area filter.
    pub fn brain(architecture: impl Into<PathBuf>) -> Self {
        let base = Self::parasite(architecture);
        PipelineConfig {
            init: InitStrategy::Prior,
            evolution: EvolutionConfig::brain(),
            threshold: ThresholdConfig {
                kind: ThresholdKind::HistogramPeak,
                ..ThresholdConfig::default()
            },
            metrics: MetricsConfig {
                area_range: Some((100, 20000)),
                ..base.metrics
            },
            ..base
        }
    }

    /// Parses a config; relative paths resolve against `base`.
    pub fn parse(text: &str, base: &Path) -> Result<Self, PipelineError> {
        let mut cfg: PipelineConfig = serde_json::from_str(text).map_err(|e| PipelineError::Config(e.into()))?;
        if cfg.architecture.is_relative() {
            cfg.architecture = base.join(&cfg.architecture);
        }
        if cfg.output_root.is_relative() {
            cfg.output_root = base.join(&cfg.output_root);
        }
        cfg.validate().map_err(PipelineError::Config)?;
        Ok(cfg)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, PipelineError> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| PipelineError::Config(Error::io(path, e)))?;
        Self::parse(&text, path.parent().unwrap_or(Path::new(".")))
    }

    pub fn save(&self, path: impl AsRef<Path>) -> crate::Result<()> {
        let path = path.as_ref();
        std::fs::write(path, serde_json::to_string_pretty(self)?).map_err(|e| Error::io(path, e))
    }

    pub fn validate(&self) -> crate::Result<()> {
        self.decoder.validate()?;
        self.evolution.validate()?;
        self.threshold.strategy(None).validate()?;
        self.merge.validate()?;
        if let Some((lo, hi)) = self.metrics.area_range {
            if lo > hi {
                return Err(invalid(format!("area range [{lo}, {hi}] is empty")));
            }
        }
        Ok(())
    }

    pub fn load_architecture(&self) -> Result<Architecture, PipelineError> {
        let arch = load_architecture(&self.architecture).map_err(PipelineError::Config)?;
        arch.validate().map_err(PipelineError::Config)?;
        if self.evolution.smoothing_rule == SmoothingRule::Brain && arch.input_channels != 1 {
            return Err(PipelineError::Config(invalid(
                "the brain smoothing rule needs single-channel images",
            )));
        }
        Ok(arch)
    }

    /// Checks the strategy choices against the entries they will run on.
    pub fn check_entries(&self, entries: &[&ManifestEntry]) -> Result<(), PipelineError> {
        if self.init == InitStrategy::Prior {
            if let Some(e) = entries.iter().find(|e| e.mask_path.is_none()) {
                return Err(PipelineError::Config(invalid(format!(
                    "prior initialization needs a mask but '{}' has none",
                    e.image_id
                ))));
            }
        }
        Ok(())
    }
}
