//! Declarative experiment configuration, read from TOML or JSON.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::alignment::AlignmentMode;
use crate::error::{F3Error, Result};
use crate::federation::{TrainConfig, VariantConfig, VariantId};
use crate::graphsampler::ReferenceDistribution;
use crate::localmodels::PretrainConfig;
use crate::synthdata::SyntheticSpec;

pub const CONFIG_VERSION: u32 = 1;

/// Where the samples come from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum DataSource {
    /// Generated per seed; the spec's own seed is replaced by the run seed.
    Synthetic(SyntheticSpec),
    /// A dataset file written by `gen-data`; relative paths resolve
    /// against the config file's directory.
    File(PathBuf),
}

impl Default for DataSource {
    fn default() -> Self {
        DataSource::Synthetic(SyntheticSpec::default())
    }
}

/// Relaxed edge sampling used while training learned graphs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SamplerConfig {
    pub tau: f64,
    pub reference: ReferenceDistribution,
    /// Graph samples averaged per optimization step.
    pub samples_per_step: usize,
    pub symmetric: bool,
}

impl Default for SamplerConfig {
    fn default() -> Self {
        SamplerConfig {
            tau: 0.5,
            reference: ReferenceDistribution::default(),
            samples_per_step: 1,
            symmetric: true,
        }
    }
}

fn default_version() -> u32 {
    CONFIG_VERSION
}

fn default_alignment() -> AlignmentMode {
    AlignmentMode::Soft
}

fn default_seeds() -> Vec<u64> {
    vec![0]
}

fn default_bins() -> usize {
    20
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    #[serde(default = "default_version")]
    pub version: u32,
    #[serde(default)]
    pub data: DataSource,
    pub variants: Vec<VariantConfig>,
    #[serde(default)]
    pub sampler: SamplerConfig,
    /// Alignment of the aligned variants (K, L, M): `soft` or `hard`.
    #[serde(default = "default_alignment")]
    pub alignment: AlignmentMode,
    #[serde(default)]
    pub pretrain: PretrainConfig,
    #[serde(default)]
    pub training: TrainConfig,
    #[serde(default = "default_seeds")]
    pub seeds: Vec<u64>,
    /// Run directory; the command line may override it.
    #[serde(default)]
    pub output: Option<PathBuf>,
    #[serde(default = "default_bins")]
    pub entropy_bins: usize,
}

impl ExperimentConfig {
    /// Defaults with the given variants.
    pub fn with_variants(variants: Vec<VariantConfig>) -> Self {
        ExperimentConfig {
            version: CONFIG_VERSION,
            data: DataSource::default(),
            variants,
            sampler: SamplerConfig::default(),
            alignment: default_alignment(),
            pretrain: PretrainConfig::default(),
            training: TrainConfig::default(),
            seeds: default_seeds(),
            output: None,
            entropy_bins: default_bins(),
        }
    }

    /// Parses TOML, or JSON when `json` is set.
    pub fn parse(text: &str, json: bool) -> Result<Self> {
        let cfg: ExperimentConfig = if json {
            serde_json::from_str(text).map_err(|e| F3Error::Config(e.to_string()))?
        } else {
            toml::from_str(text).map_err(|e| F3Error::Config(e.to_string()))?
        };
        Ok(cfg)
    }

    /// Reads `path` (JSON when the extension is `.json`) and resolves a
    /// relative dataset path against the file's directory.
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| F3Error::Config(format!("cannot read {}: {e}", path.display())))?;
        let json = path.extension().is_some_and(|e| e == "json");
        let mut cfg = Self::parse(&text, json)?;
        if let DataSource::File(p) = &mut cfg.data {
            if p.is_relative() {
                if let Some(dir) = path.parent() {
                    *p = dir.join(&*p);
                }
            }
        }
        Ok(cfg)
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string_pretty(self).map_err(|e| F3Error::Config(e.to_string()))
    }

    /// Every check that can run before training starts.
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(F3Error::Config(m));
        if self.version != CONFIG_VERSION {
            return bad(format!(
                "config version {} is not supported (expected {CONFIG_VERSION})",
                self.version
            ));
        }
        if self.variants.is_empty() {
            return bad("no variants to run".into());
        }
        if self.seeds.is_empty() {
            return bad("no seeds".into());
        }
        if !(self.sampler.tau > 0.0 && self.sampler.tau.is_finite()) {
            return bad(format!("sampler tau must be positive, got {}", self.sampler.tau));
        }
        if self.sampler.samples_per_step == 0 {
            return bad("samples_per_step must be at least 1".into());
        }
        if !matches!(self.alignment, AlignmentMode::Soft | AlignmentMode::Hard) {
            return bad("alignment of the aligned variants must be soft or hard".into());
        }
        let t = &self.training;
        if t.learning_rates.is_empty() || t.learning_rates.iter().any(|&lr| !(lr > 0.0 && lr.is_finite())) {
            return bad("learning_rates must be a nonempty list of positive numbers".into());
        }
        if t.patience == 0 || t.hidden == 0 {
            return bad("patience and hidden must be positive".into());
        }
        if !(t.edge_lr_scale >= 0.0) || !(t.local_lr_scale >= 0.0) {
            return bad("learning-rate scales must be non-negative".into());
        }
        if !(self.pretrain.lr > 0.0) {
            return bad("pretrain lr must be positive".into());
        }
        if self.entropy_bins == 0 {
            return bad("entropy_bins must be positive".into());
        }
        let clients = match &self.data {
            DataSource::Synthetic(spec) => {
                spec.validate()?;
                Some(spec.clients)
            }
            DataSource::File(p) => {
                if !p.exists() {
                    return bad(format!("dataset file {} does not exist", p.display()));
                }
                None
            }
        };
        for v in &self.variants {
            v.validate(clients.unwrap_or(usize::MAX))?;
        }
        Ok(())
    }

    pub fn has_variant(&self, id: VariantId) -> bool {
        self.variants.iter().any(|v| v.id == id)
    }
}
