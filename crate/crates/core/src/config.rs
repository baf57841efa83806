//! Pipeline configuration file (TOML, schema version 1).
//!
//! ```toml
//! version = 1
//! seed = 42
//! mixture = "mixture.toml"
//!
//! [tile]
//! n_min = 1
//! n_max = 12
//! tile_side = 448
//! thumbnail = true
//!
//! [tokens]
//! tokens_per_tile = 256
//! context_limit = 16384
//!
//! [packer]
//! l_max = 16384
//! t_max = 48
//! buffer_capacity = 64
//!
//! [augment]
//! enabled = true
//! quality_min = 75
//! quality_max = 100
//!
//! [filter.rules]
//! max_zero_run = 256
//!
//! [filter.thresholds]
//! quality = 7.0
//! repetition = 3.0
//!
//! [scorer]
//! url = "http://127.0.0.1:8000/score"
//! ```
//!
//! Every section is optional. Relative paths resolve against the config
//! file's directory.

use crate::filter::scorer::HttpScorerConfig;
use crate::filter::FilterConfig;
use crate::geometry::{TileBudget, DEFAULT_TILE_SIDE};
use crate::packer::PackerConfig;
use crate::raster::AugmentPolicy;
use crate::seed;
use crate::tokens::TokenBudget;
use serde::{Deserialize, Serialize};
use std::path::{Path, PathBuf};
use thiserror::Error;

pub const CONFIG_SCHEMA_VERSION: u32 = 1;
pub const DEFAULT_SEED: u64 = 0;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("{path}: {reason}")]
    Read { path: String, reason: String },
    #[error("unsupported config version {0}")]
    Version(u32),
    #[error("invalid [{section}]: {reason}")]
    Invalid {
        section: &'static str,
        reason: String,
    },
}

impl ConfigError {
    pub fn code(&self) -> &'static str {
        match self {
            ConfigError::Read { .. } => "config.read",
            ConfigError::Version(_) => "config.version",
            ConfigError::Invalid { .. } => "config.invalid",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TileSection {
    pub n_min: u32,
    pub n_max: u32,
    pub tile_side: u32,
    pub thumbnail: bool,
}

impl Default for TileSection {
    fn default() -> Self {
        Self {
            n_min: 1,
            n_max: 12,
            tile_side: DEFAULT_TILE_SIDE,
            thumbnail: true,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AugmentSection {
    pub enabled: bool,
    pub quality_min: u8,
    pub quality_max: u8,
}

impl Default for AugmentSection {
    fn default() -> Self {
        let d = AugmentPolicy::default();
        Self {
            enabled: d.enabled,
            quality_min: d.quality_min,
            quality_max: d.quality_max,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    pub version: u32,
    pub seed: u64,
    pub tile: TileSection,
    pub tokens: TokenBudget,
    pub packer: PackerConfig,
    pub augment: AugmentSection,
    pub filter: FilterConfig,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub scorer: Option<HttpScorerConfig>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub mixture: Option<PathBuf>,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            version: CONFIG_SCHEMA_VERSION,
            seed: DEFAULT_SEED,
            tile: TileSection::default(),
            tokens: TokenBudget::default(),
            packer: PackerConfig::default(),
            augment: AugmentSection::default(),
            filter: FilterConfig::default(),
            scorer: None,
            mixture: None,
        }
    }
}

impl PipelineConfig {
    pub fn from_toml_str(s: &str) -> Result<Self, ConfigError> {
        let cfg: PipelineConfig = toml::from_str(s).map_err(|e| ConfigError::Read {
            path: "<config>".into(),
            reason: e.to_string(),
        })?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Reads and validates a config file, resolving `mixture` against its
    /// directory.
    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|e| ConfigError::Read {
            path: path.display().to_string(),
            reason: e.to_string(),
        })?;
        let mut cfg = Self::from_toml_str(&text).map_err(|e| match e {
            ConfigError::Read { reason, .. } => ConfigError::Read {
                path: path.display().to_string(),
                reason,
            },
            other => other,
        })?;
        if let (Some(m), Some(dir)) = (&cfg.mixture, path.parent()) {
            if m.is_relative() {
                cfg.mixture = Some(dir.join(m));
            }
        }
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        if self.version != CONFIG_SCHEMA_VERSION {
            return Err(ConfigError::Version(self.version));
        }
        let invalid = |section, reason: String| ConfigError::Invalid { section, reason };
        self.tile_budget()
            .map_err(|e| invalid("tile", e.to_string()))?;
        self.tokens
            .validate()
            .map_err(|e| invalid("tokens", e.to_string()))?;
        self.packer
            .validate()
            .map_err(|e| invalid("packer", e.to_string()))?;
        self.augment_policy()
            .validate()
            .map_err(|e| invalid("augment", e.to_string()))?;
        self.filter
            .rules
            .validate()
            .map_err(|e| invalid("filter", e.to_string()))?;
        let t = self.filter.thresholds;
        if !(0.0..=10.0).contains(&t.quality) || !(0.0..=10.0).contains(&t.repetition) {
            return Err(invalid("filter", "thresholds must lie in [0, 10]".into()));
        }
        Ok(())
    }

    pub fn tile_budget(&self) -> Result<TileBudget, crate::geometry::GeometryError> {
        TileBudget::new(self.tile.n_min, self.tile.n_max, self.tile.tile_side)
    }

    /// Augmentation policy seeded from the `augment` stage seed.
    pub fn augment_policy(&self) -> AugmentPolicy {
        AugmentPolicy {
            enabled: self.augment.enabled,
            quality_min: self.augment.quality_min,
            quality_max: self.augment.quality_max,
            seed: self.stage_seed("augment"),
        }
    }

    pub fn stage_seed(&self, stage: &str) -> u64 {
        seed::stage(self.seed, stage)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_file_gives_defaults() {
        let cfg = PipelineConfig::from_toml_str("version = 1").unwrap();
        assert_eq!(cfg, PipelineConfig::default());
        assert_eq!(cfg.packer.l_max, 16384);
        assert_eq!(cfg.packer.t_max, 48);
        assert_eq!(cfg.tokens.tokens_per_tile, 256);
        assert_eq!(cfg.tile_budget().unwrap().n_max(), 12);
    }

    #[test]
    fn parses_sections() {
        let cfg = PipelineConfig::from_toml_str(
            r#"
version = 1
seed = 7
mixture = "mix.toml"
[tile]
n_max = 6
tile_side = 32
[packer]
l_max = 4096
[filter.thresholds]
quality = 5.0
[scorer]
url = "http://localhost:1/score"
"#,
        )
        .unwrap();
        assert_eq!(cfg.seed, 7);
        assert_eq!(cfg.tile.n_max, 6);
        assert_eq!(cfg.packer.l_max, 4096);
        assert_eq!(cfg.packer.t_max, 48);
        assert_eq!(cfg.filter.thresholds.quality, 5.0);
        assert_eq!(cfg.scorer.unwrap().retries, 2);
    }

    #[test]
    fn rejects_bad_values() {
        let err = PipelineConfig::from_toml_str("version = 2").unwrap_err();
        assert_eq!(err.code(), "config.version");
        let err =
            PipelineConfig::from_toml_str("version = 1\n[tile]\nn_min = 5\nn_max = 2").unwrap_err();
        assert_eq!(err.code(), "config.invalid");
        let err = PipelineConfig::from_toml_str(
            "version = 1\n[augment]\nquality_min = 90\nquality_max = 80",
        )
        .unwrap_err();
        assert!(err.to_string().contains("[augment]"));
        let err = PipelineConfig::from_toml_str("version = 1\nbogus = 1").unwrap_err();
        assert_eq!(err.code(), "config.read");
    }

    #[test]
    fn stage_seeds_differ() {
        let cfg = PipelineConfig::default();
        assert_ne!(cfg.stage_seed("mix"), cfg.stage_seed("augment"));
        assert_eq!(cfg.augment_policy().seed, cfg.stage_seed("augment"));
    }

    #[test]
    fn load_resolves_mixture_path() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("c.toml");
        std::fs::write(&p, "version = 1\nmixture = \"m.toml\"\n").unwrap();
        let cfg = PipelineConfig::load(&p).unwrap();
        assert_eq!(cfg.mixture.unwrap(), dir.path().join("m.toml"));
        assert_eq!(
            PipelineConfig::load(&dir.path().join("missing.toml"))
                .unwrap_err()
                .code(),
            "config.read"
        );
    }
}
