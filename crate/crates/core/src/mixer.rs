//! Dataset mixture: per-dataset configuration, repeat-factor expansion and
//! seeded epoch construction.
//!
//! A repeat factor `r` in `(0, 4]` includes every sample `floor(r)` times plus
//! once more with probability `frac(r)`, so a dataset contributes `r * size`
//! draws in expectation.

use crate::modality::Modality;
use crate::seed;
use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};
use std::collections::{BTreeMap, HashSet};
use std::path::{Path, PathBuf};
use thiserror::Error;

pub const MAX_REPEAT_FACTOR: f64 = 4.0;
pub const DEFAULT_FRAME_RANGE: [u32; 2] = [8, 32];
pub const DEFAULT_IMAGE_N_MAX: u32 = 12;
pub const MIXTURE_SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum MixError {
    #[error("dataset {name}: repeat factor {r} outside (0, 4]")]
    RepeatRange { name: String, r: f64 },
    #[error("dataset {name}: video datasets cannot enable augmentation")]
    VideoAugmentation { name: String },
    #[error("dataset {name}: video datasets need n_max = 1, got {n_max}")]
    VideoTiles { name: String, n_max: u32 },
    #[error("dataset {name}: n_max must be at least 1")]
    ZeroTiles { name: String },
    #[error("dataset {name}: invalid frame range [{min}, {max}]")]
    FrameRange { name: String, min: u32, max: u32 },
    #[error("dataset {name}: frame_range only applies to video datasets")]
    FrameRangeOnNonVideo { name: String },
    #[error("dataset {name}: {reason}")]
    Dataset { name: String, reason: String },
    #[error("duplicate dataset name {0}")]
    DuplicateName(String),
    #[error("unsupported mixture schema version {0}")]
    Version(u32),
    #[error("{path}: {reason}")]
    File { path: String, reason: String },
}

impl MixError {
    pub fn code(&self) -> &'static str {
        match self {
            MixError::RepeatRange { .. } => "mix.repeat_range",
            MixError::VideoAugmentation { .. } => "mix.video_augmentation",
            MixError::VideoTiles { .. } => "mix.video_tiles",
            MixError::ZeroTiles { .. } => "mix.zero_tiles",
            MixError::FrameRange { .. } => "mix.frame_range",
            MixError::FrameRangeOnNonVideo { .. } => "mix.frame_range_non_video",
            MixError::Dataset { .. } => "mix.dataset",
            MixError::DuplicateName(_) => "mix.duplicate_name",
            MixError::Version(_) => "mix.version",
            MixError::File { .. } => "mix.file",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetConfig {
    pub name: String,
    pub modality: Modality,
    #[serde(default)]
    pub augmentation: bool,
    /// Defaults to 1 for video and 12 otherwise.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub n_max: Option<u32>,
    #[serde(default = "one")]
    pub repeat_factor: f64,
    /// Video only; defaults to `[8, 32]`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub frame_range: Option<[u32; 2]>,
    /// Manifest path, relative to the mixture file.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub path: Option<PathBuf>,
    /// Sample count; read from the manifest when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub size: Option<usize>,
}

fn one() -> f64 {
    1.0
}

impl DatasetConfig {
    pub fn new(name: impl Into<String>, modality: Modality) -> Self {
        Self {
            name: name.into(),
            modality,
            augmentation: matches!(modality, Modality::SingleImage | Modality::MultiImage),
            n_max: None,
            repeat_factor: 1.0,
            frame_range: None,
            path: None,
            size: None,
        }
    }

    pub fn with_repeat(mut self, r: f64) -> Self {
        self.repeat_factor = r;
        self
    }

    pub fn n_max(&self) -> u32 {
        self.n_max.unwrap_or(match self.modality {
            Modality::Video => 1,
            _ => DEFAULT_IMAGE_N_MAX,
        })
    }

    /// Inclusive frame-count range; `None` for non-video datasets.
    pub fn frames(&self) -> Option<(u32, u32)> {
        match self.modality {
            Modality::Video => {
                let [a, b] = self.frame_range.unwrap_or(DEFAULT_FRAME_RANGE);
                Some((a, b))
            }
            _ => None,
        }
    }

    pub fn validate(&self) -> Result<(), MixError> {
        let name = || self.name.clone();
        let r = self.repeat_factor;
        if !(r > 0.0 && r <= MAX_REPEAT_FACTOR) {
            return Err(MixError::RepeatRange { name: name(), r });
        }
        if self.n_max() == 0 {
            return Err(MixError::ZeroTiles { name: name() });
        }
        if self.modality == Modality::Video {
            if self.augmentation {
                return Err(MixError::VideoAugmentation { name: name() });
            }
            if self.n_max() != 1 {
                return Err(MixError::VideoTiles {
                    name: name(),
                    n_max: self.n_max(),
                });
            }
            let (min, max) = self.frames().expect("video");
            if min == 0 || min > max {
                return Err(MixError::FrameRange {
                    name: name(),
                    min,
                    max,
                });
            }
        } else if self.frame_range.is_some() {
            return Err(MixError::FrameRangeOnNonVideo { name: name() });
        }
        Ok(())
    }
}

/// Sample indices drawn from one dataset, each repeated `floor(r)` times
/// plus a Bernoulli(`frac(r)`) extra copy decided per index.
pub fn expand_repeats(
    cfg: &DatasetConfig,
    dataset_size: usize,
    seed: u64,
) -> Result<Vec<usize>, MixError> {
    cfg.validate()?;
    if dataset_size == 0 {
        return Err(MixError::Dataset {
            name: cfg.name.clone(),
            reason: "dataset is empty".into(),
        });
    }
    let whole = cfg.repeat_factor.floor() as usize;
    let frac = cfg.repeat_factor - cfg.repeat_factor.floor();
    let dataset_seed = seed::derive(seed, cfg.name.as_bytes());
    let mut out = Vec::with_capacity((dataset_size as f64 * cfg.repeat_factor).ceil() as usize);
    for index in 0..dataset_size {
        let mut copies = whole;
        if frac > 0.0 {
            let mut rng = seed::rng(seed::derive_keys(dataset_seed, &[index as u64]));
            if rng.random::<f64>() < frac {
                copies += 1;
            }
        }
        out.extend(std::iter::repeat_n(index, copies));
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Draw {
    pub dataset: String,
    pub index: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub frame_count: Option<u32>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MixturePlan {
    pub seed: u64,
    pub draws: Vec<Draw>,
}

impl MixturePlan {
    /// One JSON object per draw, newline-terminated.
    pub fn to_jsonl(&self) -> String {
        let mut s = String::new();
        for d in &self.draws {
            s.push_str(&serde_json::to_string(d).expect("draws serialize"));
            s.push('\n');
        }
        s
    }

    pub fn counts(&self) -> BTreeMap<&str, usize> {
        let mut m = BTreeMap::new();
        for d in &self.draws {
            *m.entry(d.dataset.as_str()).or_default() += 1;
        }
        m
    }
}

/// Expands every dataset, concatenates in config order and shuffles the
/// whole epoch. Video draws get a frame count uniform over the dataset's
/// frame range.
pub fn build_epoch(
    datasets: &[(DatasetConfig, usize)],
    seed: u64,
) -> Result<MixturePlan, MixError> {
    let mut names = HashSet::new();
    for (cfg, _) in datasets {
        cfg.validate()?;
        if !names.insert(cfg.name.as_str()) {
            return Err(MixError::DuplicateName(cfg.name.clone()));
        }
    }
    let repeat_seed = seed::derive(seed, b"repeat");
    let mut frame_rng = seed::rng(seed::derive(seed, b"frames"));
    let mut draws = Vec::new();
    for (cfg, size) in datasets {
        let frames = cfg.frames();
        for index in expand_repeats(cfg, *size, repeat_seed)? {
            draws.push(Draw {
                dataset: cfg.name.clone(),
                index,
                frame_count: frames.map(|(a, b)| frame_rng.random_range(a..=b)),
            });
        }
    }
    draws.shuffle(&mut seed::rng(seed::derive(seed, b"shuffle")));
    Ok(MixturePlan { seed, draws })
}

/// Per-dataset totals fed to [`mixture_stats`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct DatasetTotals {
    pub modality: Modality,
    pub samples: u64,
    pub tokens: u64,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct ModalityShare {
    pub samples: u64,
    pub tokens: u64,
    pub sample_pct: f64,
    pub token_pct: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct MixtureStats {
    pub total_samples: u64,
    pub total_tokens: u64,
    pub by_modality: BTreeMap<Modality, ModalityShare>,
}

pub fn mixture_stats(totals: &[DatasetTotals]) -> MixtureStats {
    let mut by_modality: BTreeMap<Modality, ModalityShare> = Modality::ALL
        .iter()
        .map(|m| (*m, ModalityShare::default()))
        .collect();
    for t in totals {
        let e = by_modality.entry(t.modality).or_default();
        e.samples += t.samples;
        e.tokens += t.tokens;
    }
    let total_samples: u64 = by_modality.values().map(|s| s.samples).sum();
    let total_tokens: u64 = by_modality.values().map(|s| s.tokens).sum();
    let pct = |part: u64, whole: u64| {
        if whole == 0 {
            0.0
        } else {
            100.0 * part as f64 / whole as f64
        }
    };
    for s in by_modality.values_mut() {
        s.sample_pct = pct(s.samples, total_samples);
        s.token_pct = pct(s.tokens, total_tokens);
    }
    MixtureStats {
        total_samples,
        total_tokens,
        by_modality,
    }
}

/// Mixture configuration file (TOML):
///
/// ```toml
/// version = 1
///
/// [[dataset]]
/// name = "docvqa"
/// path = "docvqa.jsonl"
/// modality = "single_image"
/// augmentation = true
/// n_max = 24
/// repeat_factor = 0.5
///
/// [[dataset]]
/// name = "clips"
/// path = "clips.jsonl"
/// modality = "video"
/// frame_range = [8, 32]
/// ```
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MixtureFile {
    pub version: u32,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    #[serde(rename = "dataset", default)]
    pub datasets: Vec<DatasetConfig>,
}

impl MixtureFile {
    pub fn from_toml_str(s: &str) -> Result<Self, MixError> {
        let file: MixtureFile = toml::from_str(s).map_err(|e| MixError::File {
            path: "<mixture>".into(),
            reason: e.to_string(),
        })?;
        if file.version != MIXTURE_SCHEMA_VERSION {
            return Err(MixError::Version(file.version));
        }
        for d in &file.datasets {
            d.validate()?;
        }
        Ok(file)
    }

    pub fn load(path: &Path) -> Result<Self, MixError> {
        let text = std::fs::read_to_string(path).map_err(|e| MixError::File {
            path: path.display().to_string(),
            reason: e.to_string(),
        })?;
        Self::from_toml_str(&text).map_err(|e| match e {
            MixError::File { reason, .. } => MixError::File {
                path: path.display().to_string(),
                reason,
            },
            other => other,
        })
    }
}
