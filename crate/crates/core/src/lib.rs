//! Multimodal training-data preprocessing.
//!
//! The data path runs tile -> filter -> mix -> pack:
//!
//! * [`geometry`] picks a tile grid for each image and [`raster`] cuts it;
//! * [`tokens`] renders conversations with image placeholders and counts tokens;
//! * [`filter`] routes records to keep, drop or review;
//! * [`mixer`] expands repeat factors into a shuffled epoch;
//! * [`packer`] packs samples into fixed-length sequences under a tile cap;
//! * [`lossweight`] computes per-token loss weights over packed responses.
//!
//! [`pipeline`] wires the stages to JSONL manifests on disk.

pub mod config;
pub mod filter;
pub mod geometry;
pub mod lossweight;
pub mod manifest;
pub mod mixer;
pub mod modality;
pub mod packer;
pub mod pipeline;
pub mod raster;
pub mod seed;
pub mod tokens;

pub use config::PipelineConfig;
pub use filter::scorer::{HttpScorer, HttpScorerConfig, Scorer, StubScorer};
pub use filter::{filter_record, Decision, FilterConfig, FilterVerdict, RuleConfig, Thresholds};
pub use geometry::{
    plan_layout, select_closest_ratio, GridRatio, ImageDims, TileBudget, TileLayout,
};
pub use lossweight::{normalized_weights, ResponseSpan, WeightStrategy};
pub use manifest::ManifestRecord;
pub use mixer::{build_epoch, DatasetConfig, MixturePlan};
pub use modality::Modality;
pub use packer::{PackedSequence, Packer, PackerConfig, SampleUnit, VisualSpan};
pub use raster::{AugmentPolicy, RasterImage};
pub use tokens::{RenderedSample, TokenBudget, Turn};
