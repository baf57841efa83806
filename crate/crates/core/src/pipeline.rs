//! Stage runners reading and writing JSONL manifests on disk.
//!
//! | stage  | input               | outputs                                                    |
//! |--------|---------------------|------------------------------------------------------------|
//! | tile   | manifest            | `tiled.jsonl`, `tile_errors.jsonl`, `tiles/`               |
//! | filter | manifest            | `kept.jsonl`, `dropped.jsonl`, `review.jsonl`, `filter_summary.json` |
//! | mix    | mixture TOML        | `plan.jsonl`, `epoch.jsonl`, `mix_errors.jsonl`            |
//! | pack   | manifest            | `packed.jsonl`, `pack_stats.json`                          |
//! | stats  | manifest            | `stats.json`                                               |
//!
//! Record-level failures are written out and counted; they never abort a
//! run. Output order follows input order regardless of the worker count.

use crate::config::{ConfigError, PipelineConfig};
use crate::filter::scorer::{HttpScorer, Scorer};
use crate::filter::{filter_line, route_outcomes, FilterSummary};
use crate::geometry::{allocate_multi_image, plan_layout, GeometryError, TileBudget, TileLayout};
use crate::manifest::{
    parse_record, read_lines, write_jsonl, ManifestError, ManifestRecord, TiledImage, Tiling,
};
use crate::mixer::{build_epoch, DatasetConfig, MixError, MixtureFile};
use crate::modality::Modality;
use crate::packer::{PackError, PackedSequence, Packer, PackerConfig, PackerStats, SampleUnit};
use crate::raster::{
    jpeg_compress_augment, load_image, make_thumbnail, resize_image, save_png, split_tiles,
    AugmentPolicy, RasterError, JPEG_CHROMA_SUBSAMPLING, RESIZE_KERNEL,
};
use crate::seed;
use crate::tokens::{
    estimate_sample_tokens, render_multi_image, render_single_image, render_text, render_video,
    visual_tokens_for, FormatError, RenderedSample, TokenBudget, WhitespaceCounter,
    CHAT_TEMPLATE_VERSION,
};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::collections::HashMap;
use std::fs::File;
use std::io::{BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use thiserror::Error;

pub const TILED_MANIFEST: &str = "tiled.jsonl";
pub const TILE_ERRORS: &str = "tile_errors.jsonl";
pub const TILE_DIR: &str = "tiles";
pub const KEPT_MANIFEST: &str = "kept.jsonl";
pub const DROPPED_MANIFEST: &str = "dropped.jsonl";
pub const REVIEW_MANIFEST: &str = "review.jsonl";
pub const FILTER_SUMMARY: &str = "filter_summary.json";
pub const PLAN_FILE: &str = "plan.jsonl";
pub const EPOCH_MANIFEST: &str = "epoch.jsonl";
pub const MIX_ERRORS: &str = "mix_errors.jsonl";
pub const PACKED_MANIFEST: &str = "packed.jsonl";
pub const PACK_STATS: &str = "pack_stats.json";
pub const STATS_REPORT: &str = "stats.json";

/// Errors that stop a stage before or while writing outputs.
#[derive(Debug, Error)]
pub enum PipelineError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Mix(#[from] MixError),
    #[error(transparent)]
    Pack(#[from] PackError),
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("{0}")]
    Usage(String),
}

impl PipelineError {
    pub fn code(&self) -> &'static str {
        match self {
            PipelineError::Config(e) => e.code(),
            PipelineError::Mix(e) => e.code(),
            PipelineError::Pack(e) => e.code(),
            PipelineError::Io { .. } => "pipeline.io",
            PipelineError::Usage(_) => "pipeline.usage",
        }
    }
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> PipelineError + '_ {
    move |source| PipelineError::Io {
        path: path.display().to_string(),
        source,
    }
}

fn manifest_err(path: &Path) -> impl FnOnce(ManifestError) -> PipelineError + '_ {
    move |e| match e {
        ManifestError::Io(source) => PipelineError::Io {
            path: path.display().to_string(),
            source,
        },
        other => PipelineError::Usage(other.to_string()),
    }
}

/// A record that could not be processed.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RecordError {
    pub line: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub id: Option<String>,
    pub code: String,
    pub message: String,
}

impl RecordError {
    fn new(line: usize, id: Option<&str>, code: &str, message: impl Into<String>) -> Self {
        Self {
            line,
            id: id.map(str::to_owned),
            code: code.to_owned(),
            message: message.into(),
        }
    }

    fn from_manifest(line: usize, e: &ManifestError) -> Self {
        let id = match e {
            ManifestError::Invalid { id, .. } => Some(id.as_str()),
            _ => None,
        };
        Self::new(line, id, e.code(), e.to_string())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct StageReport {
    pub stage: String,
    pub records: u64,
    pub record_errors: u64,
    pub outputs: Vec<PathBuf>,
}

impl StageReport {
    /// 0 when every record went through, 1 otherwise.
    pub fn exit_code(&self) -> i32 {
        i32::from(self.record_errors > 0)
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct RunOptions {
    /// Worker threads; 0 uses one per core.
    pub workers: usize,
}

impl RunOptions {
    fn pool(&self) -> Result<rayon::ThreadPool, PipelineError> {
        rayon::ThreadPoolBuilder::new()
            .num_threads(self.workers)
            .build()
            .map_err(|e| PipelineError::Usage(format!("cannot start worker pool: {e}")))
    }
}

fn read_manifest(path: &Path) -> Result<Vec<(usize, String)>, PipelineError> {
    let file = File::open(path).map_err(io_err(path))?;
    read_lines(BufReader::new(file)).map_err(manifest_err(path))
}

fn create_dir(path: &Path) -> Result<(), PipelineError> {
    std::fs::create_dir_all(path).map_err(io_err(path))
}

fn write_lines<T: Serialize>(
    path: &Path,
    items: impl IntoIterator<Item = T>,
) -> Result<(), PipelineError> {
    let file = File::create(path).map_err(io_err(path))?;
    write_jsonl(BufWriter::new(file), items).map_err(manifest_err(path))
}

fn write_raw_lines<'a>(
    path: &Path,
    lines: impl IntoIterator<Item = &'a str>,
) -> Result<(), PipelineError> {
    let file = File::create(path).map_err(io_err(path))?;
    let mut w = BufWriter::new(file);
    for l in lines {
        w.write_all(l.as_bytes()).map_err(io_err(path))?;
        w.write_all(b"\n").map_err(io_err(path))?;
    }
    w.flush().map_err(io_err(path))
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), PipelineError> {
    let mut text = serde_json::to_string_pretty(value).expect("reports serialize");
    text.push('\n');
    std::fs::write(path, text).map_err(io_err(path))
}

fn base_dir(path: &Path) -> PathBuf {
    path.parent().map(Path::to_path_buf).unwrap_or_default()
}

/// Per-dataset settings looked up through a record's `dataset` field.
fn dataset_index(cfg: &PipelineConfig) -> Result<HashMap<String, DatasetConfig>, PipelineError> {
    let Some(path) = &cfg.mixture else {
        return Ok(HashMap::new());
    };
    let file = MixtureFile::load(path)?;
    Ok(file
        .datasets
        .into_iter()
        .map(|d| (d.name.clone(), d))
        .collect())
}

fn record_dataset<'a>(
    rec: &ManifestRecord,
    index: &'a HashMap<String, DatasetConfig>,
) -> Option<&'a DatasetConfig> {
    rec.extra
        .get("dataset")
        .and_then(|v| v.as_str())
        .and_then(|n| index.get(n))
}

// ---------------------------------------------------------------- tile

struct TileContext<'a> {
    cfg: &'a PipelineConfig,
    budget: TileBudget,
    policy: AugmentPolicy,
    datasets: HashMap<String, DatasetConfig>,
    media_root: PathBuf,
    output: &'a Path,
}

#[derive(Debug)]
struct TileFailure {
    code: &'static str,
    message: String,
}

impl From<RasterError> for TileFailure {
    fn from(e: RasterError) -> Self {
        Self {
            code: e.code(),
            message: e.to_string(),
        }
    }
}

impl From<GeometryError> for TileFailure {
    fn from(e: GeometryError) -> Self {
        Self {
            code: e.code(),
            message: e.to_string(),
        }
    }
}

impl From<FormatError> for TileFailure {
    fn from(e: FormatError) -> Self {
        Self {
            code: e.code(),
            message: e.to_string(),
        }
    }
}

fn safe_name(id: &str) -> String {
    id.chars()
        .map(|c| {
            if c.is_ascii_alphanumeric() || c == '-' || c == '_' {
                c
            } else {
                '_'
            }
        })
        .take(64)
        .collect()
}

/// Layout per image for a record, before any pixels are read.
fn plan_record(
    modality: Modality,
    image_dims: &[crate::geometry::ImageDims],
    budget: &TileBudget,
    thumbnail: bool,
) -> Result<Vec<TileLayout>, TileFailure> {
    Ok(match modality {
        Modality::Text => Vec::new(),
        Modality::SingleImage => image_dims
            .iter()
            .map(|d| plan_layout(*d, budget, thumbnail))
            .collect(),
        Modality::MultiImage => {
            let per = allocate_multi_image(budget.n_max(), image_dims.len() as u32)?;
            let b = TileBudget::new(budget.n_min().min(per), per, budget.tile_side())?;
            image_dims
                .iter()
                .map(|d| plan_layout(*d, &b, thumbnail))
                .collect()
        }
        Modality::Video => vec![TileLayout::single(budget.tile_side())?; image_dims.len()],
    })
}

/// Renders a record from its tiling annotations.
pub fn render_record(
    rec: &ManifestRecord,
    tokens: &TokenBudget,
) -> Result<RenderedSample, FormatError> {
    let layouts: Vec<TileLayout> = rec
        .tiling
        .as_ref()
        .map(|t| t.images.iter().map(|i| i.layout).collect())
        .unwrap_or_default();
    match rec.modality {
        Modality::Text => render_text(&rec.conversations),
        Modality::SingleImage => match layouts.as_slice() {
            [one] => render_single_image(one, &rec.conversations, tokens),
            other => Err(FormatError::ImageCount {
                modality: Modality::SingleImage,
                expected: "exactly 1",
                actual: other.len(),
            }),
        },
        Modality::MultiImage => render_multi_image(&layouts, &rec.conversations, tokens),
        Modality::Video => render_video(&layouts, &rec.conversations, tokens),
    }
}

/// Packer unit for a record: precomputed `token_length` when present,
/// otherwise rendered from its tiling annotations.
pub fn sample_unit(
    rec: &ManifestRecord,
    tokens: &TokenBudget,
) -> Result<SampleUnit, RecordFailure> {
    if let Some(len) = rec.token_length {
        return Ok(
            SampleUnit::new(rec.id.clone(), len, rec.tile_count.unwrap_or(0))
                .with_spans(rec.visual_spans.clone()),
        );
    }
    if rec.modality.has_media() && rec.tiling.is_none() {
        return Err(RecordFailure::new(
            "pipeline.untiled",
            "media record has no tiling annotations",
        ));
    }
    let rendered =
        render_record(rec, tokens).map_err(|e| RecordFailure::new(e.code(), e.to_string()))?;
    estimate_sample_tokens(rec.id.clone(), &rendered, &WhitespaceCounter)
        .map_err(|e| RecordFailure::new(e.code(), e.to_string()))
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RecordFailure {
    pub code: String,
    pub message: String,
}

impl RecordFailure {
    fn new(code: &str, message: impl Into<String>) -> Self {
        Self {
            code: code.to_owned(),
            message: message.into(),
        }
    }
}

fn tile_record(
    mut rec: ManifestRecord,
    line: usize,
    ctx: &TileContext,
) -> Result<ManifestRecord, TileFailure> {
    if rec.modality == Modality::Text {
        return Ok(rec);
    }
    let dataset = record_dataset(&rec, &ctx.datasets);
    let budget = match dataset {
        Some(d) => ctx.budget.with_n_max(d.n_max())?,
        None => ctx.budget,
    };
    let augment =
        ctx.policy.enabled && dataset.map_or(rec.modality != Modality::Video, |d| d.augmentation);

    let originals = rec
        .media
        .iter()
        .map(|m| load_image(&ctx.media_root.join(m)))
        .collect::<Result<Vec<_>, _>>()?;
    let dims: Vec<_> = originals.iter().map(|o| o.dims()).collect();
    let layouts = plan_record(rec.modality, &dims, &budget, ctx.cfg.tile.thumbnail)?;

    let rel_dir = format!("{TILE_DIR}/{line:06}_{}", safe_name(&rec.id));
    let abs_dir = ctx.output.join(&rel_dir);
    std::fs::create_dir_all(&abs_dir).map_err(|e| TileFailure {
        code: "pipeline.io",
        message: format!("{}: {e}", abs_dir.display()),
    })?;
    let record_key = seed::derive(0, rec.id.as_bytes());

    let mut images = Vec::with_capacity(originals.len());
    for (k, (original, layout)) in originals.iter().zip(&layouts).enumerate() {
        let key = seed::derive_keys(record_key, &[k as u64]);
        let (source, quality) = if augment {
            (
                jpeg_compress_augment(original, &ctx.policy, key),
                Some(ctx.policy.draw_quality(key)),
            )
        } else {
            (original.clone(), None)
        };
        let resized = resize_image(&source, layout.resized)?;
        let mut tiles = Vec::with_capacity(layout.tile_count as usize);
        for (t, tile) in split_tiles(&resized, layout)?.iter().enumerate() {
            let rel = format!("{rel_dir}/i{k}_t{t}.png");
            save_png(tile, &ctx.output.join(&rel))?;
            tiles.push(rel);
        }
        let thumbnail = if layout.has_thumbnail {
            let rel = format!("{rel_dir}/i{k}_thumb.png");
            save_png(
                &make_thumbnail(&source, layout.tile_side())?,
                &ctx.output.join(&rel),
            )?;
            Some(rel)
        } else {
            None
        };
        images.push(TiledImage {
            source: rec.media[k].clone(),
            layout: *layout,
            tiles,
            thumbnail,
            visual_tokens: visual_tokens_for(layout, &ctx.cfg.tokens),
            jpeg_quality: quality,
        });
    }

    rec.tiling = Some(Tiling {
        visual_tokens: images.iter().map(|i| i.visual_tokens).sum(),
        images,
        resize_kernel: RESIZE_KERNEL.into(),
        chroma_subsampling: JPEG_CHROMA_SUBSAMPLING.into(),
        chat_template: CHAT_TEMPLATE_VERSION.into(),
    });
    if rec.modality == Modality::Video {
        rec.frame_count = Some(rec.media.len() as u32);
    }
    annotate_tokens(&mut rec, &ctx.cfg.tokens)?;
    Ok(rec)
}

fn annotate_tokens(rec: &mut ManifestRecord, tokens: &TokenBudget) -> Result<(), FormatError> {
    let rendered = render_record(rec, tokens)?;
    let unit = estimate_sample_tokens(rec.id.clone(), &rendered, &WhitespaceCounter)?;
    rec.token_length = Some(unit.token_length);
    rec.tile_count = Some(unit.tile_count);
    rec.visual_spans = unit.visual_spans;
    Ok(())
}

/// Tiles every media record, writing tile PNGs under `output/tiles`.
pub fn run_tile(
    cfg: &PipelineConfig,
    input: &Path,
    output: &Path,
    opts: RunOptions,
) -> Result<StageReport, PipelineError> {
    cfg.validate()?;
    let ctx = TileContext {
        cfg,
        budget: cfg.tile_budget().map_err(|e| ConfigError::Invalid {
            section: "tile",
            reason: e.to_string(),
        })?,
        policy: cfg.augment_policy(),
        datasets: dataset_index(cfg)?,
        media_root: base_dir(input),
        output,
    };
    let lines = read_manifest(input)?;
    create_dir(&output.join(TILE_DIR))?;

    let results: Vec<Result<ManifestRecord, RecordError>> = opts.pool()?.install(|| {
        lines
            .par_iter()
            .map(|(n, line)| {
                let rec = parse_record(*n, line).map_err(|e| RecordError::from_manifest(*n, &e))?;
                let id = rec.id.clone();
                tile_record(rec, *n, &ctx)
                    .map_err(|f| RecordError::new(*n, Some(&id), f.code, f.message))
            })
            .collect()
    });

    let mut ok = Vec::new();
    let mut errors = Vec::new();
    for r in results {
        match r {
            Ok(rec) => ok.push(rec),
            Err(e) => {
                log::warn!("tile: line {}: {}", e.line, e.message);
                errors.push(e);
            }
        }
    }
    let out_manifest = output.join(TILED_MANIFEST);
    let err_manifest = output.join(TILE_ERRORS);
    write_lines(&out_manifest, &ok)?;
    write_lines(&err_manifest, &errors)?;
    Ok(StageReport {
        stage: "tile".into(),
        records: lines.len() as u64,
        record_errors: errors.len() as u64,
        outputs: vec![out_manifest, err_manifest],
    })
}

// ---------------------------------------------------------------- filter

/// HTTP scorer from the `[scorer]` section, if configured.
pub fn build_scorer(cfg: &PipelineConfig) -> Result<Option<Box<dyn Scorer>>, PipelineError> {
    match &cfg.scorer {
        None => Ok(None),
        Some(s) => {
            let scorer = HttpScorer::new(s.clone()).map_err(|e| ConfigError::Invalid {
                section: "scorer",
                reason: e.to_string(),
            })?;
            Ok(Some(Box::new(scorer)))
        }
    }
}

pub fn run_filter(
    cfg: &PipelineConfig,
    input: &Path,
    output: &Path,
    scorer: Option<&dyn Scorer>,
    opts: RunOptions,
) -> Result<(StageReport, FilterSummary), PipelineError> {
    cfg.validate()?;
    let lines = read_manifest(input)?;
    create_dir(output)?;
    let outcomes: Vec<_> = opts.pool()?.install(|| {
        lines
            .par_iter()
            .map(|(n, l)| filter_line(*n, l, &cfg.filter, scorer))
            .collect()
    });
    let routed = route_outcomes(
        lines
            .iter()
            .zip(outcomes)
            .map(|((n, l), o)| (*n, l.as_str(), o)),
        &cfg.filter,
    );
    let paths: Vec<PathBuf> = [
        KEPT_MANIFEST,
        DROPPED_MANIFEST,
        REVIEW_MANIFEST,
        FILTER_SUMMARY,
    ]
    .iter()
    .map(|f| output.join(f))
    .collect();
    write_raw_lines(&paths[0], routed.kept.iter().map(String::as_str))?;
    write_lines(&paths[1], &routed.dropped)?;
    write_lines(&paths[2], &routed.review)?;
    write_json(&paths[3], &routed.summary)?;
    let report = StageReport {
        stage: "filter".into(),
        records: routed.summary.input,
        record_errors: routed.summary.parse_errors,
        outputs: paths,
    };
    Ok((report, routed.summary))
}

// ---------------------------------------------------------------- mix

/// Evenly spaced subset of `n` items of size `k` (bin centres).
fn even_subsample(n: usize, k: usize) -> Vec<usize> {
    if k >= n {
        return (0..n).collect();
    }
    (0..k).map(|i| (2 * i + 1) * n / (2 * k)).collect()
}

fn apply_frame_count(
    rec: &mut ManifestRecord,
    frames: u32,
    tokens: &TokenBudget,
) -> Result<(), FormatError> {
    let keep = even_subsample(rec.media.len(), frames as usize);
    rec.media = keep.iter().map(|&i| rec.media[i].clone()).collect();
    rec.frame_count = Some(keep.len() as u32);
    if let Some(t) = &mut rec.tiling {
        t.images = keep.iter().map(|&i| t.images[i].clone()).collect();
        t.visual_tokens = t.images.iter().map(|i| i.visual_tokens).sum();
        annotate_tokens(rec, tokens)?;
    } else {
        rec.token_length = None;
        rec.tile_count = None;
        rec.visual_spans.clear();
    }
    Ok(())
}

/// Builds the epoch plan from a mixture file and resolves each draw to its
/// manifest record.
pub fn run_mix(
    cfg: &PipelineConfig,
    mixture: Option<&Path>,
    output: &Path,
) -> Result<StageReport, PipelineError> {
    cfg.validate()?;
    let path = mixture.or(cfg.mixture.as_deref()).ok_or_else(|| {
        PipelineError::Usage("no mixture file: pass --input or set `mixture` in the config".into())
    })?;
    let file = MixtureFile::load(path)?;
    let root = base_dir(path);

    let mut manifests: HashMap<String, Vec<(usize, String)>> = HashMap::new();
    let mut sized = Vec::with_capacity(file.datasets.len());
    for d in &file.datasets {
        let lines = match &d.path {
            Some(p) => Some(read_manifest(&root.join(p))?),
            None => None,
        };
        let size = match (d.size, &lines) {
            (Some(s), _) => s,
            (None, Some(l)) => l.len(),
            (None, None) => {
                return Err(MixError::Dataset {
                    name: d.name.clone(),
                    reason: "needs `path` or `size`".into(),
                }
                .into())
            }
        };
        if let Some(l) = lines {
            manifests.insert(d.name.clone(), l);
        }
        sized.push((d.clone(), size));
    }

    let mix_seed = file.seed.unwrap_or_else(|| cfg.stage_seed("mix"));
    let plan = build_epoch(&sized, mix_seed)?;
    create_dir(output)?;

    let mut epoch = Vec::new();
    let mut errors = Vec::new();
    for (i, draw) in plan.draws.iter().enumerate() {
        let Some(lines) = manifests.get(&draw.dataset) else {
            continue;
        };
        let err = |code: &str, msg: String| {
            RecordError::new(
                i + 1,
                None,
                code,
                format!("{}[{}]: {msg}", draw.dataset, draw.index),
            )
        };
        let Some((line_no, line)) = lines.get(draw.index) else {
            errors.push(err("mix.index", "index beyond manifest end".into()));
            continue;
        };
        let mut rec = match parse_record(*line_no, line) {
            Ok(r) => r,
            Err(e) => {
                errors.push(err(e.code(), e.to_string()));
                continue;
            }
        };
        if let Some(f) = draw.frame_count {
            if let Err(e) = apply_frame_count(&mut rec, f, &cfg.tokens) {
                errors.push(err(e.code(), e.to_string()));
                continue;
            }
        }
        rec.extra
            .insert("dataset".into(), draw.dataset.clone().into());
        rec.extra.insert("epoch_index".into(), i.into());
        epoch.push(rec);
    }

    let plan_path = output.join(PLAN_FILE);
    std::fs::write(&plan_path, plan.to_jsonl()).map_err(io_err(&plan_path))?;
    let epoch_path = output.join(EPOCH_MANIFEST);
    let err_path = output.join(MIX_ERRORS);
    write_lines(&epoch_path, &epoch)?;
    write_lines(&err_path, &errors)?;
    Ok(StageReport {
        stage: "mix".into(),
        records: plan.draws.len() as u64,
        record_errors: errors.len() as u64,
        outputs: vec![plan_path, epoch_path, err_path],
    })
}

// ---------------------------------------------------------------- pack

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SegmentRecord {
    pub id: String,
    pub start: u64,
    pub len: u64,
    pub tiles: u32,
}

/// One line of `packed.jsonl`. Position ids restart at 0 at every
/// `cu_seqlens` boundary; attention is confined to each segment.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PackedRecord {
    pub index: usize,
    pub total_length: u64,
    pub total_tiles: u32,
    pub padding: u64,
    pub segments: Vec<SegmentRecord>,
    pub cu_seqlens: Vec<u64>,
}

impl PackedRecord {
    pub fn new(index: usize, seq: &PackedSequence, l_max: u64) -> Self {
        let segments = seq
            .segments
            .iter()
            .zip(seq.spans())
            .map(|(s, span)| SegmentRecord {
                id: s.id.clone(),
                start: span.start,
                len: span.len,
                tiles: s.tile_count,
            })
            .collect();
        Self {
            index,
            total_length: seq.total_length,
            total_tiles: seq.total_tiles,
            padding: l_max.saturating_sub(seq.total_length),
            segments,
            cu_seqlens: seq.cu_seqlens(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PackReport {
    pub config: PackerConfig,
    pub counters: PackerStats,
    pub padding_ratio: f64,
    pub baseline_padding_ratio: f64,
    pub mean_segments_per_sequence: f64,
    pub rejected: Vec<RecordError>,
}

/// Streams records through one packer in input order.
pub fn pack_units(
    units: impl IntoIterator<Item = (usize, Result<SampleUnit, RecordFailure>)>,
    cfg: PackerConfig,
) -> Result<(Vec<PackedSequence>, PackReport), PipelineError> {
    let mut packer = Packer::new(cfg)?;
    let mut out = Vec::new();
    let mut rejected = Vec::new();
    for (line, unit) in units {
        let unit = match unit {
            Ok(u) => u,
            Err(f) => {
                rejected.push(RecordError::new(line, None, &f.code, f.message));
                continue;
            }
        };
        let id = unit.id.clone();
        match packer.push(unit) {
            Ok(seqs) => out.extend(seqs),
            Err(e) => rejected.push(RecordError::new(line, Some(&id), e.code(), e.to_string())),
        }
    }
    out.extend(packer.flush());
    let stats = *packer.stats();
    let report = PackReport {
        config: cfg,
        counters: stats,
        padding_ratio: stats.padding_ratio(cfg.l_max),
        baseline_padding_ratio: stats.baseline_padding_ratio(cfg.l_max),
        mean_segments_per_sequence: stats.mean_segments_per_sequence(),
        rejected,
    };
    Ok((out, report))
}

pub fn run_pack(
    cfg: &PipelineConfig,
    input: &Path,
    output: &Path,
) -> Result<(StageReport, PackReport), PipelineError> {
    cfg.validate()?;
    let lines = read_manifest(input)?;
    create_dir(output)?;
    let units = lines.iter().map(|(n, l)| {
        let unit = parse_record(*n, l)
            .map_err(|e| RecordFailure::new(e.code(), e.to_string()))
            .and_then(|r| sample_unit(&r, &cfg.tokens));
        (*n, unit)
    });
    let (seqs, report) = pack_units(units, cfg.packer)?;
    let packed_path = output.join(PACKED_MANIFEST);
    let stats_path = output.join(PACK_STATS);
    write_lines(
        &packed_path,
        seqs.iter()
            .enumerate()
            .map(|(i, s)| PackedRecord::new(i, s, cfg.packer.l_max)),
    )?;
    write_json(&stats_path, &report)?;
    let stage = StageReport {
        stage: "pack".into(),
        records: lines.len() as u64,
        record_errors: report.rejected.len() as u64,
        outputs: vec![packed_path, stats_path],
    };
    Ok((stage, report))
}

// ---------------------------------------------------------------- stats

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StatsReport {
    pub records: u64,
    pub mixture: crate::mixer::MixtureStats,
    pub errors: Vec<RecordError>,
}

pub fn corpus_stats(lines: &[(usize, String)], tokens: &TokenBudget) -> StatsReport {
    let mut totals = Vec::new();
    let mut errors = Vec::new();
    for (n, l) in lines {
        let unit = parse_record(*n, l)
            .map_err(|e| RecordFailure::new(e.code(), e.to_string()))
            .and_then(|r| sample_unit(&r, tokens).map(|u| (r.modality, u)));
        match unit {
            Ok((modality, u)) => totals.push(crate::mixer::DatasetTotals {
                modality,
                samples: 1,
                tokens: u.token_length,
            }),
            Err(f) => errors.push(RecordError::new(*n, None, &f.code, f.message)),
        }
    }
    StatsReport {
        records: lines.len() as u64,
        mixture: crate::mixer::mixture_stats(&totals),
        errors,
    }
}

pub fn run_stats(
    cfg: &PipelineConfig,
    input: &Path,
    output: &Path,
) -> Result<(StageReport, StatsReport), PipelineError> {
    cfg.validate()?;
    let lines = read_manifest(input)?;
    create_dir(output)?;
    let report = corpus_stats(&lines, &cfg.tokens);
    let path = output.join(STATS_REPORT);
    write_json(&path, &report)?;
    let stage = StageReport {
        stage: "stats".into(),
        records: report.records,
        record_errors: report.errors.len() as u64,
        outputs: vec![path],
    };
    Ok((stage, report))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::raster::RasterImage;
    use crate::tokens::Turn;

    fn small_config() -> PipelineConfig {
        let mut cfg = PipelineConfig::default();
        cfg.tile.tile_side = 16;
        cfg.augment.enabled = false;
        cfg
    }

    fn write_manifest(dir: &Path, records: &[ManifestRecord]) -> PathBuf {
        let p = dir.join("in.jsonl");
        write_lines(&p, records).unwrap();
        p
    }

    #[test]
    fn subsample_is_even() {
        assert_eq!(even_subsample(10, 5), vec![1, 3, 5, 7, 9]);
        assert_eq!(even_subsample(3, 8), vec![0, 1, 2]);
        assert_eq!(even_subsample(4, 1), vec![2]);
    }

    #[test]
    fn tile_stage_annotates_and_routes_errors() {
        let dir = tempfile::tempdir().unwrap();
        let img = RasterImage::from_fn(
            crate::geometry::ImageDims::new(800, 600).unwrap(),
            |x, y| [(x % 256) as u8, (y % 256) as u8, 7],
        );
        save_png(&img, &dir.path().join("a.png")).unwrap();
        let records = vec![
            ManifestRecord::new(
                "img",
                Modality::SingleImage,
                vec![Turn::user("Describe this."), Turn::assistant("A cat.")],
            )
            .with_media(vec!["a.png".into()]),
            ManifestRecord::new("txt", Modality::Text, vec![Turn::user("hi")]),
            ManifestRecord::new("gone", Modality::SingleImage, vec![Turn::user("x")])
                .with_media(vec!["missing.png".into()]),
        ];
        let input = write_manifest(dir.path(), &records);
        let out = dir.path().join("out");
        let report = run_tile(&small_config(), &input, &out, RunOptions { workers: 2 }).unwrap();
        assert_eq!(
            (report.records, report.record_errors, report.exit_code()),
            (3, 1, 1)
        );

        let tiled = read_manifest(&out.join(TILED_MANIFEST)).unwrap();
        assert_eq!(tiled.len(), 2);
        let rec = parse_record(1, &tiled[0].1).unwrap();
        let tiling = rec.tiling.as_ref().unwrap();
        assert_eq!(tiling.images[0].layout.tile_count, 12);
        assert_eq!(tiling.visual_tokens, 3328);
        assert_eq!(rec.tile_count, Some(13));
        assert_eq!(rec.token_length, Some(3328 + 10));
        for t in &tiling.images[0].tiles {
            assert!(out.join(t).exists());
        }
        assert_eq!(parse_record(2, &tiled[1].1).unwrap(), records[1]);

        let errs = read_manifest(&out.join(TILE_ERRORS)).unwrap();
        let e: RecordError = serde_json::from_str(&errs[0].1).unwrap();
        assert_eq!(
            (e.line, e.id.as_deref(), e.code.as_str()),
            (3, Some("gone"), "raster.io")
        );
        assert!(e.message.contains("missing.png"));
    }

    #[test]
    fn pack_stage_reports_oversize() {
        let dir = tempfile::tempdir().unwrap();
        let mut a = ManifestRecord::new("a", Modality::Text, vec![Turn::user("one two three")]);
        a.token_length = Some(100);
        let mut big =
            ManifestRecord::new("big", Modality::SingleImage, vec![]).with_media(vec!["x".into()]);
        big.token_length = Some(20_000);
        big.tile_count = Some(4);
        let c = ManifestRecord::new("c", Modality::Text, vec![Turn::user("hello there")]);
        let input = write_manifest(dir.path(), &[a, big, c]);
        let (stage, report) = run_pack(&PipelineConfig::default(), &input, dir.path()).unwrap();
        assert_eq!(stage.record_errors, 1);
        assert_eq!(report.rejected[0].code, "pack.oversize_sample");
        let packed = read_manifest(&dir.path().join(PACKED_MANIFEST)).unwrap();
        let rec: PackedRecord = serde_json::from_str(&packed[0].1).unwrap();
        let ids: Vec<_> = rec.segments.iter().map(|s| s.id.as_str()).collect();
        assert_eq!(ids, vec!["a", "c"]);
        assert_eq!(rec.cu_seqlens, vec![0, 100, rec.total_length]);
    }

    #[test]
    fn mix_stage_resolves_records() {
        let dir = tempfile::tempdir().unwrap();
        let records: Vec<_> = (0..10)
            .map(|i| {
                ManifestRecord::new(
                    format!("t{i}"),
                    Modality::Text,
                    vec![Turn::user(format!("text {i}"))],
                )
            })
            .collect();
        write_lines(&dir.path().join("t.jsonl"), &records).unwrap();
        std::fs::write(
            dir.path().join("mix.toml"),
            "version = 1\n[[dataset]]\nname = \"t\"\npath = \"t.jsonl\"\nmodality = \"text\"\nrepeat_factor = 2.0\n",
        )
        .unwrap();
        let out = dir.path().join("out");
        let report = run_mix(&small_config(), Some(&dir.path().join("mix.toml")), &out).unwrap();
        assert_eq!((report.records, report.record_errors), (20, 0));
        let epoch = read_manifest(&out.join(EPOCH_MANIFEST)).unwrap();
        assert_eq!(epoch.len(), 20);
        let first = parse_record(1, &epoch[0].1).unwrap();
        assert_eq!(first.extra["dataset"], "t");
        let again = dir.path().join("again");
        run_mix(&small_config(), Some(&dir.path().join("mix.toml")), &again).unwrap();
        assert_eq!(
            std::fs::read(out.join(PLAN_FILE)).unwrap(),
            std::fs::read(again.join(PLAN_FILE)).unwrap()
        );
        assert!(run_mix(&small_config(), None, &out).is_err());
    }

    #[test]
    fn untiled_media_cannot_be_counted() {
        let rec = ManifestRecord::new("m", Modality::SingleImage, vec![Turn::user("x")])
            .with_media(vec!["a".into()]);
        assert_eq!(
            sample_unit(&rec, &TokenBudget::default()).unwrap_err().code,
            "pipeline.untiled"
        );
        let text = ManifestRecord::new("t", Modality::Text, vec![Turn::user("a b c")]);
        assert!(
            sample_unit(&text, &TokenBudget::default())
                .unwrap()
                .token_length
                > 3
        );
    }
}
