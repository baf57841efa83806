//! Streaming two-dimensional sequence packer.
//!
//! Samples are packed under two budgets at once: the LLM context length
//! (`l_max` tokens) and the vision-encoder tile limit (`t_max` tiles). Each
//! incoming sample goes through four phases:
//!
//! 1. **Select**: cut it into pieces that each fit both budgets. Visual
//!    blocks are never split.
//! 2. **Search**: find the buffered sequence with the largest
//!    `(total_length, total_tiles)` that can still take the piece, i.e.
//!    `len + piece.len < l_max` and `tiles + piece.tiles < t_max`.
//! 3. **Pack**: append the piece as a new segment (or start a new sequence
//!    when nothing fits).
//! 4. **Maintain**: yield the sequence if it is full, otherwise reinsert it
//!    into the buffer, which is kept sorted in descending order. When the
//!    buffer overflows its capacity, its largest entry is yielded.
//!
//! Segments keep their own position ids and only attend within themselves.

use serde::{Deserialize, Serialize};
use std::cmp::Ordering;
use thiserror::Error;

pub const DEFAULT_L_MAX: u64 = 16384;
pub const DEFAULT_T_MAX: u32 = 48;
pub const DEFAULT_BUFFER_CAPACITY: usize = 64;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum PackError {
    #[error("invalid packer config: {0}")]
    Config(String),
    #[error("sample {id}: {reason}")]
    InvalidSample { id: String, reason: String },
    #[error("sample {id}: indivisible block of {len} tokens / {tiles} tiles exceeds limits ({l_max}, {t_max})")]
    Oversize {
        id: String,
        len: u64,
        tiles: u32,
        l_max: u64,
        t_max: u32,
    },
    #[error("packing {unit} into a sequence of ({len}, {tiles}) breaks the packing limits")]
    Invariant { unit: String, len: u64, tiles: u32 },
}

impl PackError {
    pub fn code(&self) -> &'static str {
        match self {
            PackError::Config(_) => "pack.config",
            PackError::InvalidSample { .. } => "pack.invalid_sample",
            PackError::Oversize { .. } => "pack.oversize_sample",
            PackError::Invariant { .. } => "pack.invariant",
        }
    }
}

/// A run of visual tokens inside a sample that must stay in one piece.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct VisualSpan {
    pub offset: u64,
    pub len: u64,
    pub tiles: u32,
}

/// One training sample as seen by the packer.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SampleUnit {
    pub id: String,
    pub token_length: u64,
    pub tile_count: u32,
    /// Where the visual blocks sit. Tiles are attributed to these spans; a
    /// sample with tiles but no spans can be packed but not cut.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub visual_spans: Vec<VisualSpan>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub payload: Option<String>,
}

impl SampleUnit {
    pub fn new(id: impl Into<String>, token_length: u64, tile_count: u32) -> Self {
        Self {
            id: id.into(),
            token_length,
            tile_count,
            visual_spans: Vec::new(),
            payload: None,
        }
    }

    pub fn with_spans(mut self, spans: Vec<VisualSpan>) -> Self {
        self.visual_spans = spans;
        self
    }

    fn validate(&self) -> Result<(), PackError> {
        let bad = |reason: String| PackError::InvalidSample {
            id: self.id.clone(),
            reason,
        };
        if self.token_length == 0 {
            return Err(bad("token_length must be at least 1".into()));
        }
        if self.visual_spans.is_empty() {
            return Ok(());
        }
        let mut end = 0;
        for s in &self.visual_spans {
            if s.offset < end || s.len == 0 {
                return Err(bad(
                    "visual spans must be non-empty, ordered and disjoint".into()
                ));
            }
            end = s.offset + s.len;
        }
        if end > self.token_length {
            return Err(bad(format!(
                "visual span ends at {end}, past token_length {}",
                self.token_length
            )));
        }
        let tiles: u32 = self.visual_spans.iter().map(|s| s.tiles).sum();
        if tiles != self.tile_count {
            return Err(bad(format!(
                "spans carry {tiles} tiles, sample declares {}",
                self.tile_count
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct PackerConfig {
    pub l_max: u64,
    pub t_max: u32,
    pub buffer_capacity: usize,
}

impl Default for PackerConfig {
    fn default() -> Self {
        Self {
            l_max: DEFAULT_L_MAX,
            t_max: DEFAULT_T_MAX,
            buffer_capacity: DEFAULT_BUFFER_CAPACITY,
        }
    }
}

impl PackerConfig {
    pub fn new(l_max: u64, t_max: u32, buffer_capacity: usize) -> Result<Self, PackError> {
        let cfg = Self {
            l_max,
            t_max,
            buffer_capacity,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<(), PackError> {
        if self.l_max == 0 {
            return Err(PackError::Config("l_max must be at least 1".into()));
        }
        if self.buffer_capacity == 0 {
            return Err(PackError::Config(
                "buffer_capacity must be at least 1".into(),
            ));
        }
        Ok(())
    }

    fn accepts(&self, seq: &PackedSequence, unit: &SampleUnit) -> bool {
        seq.total_length + unit.token_length < self.l_max
            && seq.total_tiles + unit.tile_count < self.t_max
    }

    /// A sequence at or past `l_max` cannot take anything more under the
    /// strict length test, so it is yielded right away.
    fn is_full(&self, seq: &PackedSequence) -> bool {
        seq.total_length >= self.l_max || seq.total_tiles > self.t_max
    }
}

/// Token span of one segment inside a packed sequence.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SegmentSpan {
    pub start: u64,
    pub len: u64,
}

#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct PackedSequence {
    pub segments: Vec<SampleUnit>,
    pub total_length: u64,
    pub total_tiles: u32,
}

impl PackedSequence {
    pub fn from_unit(unit: SampleUnit) -> Self {
        Self {
            total_length: unit.token_length,
            total_tiles: unit.tile_count,
            segments: vec![unit],
        }
    }

    /// Sort key: `(total_length, total_tiles)`.
    pub fn key(&self) -> (u64, u32) {
        (self.total_length, self.total_tiles)
    }

    pub fn spans(&self) -> Vec<SegmentSpan> {
        let mut start = 0;
        self.segments
            .iter()
            .map(|s| {
                let span = SegmentSpan {
                    start,
                    len: s.token_length,
                };
                start += s.token_length;
                span
            })
            .collect()
    }

    /// Per-token segment index, starting at 0.
    pub fn segment_ids(&self) -> Vec<u32> {
        let mut ids = Vec::with_capacity(self.total_length as usize);
        for (i, s) in self.segments.iter().enumerate() {
            ids.extend(std::iter::repeat_n(i as u32, s.token_length as usize));
        }
        ids
    }

    /// Per-token position index, restarting at 0 in each segment.
    pub fn position_ids(&self) -> Vec<u32> {
        let mut ids = Vec::with_capacity(self.total_length as usize);
        for s in &self.segments {
            ids.extend(0..s.token_length as u32);
        }
        ids
    }

    /// Cumulative segment boundaries, `[0, len_0, len_0 + len_1, ...]`.
    pub fn cu_seqlens(&self) -> Vec<u64> {
        std::iter::once(0)
            .chain(self.spans().iter().map(|s| s.start + s.len))
            .collect()
    }

    /// Segment index of a token position.
    pub fn segment_of(&self, token: u64) -> Option<usize> {
        if token >= self.total_length {
            return None;
        }
        let cu = self.cu_seqlens();
        Some(cu.partition_point(|&b| b <= token) - 1)
    }

    /// Whether token `query` may attend to token `key`: only within a segment.
    pub fn can_attend(&self, query: u64, key: u64) -> bool {
        matches!((self.segment_of(query), self.segment_of(key)), (Some(a), Some(b)) if a == b)
    }
}

/// Appends `unit` as a new segment.
pub fn pack_pair(
    host: PackedSequence,
    unit: SampleUnit,
    cfg: &PackerConfig,
) -> Result<PackedSequence, PackError> {
    if !host.segments.is_empty() && !cfg.accepts(&host, &unit) {
        return Err(PackError::Invariant {
            unit: unit.id,
            len: host.total_length,
            tiles: host.total_tiles,
        });
    }
    let mut seq = host;
    seq.total_length += unit.token_length;
    seq.total_tiles += unit.tile_count;
    seq.segments.push(unit);
    Ok(seq)
}

/// Cuts a sample into pieces that fit `(l_max, t_max)`.
///
/// Text tokens are cut greedily at `l_max`; a visual block goes whole into
/// the current piece or starts a new one. A sample that already fits is
/// returned unchanged; pieces of a cut sample get ids `"{id}#{k}"`.
pub fn select_truncate(raw: SampleUnit, cfg: &PackerConfig) -> Result<Vec<SampleUnit>, PackError> {
    raw.validate()?;
    if raw.token_length <= cfg.l_max && raw.tile_count <= cfg.t_max {
        return Ok(vec![raw]);
    }
    if raw.tile_count > 0 && raw.visual_spans.is_empty() {
        // tiles without located blocks: the whole sample is one block
        return Err(PackError::Oversize {
            id: raw.id,
            len: raw.token_length,
            tiles: raw.tile_count,
            l_max: cfg.l_max,
            t_max: cfg.t_max,
        });
    }

    let mut cutter = Cutter::new(cfg);
    let mut cursor = 0;
    for span in &raw.visual_spans {
        cutter.text(span.offset - cursor);
        if span.len > cfg.l_max || span.tiles > cfg.t_max {
            return Err(PackError::Oversize {
                id: raw.id,
                len: span.len,
                tiles: span.tiles,
                l_max: cfg.l_max,
                t_max: cfg.t_max,
            });
        }
        cutter.block(span.len, span.tiles);
        cursor = span.offset + span.len;
    }
    cutter.text(raw.token_length - cursor);
    let pieces = cutter.finish();

    Ok(pieces
        .into_iter()
        .enumerate()
        .map(|(k, p)| SampleUnit {
            id: format!("{}#{k}", raw.id),
            token_length: p.len,
            tile_count: p.tiles,
            visual_spans: p.spans,
            payload: raw.payload.clone(),
        })
        .collect())
}

#[derive(Default)]
struct Piece {
    len: u64,
    tiles: u32,
    spans: Vec<VisualSpan>,
}

struct Cutter {
    l_max: u64,
    t_max: u32,
    done: Vec<Piece>,
    cur: Piece,
}

impl Cutter {
    fn new(cfg: &PackerConfig) -> Self {
        Self {
            l_max: cfg.l_max,
            t_max: cfg.t_max,
            done: Vec::new(),
            cur: Piece::default(),
        }
    }

    fn close(&mut self) {
        if self.cur.len > 0 {
            self.done.push(std::mem::take(&mut self.cur));
        }
    }

    fn text(&mut self, mut n: u64) {
        while n > 0 {
            if self.cur.len == self.l_max {
                self.close();
            }
            let take = n.min(self.l_max - self.cur.len);
            self.cur.len += take;
            n -= take;
        }
    }

    fn block(&mut self, len: u64, tiles: u32) {
        if self.cur.len + len > self.l_max || self.cur.tiles + tiles > self.t_max {
            self.close();
        }
        self.cur.spans.push(VisualSpan {
            offset: self.cur.len,
            len,
            tiles,
        });
        self.cur.len += len;
        self.cur.tiles += tiles;
    }

    fn finish(mut self) -> Vec<Piece> {
        self.close();
        self.done
    }
}

/// Sequences waiting for more samples, sorted descending by
/// `(total_length, total_tiles)`.
#[derive(Debug, Clone, Default)]
pub struct PackerBuffer {
    entries: Vec<PackedSequence>,
}

impl PackerBuffer {
    pub fn entries(&self) -> &[PackedSequence] {
        &self.entries
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Inserts after any entries with an equal key.
    pub fn insert(&mut self, seq: PackedSequence) {
        let key = seq.key();
        let at = self.entries.partition_point(|e| e.key() >= key);
        self.entries.insert(at, seq);
    }

    fn take(&mut self, index: usize) -> PackedSequence {
        self.entries.remove(index)
    }

    pub fn is_sorted(&self) -> bool {
        self.entries
            .windows(2)
            .all(|w| w[0].key().cmp(&w[1].key()) != Ordering::Less)
    }
}

/// Index of the largest buffered sequence that can take `unit`.
///
/// The length test holds on a suffix of the descending buffer, found by
/// binary search; the first tile-feasible entry of that suffix is the
/// maximum qualifying entry.
pub fn search_buffer(
    buffer: &PackerBuffer,
    unit: &SampleUnit,
    cfg: &PackerConfig,
) -> Option<usize> {
    let first = buffer
        .entries
        .partition_point(|e| e.total_length + unit.token_length >= cfg.l_max);
    buffer.entries[first..]
        .iter()
        .position(|e| e.total_tiles + unit.tile_count < cfg.t_max)
        .map(|i| first + i)
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct PackerStats {
    pub samples_in: u64,
    pub pieces: u64,
    pub truncated_samples: u64,
    pub rejected_samples: u64,
    pub sequences_out: u64,
    pub segments_out: u64,
    pub tokens_out: u64,
    pub full_yields: u64,
    pub evictions: u64,
    pub flushed: u64,
}

impl PackerStats {
    /// `1 - tokens / (sequences * l_max)`: share of padding if every
    /// sequence is padded to `l_max`.
    pub fn padding_ratio(&self, l_max: u64) -> f64 {
        if self.sequences_out == 0 {
            return 0.0;
        }
        1.0 - self.tokens_out as f64 / (self.sequences_out as f64 * l_max as f64)
    }

    /// Padding ratio with one piece per sequence.
    pub fn baseline_padding_ratio(&self, l_max: u64) -> f64 {
        if self.pieces == 0 {
            return 0.0;
        }
        1.0 - self.tokens_out as f64 / (self.pieces as f64 * l_max as f64)
    }

    pub fn mean_segments_per_sequence(&self) -> f64 {
        if self.sequences_out == 0 {
            return 0.0;
        }
        self.segments_out as f64 / self.sequences_out as f64
    }
}

/// Single-owner streaming packer.
#[derive(Debug, Clone)]
pub struct Packer {
    cfg: PackerConfig,
    buffer: PackerBuffer,
    stats: PackerStats,
}

impl Packer {
    pub fn new(cfg: PackerConfig) -> Result<Self, PackError> {
        cfg.validate()?;
        Ok(Self {
            cfg,
            buffer: PackerBuffer::default(),
            stats: PackerStats::default(),
        })
    }

    pub fn config(&self) -> &PackerConfig {
        &self.cfg
    }

    pub fn buffer(&self) -> &PackerBuffer {
        &self.buffer
    }

    pub fn stats(&self) -> &PackerStats {
        &self.stats
    }

    /// Feeds one sample; returns the sequences yielded by this call.
    pub fn push(&mut self, raw: SampleUnit) -> Result<Vec<PackedSequence>, PackError> {
        self.stats.samples_in += 1;
        let pieces = match select_truncate(raw, &self.cfg) {
            Ok(p) => p,
            Err(e) => {
                self.stats.rejected_samples += 1;
                return Err(e);
            }
        };
        if pieces.len() > 1 {
            self.stats.truncated_samples += 1;
        }
        let mut out = Vec::new();
        for piece in pieces {
            self.stats.pieces += 1;
            let seq = match search_buffer(&self.buffer, &piece, &self.cfg) {
                Some(i) => {
                    let host = self.buffer.take(i);
                    pack_pair(host, piece, &self.cfg)?
                }
                None => PackedSequence::from_unit(piece),
            };
            if self.cfg.is_full(&seq) {
                self.stats.full_yields += 1;
                self.emit(seq, &mut out);
                continue;
            }
            self.buffer.insert(seq);
            if self.buffer.len() > self.cfg.buffer_capacity {
                let largest = self.buffer.take(0);
                self.stats.evictions += 1;
                self.emit(largest, &mut out);
            }
        }
        Ok(out)
    }

    /// Drains the buffer, largest first.
    pub fn flush(&mut self) -> Vec<PackedSequence> {
        let drained = std::mem::take(&mut self.buffer.entries);
        let mut out = Vec::with_capacity(drained.len());
        for seq in drained {
            self.stats.flushed += 1;
            self.emit(seq, &mut out);
        }
        out
    }

    fn emit(&mut self, seq: PackedSequence, out: &mut Vec<PackedSequence>) {
        self.stats.sequences_out += 1;
        self.stats.segments_out += seq.segments.len() as u64;
        self.stats.tokens_out += seq.total_length;
        out.push(seq);
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cfg(l: u64, t: u32, cap: usize) -> PackerConfig {
        PackerConfig::new(l, t, cap).unwrap()
    }

    fn seq(len: u64, tiles: u32) -> PackedSequence {
        PackedSequence::from_unit(SampleUnit::new(format!("{len}/{tiles}"), len, tiles))
    }

    fn buffer(entries: &[(u64, u32)]) -> PackerBuffer {
        let mut b = PackerBuffer::default();
        for &(l, t) in entries {
            b.insert(seq(l, t));
        }
        b
    }

    #[test]
    fn truncates_long_text() {
        let pieces =
            select_truncate(SampleUnit::new("x", 20000, 0), &PackerConfig::default()).unwrap();
        let lens: Vec<_> = pieces.iter().map(|p| p.token_length).collect();
        assert_eq!(lens, vec![16384, 3616]);
        assert_eq!(pieces[1].id, "x#1");
    }

    #[test]
    fn fitting_sample_unchanged() {
        let u = SampleUnit::new("x", 100, 2);
        assert_eq!(
            select_truncate(u.clone(), &PackerConfig::default()).unwrap(),
            vec![u]
        );
    }

    #[test]
    fn indivisible_block_rejected() {
        let u = SampleUnit::new("img", 3400, 13).with_spans(vec![VisualSpan {
            offset: 2,
            len: 3328,
            tiles: 13,
        }]);
        let err = select_truncate(u, &cfg(1024, 48, 4)).unwrap_err();
        assert_eq!(err.code(), "pack.oversize_sample");
    }

    #[test]
    fn blocks_move_whole_to_next_piece() {
        // 10 text, 6-token block, 10 text under l_max 12
        let u = SampleUnit::new("m", 26, 2).with_spans(vec![VisualSpan {
            offset: 10,
            len: 6,
            tiles: 2,
        }]);
        let pieces = select_truncate(u, &cfg(12, 48, 4)).unwrap();
        let shape: Vec<_> = pieces
            .iter()
            .map(|p| (p.token_length, p.tile_count))
            .collect();
        assert_eq!(shape, vec![(10, 0), (12, 2), (4, 0)]);
        assert_eq!(
            pieces[1].visual_spans,
            vec![VisualSpan {
                offset: 0,
                len: 6,
                tiles: 2
            }]
        );
        assert_eq!(pieces.iter().map(|p| p.token_length).sum::<u64>(), 26);
    }

    #[test]
    fn tile_limit_splits_between_blocks() {
        let spans = (0..3)
            .map(|i| VisualSpan {
                offset: i * 5,
                len: 4,
                tiles: 3,
            })
            .collect();
        let u = SampleUnit::new("v", 15, 9).with_spans(spans);
        let pieces = select_truncate(u, &cfg(100, 4, 4)).unwrap();
        assert!(pieces.iter().all(|p| p.tile_count <= 4));
        assert_eq!(pieces.len(), 3);
    }

    #[test]
    fn tiles_without_spans_cannot_be_cut() {
        let err = select_truncate(SampleUnit::new("x", 50, 2), &cfg(10, 48, 4)).unwrap_err();
        assert_eq!(err.code(), "pack.oversize_sample");
        let err = select_truncate(SampleUnit::new("x", 0, 0), &cfg(10, 48, 4)).unwrap_err();
        assert_eq!(err.code(), "pack.invalid_sample");
    }

    #[test]
    fn search_uses_strict_limits() {
        let c = cfg(10, 4, 8);
        let b = buffer(&[(9, 3), (5, 1)]);
        let i = search_buffer(&b, &SampleUnit::new("u", 2, 0), &c).unwrap();
        assert_eq!(b.entries()[i].key(), (5, 1));
        assert_eq!(
            search_buffer(&PackerBuffer::default(), &SampleUnit::new("u", 2, 0), &c),
            None
        );
    }

    #[test]
    fn search_breaks_length_ties_by_tiles() {
        let c = cfg(10, 4, 8);
        let b = buffer(&[(8, 1), (8, 3)]);
        let i = search_buffer(&b, &SampleUnit::new("u", 1, 0), &c).unwrap();
        assert_eq!(b.entries()[i].key(), (8, 3));
        // tiles rule out (8,3) for a one-tile unit
        let i = search_buffer(&b, &SampleUnit::new("u", 1, 1), &c).unwrap();
        assert_eq!(b.entries()[i].key(), (8, 1));
    }

    #[test]
    fn pack_pair_restarts_positions() {
        let c = PackerConfig::default();
        let packed = pack_pair(seq(6, 0), SampleUnit::new("b", 3, 0), &c).unwrap();
        assert_eq!(packed.segment_ids(), vec![0, 0, 0, 0, 0, 0, 1, 1, 1]);
        assert_eq!(packed.position_ids(), vec![0, 1, 2, 3, 4, 5, 0, 1, 2]);
        assert!(packed.can_attend(0, 5));
        assert!(!packed.can_attend(5, 6));

        let one = pack_pair(PackedSequence::default(), SampleUnit::new("x", 4, 1), &c).unwrap();
        assert_eq!(one, seq(4, 1).with_id("x"));

        let mut s = PackedSequence::default();
        for i in 0..3 {
            s = pack_pair(s, SampleUnit::new(i.to_string(), 1, 0), &c).unwrap();
        }
        assert_eq!(s.segment_ids(), vec![0, 1, 2]);
        assert_eq!(s.position_ids(), vec![0, 0, 0]);
        assert_eq!(s.cu_seqlens(), vec![0, 1, 2, 3]);
    }

    #[test]
    fn pack_pair_checks_limits() {
        let err = pack_pair(seq(9, 0), SampleUnit::new("b", 1, 0), &cfg(10, 4, 1)).unwrap_err();
        assert_eq!(err.code(), "pack.invariant");
    }

    #[test]
    fn push_trace() {
        let mut p = Packer::new(cfg(10, 4, 8)).unwrap();
        assert!(p.push(SampleUnit::new("A", 6, 2)).unwrap().is_empty());
        assert!(p.push(SampleUnit::new("B", 3, 1)).unwrap().is_empty());
        assert_eq!(p.buffer().len(), 1);
        assert_eq!(p.buffer().entries()[0].key(), (9, 3));
    }

    #[test]
    fn full_length_yields_immediately() {
        let mut p = Packer::new(PackerConfig::default()).unwrap();
        let out = p.push(SampleUnit::new("big", 16384, 0)).unwrap();
        assert_eq!(out.len(), 1);
        assert!(p.buffer().is_empty());
    }

    #[test]
    fn capacity_evicts_largest() {
        let mut p = Packer::new(cfg(10, 4, 1)).unwrap();
        assert!(p.push(SampleUnit::new("A", 6, 2)).unwrap().is_empty());
        let out = p.push(SampleUnit::new("B", 5, 2)).unwrap();
        assert_eq!(out.len(), 1);
        assert_eq!(out[0].segments[0].id, "A");
        assert_eq!(p.stats().evictions, 1);
    }

    #[test]
    fn flush_drains_in_order() {
        let mut p = Packer::new(cfg(10, 4, 8)).unwrap();
        p.push(SampleUnit::new("a", 5, 1)).unwrap();
        p.push(SampleUnit::new("b", 9, 3)).unwrap();
        let keys: Vec<_> = p.flush().iter().map(|s| s.key()).collect();
        assert_eq!(keys, vec![(9, 3), (5, 1)]);
        assert!(p.flush().is_empty());

        p.push(SampleUnit::new("solo", 3, 0)).unwrap();
        let out = p.flush();
        assert_eq!(out.len(), 1);
        assert_eq!(out[0].segments.len(), 1);
        assert_eq!(out[0].segments[0].id, "solo");
    }

    #[test]
    fn rejected_sample_leaves_buffer_untouched() {
        let mut p = Packer::new(cfg(100, 4, 8)).unwrap();
        p.push(SampleUnit::new("a", 5, 1)).unwrap();
        let big = SampleUnit::new("big", 50, 6).with_spans(vec![VisualSpan {
            offset: 0,
            len: 50,
            tiles: 6,
        }]);
        assert!(p.push(big).is_err());
        assert_eq!(p.buffer().len(), 1);
        assert_eq!(p.stats().rejected_samples, 1);
    }

    #[test]
    fn config_validation() {
        assert!(PackerConfig::new(0, 4, 1).is_err());
        assert!(PackerConfig::new(10, 4, 0).is_err());
        assert!(PackerConfig::new(10, 0, 1).is_ok());
    }

    impl PackedSequence {
        fn with_id(mut self, id: &str) -> Self {
            self.segments[0].id = id.into();
            self
        }
    }
}
