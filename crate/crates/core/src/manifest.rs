//! JSONL manifest records exchanged between pipeline stages.

use crate::geometry::TileLayout;
use crate::modality::Modality;
use crate::packer::VisualSpan;
use crate::tokens::Turn;
use serde::{Deserialize, Serialize};
use std::io::{BufRead, Write};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum ManifestError {
    #[error("line {line}: {reason}")]
    Parse { line: usize, reason: String },
    #[error("record {id}: {reason}")]
    Invalid { id: String, reason: String },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl ManifestError {
    pub fn code(&self) -> &'static str {
        match self {
            ManifestError::Parse { .. } => "manifest.parse",
            ManifestError::Invalid { .. } => "manifest.invalid",
            ManifestError::Io(_) => "manifest.io",
        }
    }
}

/// One training sample.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestRecord {
    pub id: String,
    pub modality: Modality,
    /// Image paths; frame images for video.
    #[serde(default)]
    pub media: Vec<String>,
    #[serde(default)]
    pub conversations: Vec<Turn>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub domain: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub token_length: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tile_count: Option<u32>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub visual_spans: Vec<VisualSpan>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tiling: Option<Tiling>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub frame_count: Option<u32>,
    /// Fields this toolkit does not interpret, carried through unchanged.
    #[serde(flatten)]
    pub extra: serde_json::Map<String, serde_json::Value>,
}

impl ManifestRecord {
    pub fn new(id: impl Into<String>, modality: Modality, conversations: Vec<Turn>) -> Self {
        Self {
            id: id.into(),
            modality,
            media: Vec::new(),
            conversations,
            domain: None,
            token_length: None,
            tile_count: None,
            visual_spans: Vec::new(),
            tiling: None,
            frame_count: None,
            extra: serde_json::Map::new(),
        }
    }

    pub fn with_media(mut self, media: Vec<String>) -> Self {
        self.media = media;
        self
    }

    pub fn validate(&self) -> Result<(), ManifestError> {
        let invalid = |reason: &str| ManifestError::Invalid {
            id: self.id.clone(),
            reason: reason.into(),
        };
        if self.id.is_empty() {
            return Err(invalid("empty id"));
        }
        match (self.modality, self.media.len()) {
            (Modality::Text, 0) => {}
            (Modality::Text, _) => return Err(invalid("text records cannot carry media")),
            (_, 0) => return Err(invalid("media records need at least one file")),
            (Modality::SingleImage, n) if n != 1 => {
                return Err(invalid("single_image records need exactly one image"))
            }
            (Modality::MultiImage, 1) => {
                return Err(invalid("multi_image records need at least two images"))
            }
            _ => {}
        }
        Ok(())
    }

    /// Concatenated turn texts, one turn per line.
    pub fn text(&self) -> String {
        self.conversations
            .iter()
            .map(|t| t.text.as_str())
            .collect::<Vec<_>>()
            .join("\n")
    }

    pub fn domain(&self) -> &str {
        self.domain.as_deref().unwrap_or("general")
    }

    pub fn to_json_line(&self) -> String {
        serde_json::to_string(self).expect("records serialize")
    }
}

/// Tiling annotations written by the tile stage.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Tiling {
    pub images: Vec<TiledImage>,
    pub visual_tokens: u64,
    pub resize_kernel: String,
    pub chroma_subsampling: String,
    pub chat_template: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TiledImage {
    pub source: String,
    pub layout: TileLayout,
    pub tiles: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub thumbnail: Option<String>,
    pub visual_tokens: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub jpeg_quality: Option<u8>,
}

/// Raw non-empty lines with 1-based line numbers.
pub fn read_lines(reader: impl BufRead) -> Result<Vec<(usize, String)>, ManifestError> {
    let mut out = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line?;
        if !line.trim().is_empty() {
            out.push((i + 1, line));
        }
    }
    Ok(out)
}

pub fn parse_record(line_no: usize, line: &str) -> Result<ManifestRecord, ManifestError> {
    let rec: ManifestRecord = serde_json::from_str(line).map_err(|e| ManifestError::Parse {
        line: line_no,
        reason: e.to_string(),
    })?;
    rec.validate()?;
    Ok(rec)
}

pub fn write_jsonl<T: Serialize>(
    mut w: impl Write,
    items: impl IntoIterator<Item = T>,
) -> Result<(), ManifestError> {
    for item in items {
        serde_json::to_writer(&mut w, &item).map_err(std::io::Error::from)?;
        w.write_all(b"\n")?;
    }
    w.flush()?;
    Ok(())
}
