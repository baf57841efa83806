//! Visual-token accounting and conversation rendering.
//!
//! Each tile costs a fixed number of visual tokens (256 after pixel
//! unshuffle). Images are rendered as `<img>` + N placeholder markers +
//! `</img>`; multi-image samples label each run `Image-k: ` and videos label
//! each frame `Frame-k: `. Runs are inserted at the start of the first user
//! turn. Turns use ChatML framing:
//!
//! ```text
//! <|im_start|>user
//! <img>…</img>
//! question<|im_end|>
//! <|im_start|>assistant
//! answer<|im_end|>
//! ```

use crate::geometry::TileLayout;
use crate::modality::Modality;
use crate::packer::{SampleUnit, VisualSpan};
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub const IMG_START: &str = "<img>";
pub const IMG_END: &str = "</img>";
/// Placeholder for one visual token.
pub const IMG_CONTEXT: &str = "<IMG_CONTEXT>";
pub const IM_START: &str = "<|im_start|>";
pub const IM_END: &str = "<|im_end|>";
/// Version tag of the plain-text chat framing above.
pub const CHAT_TEMPLATE_VERSION: &str = "chatml-v1";

pub const DEFAULT_TOKENS_PER_TILE: u64 = 256;
pub const DEFAULT_CONTEXT_LIMIT: u64 = 16384;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum FormatError {
    #[error("invalid token budget: {tokens_per_tile} tokens per tile, context {context_limit}")]
    InvalidBudget {
        tokens_per_tile: u64,
        context_limit: u64,
    },
    #[error("conversation has no turns")]
    EmptyConversation,
    #[error("conversation has no user turn to attach images to")]
    NoUserTurn,
    #[error("{modality} sample needs {expected} image(s), got {actual}")]
    ImageCount {
        modality: Modality,
        expected: &'static str,
        actual: usize,
    },
    #[error("video frame {frame} has {tiles} tiles; frames must be single-tile")]
    MultiTileFrame { frame: usize, tiles: u32 },
    #[error("turn text contains reserved token {0:?}")]
    ReservedToken(&'static str),
    #[error("malformed placeholder structure at byte {0}")]
    Malformed(usize),
    #[error("token counter failed: {0}")]
    Counter(String),
}

impl FormatError {
    pub fn code(&self) -> &'static str {
        match self {
            FormatError::InvalidBudget { .. } => "format.invalid_budget",
            FormatError::Counter(_) => "format.counter",
            FormatError::Malformed(_) => "format.malformed",
            _ => "format.invalid_sample",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct TokenBudget {
    pub tokens_per_tile: u64,
    pub context_limit: u64,
}

impl Default for TokenBudget {
    fn default() -> Self {
        Self {
            tokens_per_tile: DEFAULT_TOKENS_PER_TILE,
            context_limit: DEFAULT_CONTEXT_LIMIT,
        }
    }
}

impl TokenBudget {
    pub fn new(tokens_per_tile: u64, context_limit: u64) -> Result<Self, FormatError> {
        let b = Self {
            tokens_per_tile,
            context_limit,
        };
        b.validate()?;
        Ok(b)
    }

    pub fn validate(&self) -> Result<(), FormatError> {
        if self.tokens_per_tile == 0 || self.context_limit < self.tokens_per_tile {
            return Err(FormatError::InvalidBudget {
                tokens_per_tile: self.tokens_per_tile,
                context_limit: self.context_limit,
            });
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Role {
    System,
    #[serde(alias = "human")]
    User,
    #[serde(alias = "gpt")]
    Assistant,
}

impl Role {
    fn as_str(&self) -> &'static str {
        match self {
            Role::System => "system",
            Role::User => "user",
            Role::Assistant => "assistant",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Turn {
    #[serde(alias = "from")]
    pub role: Role,
    #[serde(alias = "value")]
    pub text: String,
}

impl Turn {
    pub fn new(role: Role, text: impl Into<String>) -> Self {
        Self {
            role,
            text: text.into(),
        }
    }

    pub fn user(text: impl Into<String>) -> Self {
        Self::new(Role::User, text)
    }

    pub fn assistant(text: impl Into<String>) -> Self {
        Self::new(Role::Assistant, text)
    }
}

/// A piece of rendered text: plain text, or one `<img>…</img>` run.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Fragment {
    Text(String),
    Visual { tokens: u64, tiles: u32 },
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RenderedSample {
    pub text: String,
    pub fragments: Vec<Fragment>,
    /// Token count under [`WhitespaceCounter`] plus visual tokens.
    pub token_length: u64,
    /// Tiles fed to the vision encoder, thumbnails included.
    pub tile_count: u32,
    pub modality: Modality,
    /// Visual tokens per image or frame, in order.
    pub image_tokens: Vec<u64>,
}

impl RenderedSample {
    pub fn visual_tokens(&self) -> u64 {
        self.image_tokens.iter().sum()
    }

    pub fn is_oversize(&self, budget: &TokenBudget) -> bool {
        self.token_length > budget.context_limit
    }
}

/// Pluggable text-token counter.
pub trait TokenCounter {
    fn count(&self, text: &str) -> Result<u64, String>;
}

impl<F> TokenCounter for F
where
    F: Fn(&str) -> Result<u64, String>,
{
    fn count(&self, text: &str) -> Result<u64, String> {
        self(text)
    }
}

/// Counts whitespace-separated words; chat special tokens count as one
/// token each even when glued to neighbouring text.
#[derive(Debug, Clone, Copy, Default)]
pub struct WhitespaceCounter;

impl TokenCounter for WhitespaceCounter {
    fn count(&self, text: &str) -> Result<u64, String> {
        Ok(whitespace_count(text))
    }
}

fn whitespace_count(text: &str) -> u64 {
    text.replace("<|", " <|")
        .replace("|>", "|> ")
        .split_whitespace()
        .count() as u64
}

pub fn visual_tokens_for(layout: &TileLayout, budget: &TokenBudget) -> u64 {
    u64::from(layout.total_tiles()) * budget.tokens_per_tile
}

pub fn render_text(turns: &[Turn]) -> Result<RenderedSample, FormatError> {
    render(turns, Modality::Text, &[], &TokenBudget::default())
}

pub fn render_single_image(
    layout: &TileLayout,
    turns: &[Turn],
    budget: &TokenBudget,
) -> Result<RenderedSample, FormatError> {
    render(
        turns,
        Modality::SingleImage,
        std::slice::from_ref(layout),
        budget,
    )
}

pub fn render_multi_image(
    layouts: &[TileLayout],
    turns: &[Turn],
    budget: &TokenBudget,
) -> Result<RenderedSample, FormatError> {
    if layouts.len() < 2 {
        return Err(FormatError::ImageCount {
            modality: Modality::MultiImage,
            expected: "at least 2",
            actual: layouts.len(),
        });
    }
    render(turns, Modality::MultiImage, layouts, budget)
}

pub fn render_video(
    frames: &[TileLayout],
    turns: &[Turn],
    budget: &TokenBudget,
) -> Result<RenderedSample, FormatError> {
    if frames.is_empty() {
        return Err(FormatError::ImageCount {
            modality: Modality::Video,
            expected: "at least 1",
            actual: 0,
        });
    }
    if let Some((frame, f)) = frames
        .iter()
        .enumerate()
        .find(|(_, f)| f.total_tiles() != 1)
    {
        return Err(FormatError::MultiTileFrame {
            frame: frame + 1,
            tiles: f.total_tiles(),
        });
    }
    render(turns, Modality::Video, frames, budget)
}

fn render(
    turns: &[Turn],
    modality: Modality,
    layouts: &[TileLayout],
    budget: &TokenBudget,
) -> Result<RenderedSample, FormatError> {
    budget.validate()?;
    if turns.is_empty() {
        return Err(FormatError::EmptyConversation);
    }
    for t in turns {
        for reserved in [IMG_START, IMG_END, IMG_CONTEXT] {
            if t.text.contains(reserved) {
                return Err(FormatError::ReservedToken(reserved));
            }
        }
    }
    let first_user = turns.iter().position(|t| t.role == Role::User);
    if !layouts.is_empty() && first_user.is_none() {
        return Err(FormatError::NoUserTurn);
    }

    let mut frags = FragmentBuilder::default();
    let mut image_tokens = Vec::with_capacity(layouts.len());
    for (i, turn) in turns.iter().enumerate() {
        frags.text(IM_START);
        frags.text(turn.role.as_str());
        frags.text("\n");
        if Some(i) == first_user {
            for (k, layout) in layouts.iter().enumerate() {
                match modality {
                    Modality::MultiImage => frags.text(&format!("Image-{}: ", k + 1)),
                    Modality::Video => frags.text(&format!("Frame-{}: ", k + 1)),
                    _ => {}
                }
                let tokens = visual_tokens_for(layout, budget);
                frags.visual(tokens, layout.total_tiles());
                frags.text("\n");
                image_tokens.push(tokens);
            }
        }
        frags.text(&turn.text);
        frags.text(IM_END);
        frags.text("\n");
    }
    let fragments = frags.finish();

    let text_tokens: u64 = fragments
        .iter()
        .map(|f| match f {
            Fragment::Text(s) => whitespace_count(s),
            Fragment::Visual { .. } => 0,
        })
        .sum();
    let tile_count = layouts.iter().map(|l| l.total_tiles()).sum();
    let visual: u64 = image_tokens.iter().sum();
    Ok(RenderedSample {
        text: fragments_to_text(&fragments),
        fragments,
        token_length: text_tokens + visual,
        tile_count,
        modality,
        image_tokens,
    })
}

#[derive(Default)]
struct FragmentBuilder {
    out: Vec<Fragment>,
}

impl FragmentBuilder {
    fn text(&mut self, s: &str) {
        if let Some(Fragment::Text(last)) = self.out.last_mut() {
            last.push_str(s);
        } else {
            self.out.push(Fragment::Text(s.to_owned()));
        }
    }

    fn visual(&mut self, tokens: u64, tiles: u32) {
        self.out.push(Fragment::Visual { tokens, tiles });
    }

    fn finish(self) -> Vec<Fragment> {
        self.out
    }
}

fn fragments_to_text(fragments: &[Fragment]) -> String {
    let mut s = String::new();
    for f in fragments {
        match f {
            Fragment::Text(t) => s.push_str(t),
            Fragment::Visual { tokens, .. } => {
                s.push_str(IMG_START);
                for _ in 0..*tokens {
                    s.push_str(IMG_CONTEXT);
                }
                s.push_str(IMG_END);
            }
        }
    }
    s
}

/// Converts a rendered sample into the packer's unit, counting text with
/// `counter`. Visual runs become indivisible spans at their token offsets.
pub fn estimate_sample_tokens(
    id: impl Into<String>,
    rendered: &RenderedSample,
    counter: &dyn TokenCounter,
) -> Result<SampleUnit, FormatError> {
    let mut offset = 0u64;
    let mut spans = Vec::new();
    for f in &rendered.fragments {
        match f {
            Fragment::Text(s) => offset += counter.count(s).map_err(FormatError::Counter)?,
            Fragment::Visual { tokens, tiles } => {
                spans.push(VisualSpan {
                    offset,
                    len: *tokens,
                    tiles: *tiles,
                });
                offset += tokens;
            }
        }
    }
    Ok(SampleUnit {
        id: id.into(),
        token_length: offset,
        tile_count: rendered.tile_count,
        visual_spans: spans,
        payload: None,
    })
}

/// Placeholder structure recovered from rendered text.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ParsedPlaceholders {
    pub modality: Modality,
    pub image_tokens: Vec<u64>,
}

/// Recovers modality and per-image marker counts from rendered text.
pub fn parse_rendered(text: &str) -> Result<ParsedPlaceholders, FormatError> {
    let mut image_tokens = Vec::new();
    let mut labels = Vec::new();
    let mut cursor = 0;
    while let Some(rel) = text[cursor..].find(IMG_START) {
        let start = cursor + rel;
        let body_start = start + IMG_START.len();
        let body_len = text[body_start..]
            .find(IMG_END)
            .ok_or(FormatError::Malformed(start))?;
        let body = &text[body_start..body_start + body_len];
        if !body.len().is_multiple_of(IMG_CONTEXT.len())
            || body.matches(IMG_CONTEXT).count() * IMG_CONTEXT.len() != body.len()
        {
            return Err(FormatError::Malformed(body_start));
        }
        image_tokens.push((body.len() / IMG_CONTEXT.len()) as u64);
        labels.push(run_label(&text[..start], image_tokens.len()));
        cursor = body_start + body_len + IMG_END.len();
    }
    if text[cursor..].contains(IMG_END) {
        return Err(FormatError::Malformed(cursor));
    }
    let modality = match (image_tokens.len(), labels.first().copied().flatten()) {
        (0, _) => Modality::Text,
        (_, Some(Label::Frame)) => Modality::Video,
        (_, Some(Label::Image)) => Modality::MultiImage,
        (1, None) => Modality::SingleImage,
        _ => return Err(FormatError::Malformed(0)),
    };
    let expected = match modality {
        Modality::Video => Some(Label::Frame),
        Modality::MultiImage => Some(Label::Image),
        _ => None,
    };
    if labels.iter().any(|l| *l != expected) {
        return Err(FormatError::Malformed(0));
    }
    Ok(ParsedPlaceholders {
        modality,
        image_tokens,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Label {
    Image,
    Frame,
}

fn run_label(before: &str, k: usize) -> Option<Label> {
    if before.ends_with(&format!("Image-{k}: ")) {
        Some(Label::Image)
    } else if before.ends_with(&format!("Frame-{k}: ")) {
        Some(Label::Frame)
    } else {
        None
    }
}
