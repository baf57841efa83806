//! Per-token loss weights `w = x^(-alpha)` where `x` is the token count of
//! the response a token belongs to.
//!
//! `alpha = 0` is token averaging, `alpha = 1` sample averaging and
//! `alpha = 0.5` square averaging.

use crate::packer::PackedSequence;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum WeightError {
    #[error("alpha {0} outside [0, 1]")]
    Alpha(f64),
    #[error("response {0} has zero tokens")]
    EmptyResponse(usize),
    #[error("response {index}: {got} loss values for {expected} tokens")]
    LengthMismatch {
        index: usize,
        expected: u64,
        got: usize,
    },
    #[error("no tokens to weight")]
    NoTokens,
}

impl WeightError {
    pub fn code(&self) -> &'static str {
        match self {
            WeightError::Alpha(_) => "lossweight.alpha",
            WeightError::EmptyResponse(_) => "lossweight.empty_response",
            WeightError::LengthMismatch { .. } => "lossweight.length_mismatch",
            WeightError::NoTokens => "lossweight.no_tokens",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WeightStrategy {
    alpha: f64,
}

impl WeightStrategy {
    pub const TOKEN: WeightStrategy = WeightStrategy { alpha: 0.0 };
    pub const SQUARE: WeightStrategy = WeightStrategy { alpha: 0.5 };
    pub const SAMPLE: WeightStrategy = WeightStrategy { alpha: 1.0 };

    pub fn new(alpha: f64) -> Result<Self, WeightError> {
        if !(0.0..=1.0).contains(&alpha) {
            return Err(WeightError::Alpha(alpha));
        }
        Ok(Self { alpha })
    }

    pub fn alpha(&self) -> f64 {
        self.alpha
    }

    pub fn weight(&self, tokens: u64) -> f64 {
        (tokens as f64).powf(-self.alpha)
    }
}

/// One supervised response.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResponseSpan {
    pub index: usize,
    pub tokens: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub losses: Option<Vec<f64>>,
}

impl ResponseSpan {
    pub fn new(index: usize, tokens: u64) -> Self {
        Self {
            index,
            tokens,
            losses: None,
        }
    }

    pub fn with_losses(index: usize, losses: Vec<f64>) -> Self {
        Self {
            index,
            tokens: losses.len() as u64,
            losses: Some(losses),
        }
    }
}

/// One response per segment of a packed sequence, sized by segment length.
pub fn spans_from_packed(seq: &PackedSequence) -> Vec<ResponseSpan> {
    seq.segments
        .iter()
        .enumerate()
        .map(|(i, s)| ResponseSpan::new(i, s.token_length))
        .collect()
}

fn check(spans: &[ResponseSpan]) -> Result<(), WeightError> {
    match spans.iter().find(|s| s.tokens == 0) {
        Some(s) => Err(WeightError::EmptyResponse(s.index)),
        None => Ok(()),
    }
}

/// Unnormalized per-token weights in span order.
pub fn raw_weights(
    spans: &[ResponseSpan],
    strategy: WeightStrategy,
) -> Result<Vec<f64>, WeightError> {
    check(spans)?;
    let total: u64 = spans.iter().map(|s| s.tokens).sum();
    let mut out = Vec::with_capacity(total as usize);
    for s in spans {
        let w = strategy.weight(s.tokens);
        out.extend(std::iter::repeat_n(w, s.tokens as usize));
    }
    Ok(out)
}

/// Per-token weights divided by their sum over all given spans.
pub fn normalized_weights(
    spans: &[ResponseSpan],
    strategy: WeightStrategy,
) -> Result<Vec<f64>, WeightError> {
    let mut w = raw_weights(spans, strategy)?;
    if w.is_empty() {
        return Err(WeightError::NoTokens);
    }
    // per-span sums keep the total exact for large equal-weight runs
    let sum: f64 = spans
        .iter()
        .map(|s| strategy.weight(s.tokens) * s.tokens as f64)
        .sum();
    for x in &mut w {
        *x /= sum;
    }
    Ok(w)
}

/// `sum_i normalized_weight_i * loss_i`.
pub fn weighted_loss(spans: &[ResponseSpan], strategy: WeightStrategy) -> Result<f64, WeightError> {
    let mut losses = Vec::new();
    for s in spans {
        let l = s.losses.as_deref().unwrap_or(&[]);
        if l.len() as u64 != s.tokens {
            return Err(WeightError::LengthMismatch {
                index: s.index,
                expected: s.tokens,
                got: l.len(),
            });
        }
        losses.extend_from_slice(l);
    }
    let w = normalized_weights(spans, strategy)?;
    Ok(w.iter().zip(&losses).map(|(w, l)| w * l).sum())
}

/// Normalizes each group independently, e.g. one group per packed batch.
pub fn grouped_normalized_weights(
    groups: &[Vec<ResponseSpan>],
    strategy: WeightStrategy,
) -> Result<Vec<Vec<f64>>, WeightError> {
    groups
        .iter()
        .map(|g| normalized_weights(g, strategy))
        .collect()
}
