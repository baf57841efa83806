//! Client side of external 0-10 scoring.
//!
//! Wire protocol: one HTTP `POST` per sample with a JSON body
//! `{"text": ..., "domain": ..., "prompt_id": ...}`; the service answers
//! `{"score": <number>}`. Scores are clamped to `[0, 10]`. Any transport or
//! protocol failure, after retries, surfaces as [`ScorerError::Unavailable`];
//! a score is never made up.

use serde::{Deserialize, Serialize};
use std::time::Duration;
use thiserror::Error;

pub const QUALITY_PROMPT: &str = "quality";
pub const REPETITION_PROMPT: &str = "repetition";

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ScorerError {
    #[error("scorer unavailable: {0}")]
    Unavailable(String),
    #[error("scorer returned a non-finite score")]
    InvalidScore,
}

impl ScorerError {
    pub fn code(&self) -> &'static str {
        match self {
            ScorerError::Unavailable(_) => "scorer.unavailable",
            ScorerError::InvalidScore => "scorer.invalid_score",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ScoreRequest {
    pub text: String,
    pub domain: String,
    pub prompt_id: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScoreResponse {
    pub score: f64,
}

pub trait Scorer: Send + Sync {
    /// Raw score as returned by the backend.
    fn raw_score(&self, req: &ScoreRequest) -> Result<f64, ScorerError>;

    /// Score clamped to `[0, 10]`.
    fn score(&self, text: &str, domain: &str, prompt_id: &str) -> Result<f64, ScorerError> {
        let req = ScoreRequest {
            text: text.to_owned(),
            domain: domain.to_owned(),
            prompt_id: prompt_id.to_owned(),
        };
        clamp_score(self.raw_score(&req)?)
    }
}

pub fn clamp_score(raw: f64) -> Result<f64, ScorerError> {
    if !raw.is_finite() {
        return Err(ScorerError::InvalidScore);
    }
    Ok(raw.clamp(0.0, 10.0))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HttpScorerConfig {
    pub url: String,
    #[serde(default = "default_timeout_ms")]
    pub timeout_ms: u64,
    #[serde(default = "default_retries")]
    pub retries: u32,
}

fn default_timeout_ms() -> u64 {
    30_000
}

fn default_retries() -> u32 {
    2
}

/// Blocking HTTP client for a scoring service.
#[derive(Debug)]
pub struct HttpScorer {
    cfg: HttpScorerConfig,
    client: reqwest::blocking::Client,
}

impl HttpScorer {
    pub fn new(cfg: HttpScorerConfig) -> Result<Self, ScorerError> {
        let client = reqwest::blocking::Client::builder()
            .timeout(Duration::from_millis(cfg.timeout_ms))
            .build()
            .map_err(|e| ScorerError::Unavailable(e.to_string()))?;
        Ok(Self { cfg, client })
    }

    fn attempt(&self, req: &ScoreRequest) -> Result<f64, String> {
        let resp = self
            .client
            .post(&self.cfg.url)
            .json(req)
            .send()
            .map_err(|e| e.to_string())?;
        let status = resp.status();
        if !status.is_success() {
            return Err(format!("HTTP {status}"));
        }
        let body: ScoreResponse = resp.json().map_err(|e| e.to_string())?;
        Ok(body.score)
    }
}

impl Scorer for HttpScorer {
    fn raw_score(&self, req: &ScoreRequest) -> Result<f64, ScorerError> {
        let mut last = String::new();
        for attempt in 0..=self.cfg.retries {
            match self.attempt(req) {
                Ok(score) => return Ok(score),
                Err(e) => {
                    log::debug!("scorer attempt {} failed: {e}", attempt + 1);
                    last = e;
                }
            }
        }
        Err(ScorerError::Unavailable(last))
    }
}

/// Deterministic scorer: the first rule whose keyword occurs in the text
/// decides the score, otherwise `default`.
#[derive(Debug, Clone, Default)]
pub struct StubScorer {
    pub default: f64,
    pub rules: Vec<(String, f64)>,
}

impl StubScorer {
    pub fn fixed(score: f64) -> Self {
        Self {
            default: score,
            rules: Vec::new(),
        }
    }

    pub fn with_rule(mut self, keyword: impl Into<String>, score: f64) -> Self {
        self.rules.push((keyword.into(), score));
        self
    }
}

impl Scorer for StubScorer {
    fn raw_score(&self, req: &ScoreRequest) -> Result<f64, ScorerError> {
        if req.prompt_id != QUALITY_PROMPT {
            return Err(ScorerError::Unavailable(format!(
                "stub has no prompt {:?}",
                req.prompt_id
            )));
        }
        Ok(self
            .rules
            .iter()
            .find(|(k, _)| req.text.contains(k.as_str()))
            .map_or(self.default, |(_, s)| *s))
    }
}
