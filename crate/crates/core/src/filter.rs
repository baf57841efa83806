//! Corpus filtering: heuristic rules, n-gram repetition scoring and an
//! optional external quality scorer.
//!
//! Text records go through all three stages. Multimodal records only get
//! repetition scoring and the heuristic rules. Decisions, in priority order:
//!
//! * `drop`: any heuristic rule fired, or the quality score is below the
//!   quality threshold (default 7);
//! * `review`: the repetition score is below the repetition threshold
//!   (default 3);
//! * `keep`: everything else.

pub mod scorer;

use crate::manifest::{parse_record, ManifestRecord};
use crate::modality::Modality;
use scorer::{Scorer, QUALITY_PROMPT, REPETITION_PROMPT};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use std::collections::{BTreeMap, HashMap, HashSet};
use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum FilterError {
    #[error("score {0} outside [0, 10]")]
    ScoreRange(f64),
    #[error("invalid rule config: {0}")]
    Config(String),
}

impl FilterError {
    pub fn code(&self) -> &'static str {
        match self {
            FilterError::ScoreRange(_) => "filter.score_range",
            FilterError::Config(_) => "filter.config",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RuleConfig {
    pub max_line_length: usize,
    /// Minimum number of non-whitespace characters in a record.
    pub min_line_length: usize,
    pub max_zero_run: usize,
    pub max_duplicate_line_fraction: f64,
    pub ngram_order: usize,
    /// Repeated n-gram share above which the `ngram_repeat` rule drops a
    /// record outright. At 1.0 the rule never fires and repetition is left
    /// to the review threshold.
    pub max_ngram_repeat_fraction: f64,
}

impl Default for RuleConfig {
    fn default() -> Self {
        Self {
            max_line_length: 8192,
            min_line_length: 1,
            max_zero_run: 256,
            max_duplicate_line_fraction: 0.5,
            ngram_order: 8,
            max_ngram_repeat_fraction: 1.0,
        }
    }
}

impl RuleConfig {
    pub fn validate(&self) -> Result<(), FilterError> {
        let frac_ok = |f: f64| (0.0..=1.0).contains(&f);
        if self.max_line_length == 0 || self.max_zero_run == 0 || self.ngram_order == 0 {
            return Err(FilterError::Config(
                "length thresholds and ngram_order must be positive".into(),
            ));
        }
        if !frac_ok(self.max_duplicate_line_fraction) || !frac_ok(self.max_ngram_repeat_fraction) {
            return Err(FilterError::Config("fractions must lie in [0, 1]".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Thresholds {
    pub quality: f64,
    pub repetition: f64,
}

impl Default for Thresholds {
    fn default() -> Self {
        Self {
            quality: 7.0,
            repetition: 3.0,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FilterConfig {
    pub rules: RuleConfig,
    pub thresholds: Thresholds,
    /// Also ask the scorer for a repetition score and keep the lower one.
    pub scorer_repetition: bool,
}

impl FilterConfig {
    /// Hex SHA-256 of the canonical JSON form.
    pub fn fingerprint(&self) -> String {
        let json = serde_json::to_vec(self).expect("config serializes");
        Sha256::digest(&json)
            .iter()
            .map(|b| format!("{b:02x}"))
            .collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Rule {
    TooShort,
    LineTooLong,
    ZeroRun,
    DuplicateLines,
    NgramRepeat,
}

impl Rule {
    pub fn as_str(&self) -> &'static str {
        match self {
            Rule::TooShort => "too_short",
            Rule::LineTooLong => "line_too_long",
            Rule::ZeroRun => "zero_run",
            Rule::DuplicateLines => "duplicate_lines",
            Rule::NgramRepeat => "ngram_repeat",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RuleHit {
    pub rule: Rule,
    /// Byte offset of the first offending span.
    pub offset: usize,
    pub detail: String,
}

/// Runs every rule; an empty result means the text is clean.
pub fn heuristic_scan(text: &str, rules: &RuleConfig) -> Vec<RuleHit> {
    let mut hits = Vec::new();

    let visible = text.chars().filter(|c| !c.is_whitespace()).count();
    if visible < rules.min_line_length {
        hits.push(RuleHit {
            rule: Rule::TooShort,
            offset: 0,
            detail: format!("{visible} visible chars < {}", rules.min_line_length),
        });
    }

    let lines = line_offsets(text);
    let long: Vec<_> = lines
        .iter()
        .filter(|(_, l)| l.chars().count() > rules.max_line_length)
        .collect();
    if let Some((off, _)) = long.first() {
        hits.push(RuleHit {
            rule: Rule::LineTooLong,
            offset: *off,
            detail: format!(
                "{} line(s) over {} chars",
                long.len(),
                rules.max_line_length
            ),
        });
    }

    if let Some((off, len)) = longest_zero_run(text) {
        if len > rules.max_zero_run {
            hits.push(RuleHit {
                rule: Rule::ZeroRun,
                offset: off,
                detail: format!("run of {len} zeros > {}", rules.max_zero_run),
            });
        }
    }

    if let Some((frac, off)) = duplicate_line_fraction(&lines) {
        if frac > rules.max_duplicate_line_fraction {
            hits.push(RuleHit {
                rule: Rule::DuplicateLines,
                offset: off,
                detail: format!(
                    "{frac:.3} of lines duplicated > {}",
                    rules.max_duplicate_line_fraction
                ),
            });
        }
    }

    let ngram = repeated_ngram_fraction(text, rules.ngram_order);
    if ngram > rules.max_ngram_repeat_fraction {
        hits.push(RuleHit {
            rule: Rule::NgramRepeat,
            offset: 0,
            detail: format!("{ngram:.3} of {}-grams repeated", rules.ngram_order),
        });
    }
    hits
}

fn line_offsets(text: &str) -> Vec<(usize, &str)> {
    let mut off = 0;
    text.split('\n')
        .map(|l| {
            let start = off;
            off += l.len() + 1;
            (start, l)
        })
        .collect()
}

fn longest_zero_run(text: &str) -> Option<(usize, usize)> {
    let mut best: Option<(usize, usize)> = None;
    let mut start = None;
    for (i, b) in text
        .bytes()
        .enumerate()
        .chain(std::iter::once((text.len(), b'\n')))
    {
        match (b == b'0', start) {
            (true, None) => start = Some(i),
            (false, Some(s)) => {
                if best.is_none_or(|(_, l)| i - s > l) {
                    best = Some((s, i - s));
                }
                start = None;
            }
            _ => {}
        }
    }
    best
}

/// Share of non-blank lines whose trimmed content occurs more than once,
/// with the offset of the first such line.
fn duplicate_line_fraction(lines: &[(usize, &str)]) -> Option<(f64, usize)> {
    let nonblank: Vec<(usize, &str)> = lines
        .iter()
        .map(|(o, l)| (*o, l.trim()))
        .filter(|(_, l)| !l.is_empty())
        .collect();
    if nonblank.len() < 2 {
        return None;
    }
    let mut counts: HashMap<&str, usize> = HashMap::new();
    for (_, l) in &nonblank {
        *counts.entry(l).or_default() += 1;
    }
    let dup: Vec<_> = nonblank.iter().filter(|(_, l)| counts[l] > 1).collect();
    let first = dup.first()?.0;
    Some((dup.len() as f64 / nonblank.len() as f64, first))
}

/// Share of word n-gram occurrences that repeat an earlier occurrence.
pub fn repeated_ngram_fraction(text: &str, order: usize) -> f64 {
    let words: Vec<&str> = text.split_whitespace().collect();
    if order == 0 || words.len() < order {
        return 0.0;
    }
    let total = words.len() - order + 1;
    let mut seen = HashSet::with_capacity(total);
    let repeats = words.windows(order).filter(|w| !seen.insert(*w)).count();
    repeats as f64 / total as f64
}

/// `10 * (1 - repeated n-gram fraction)`; 10 means no repetition.
pub fn repetition_score(text: &str, rules: &RuleConfig) -> f64 {
    10.0 * (1.0 - repeated_ngram_fraction(text, rules.ngram_order))
}

/// `true` when the score passes, i.e. is not strictly below the threshold.
pub fn quality_gate(score: f64, threshold: f64) -> Result<bool, FilterError> {
    if !(0.0..=10.0).contains(&score) {
        return Err(FilterError::ScoreRange(score));
    }
    Ok(score >= threshold)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Decision {
    Keep,
    Drop,
    Review,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FilterVerdict {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub quality_score: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub repetition_score: Option<f64>,
    pub rule_hits: Vec<RuleHit>,
    pub decision: Decision,
    /// The scorer was configured but unavailable for this record.
    #[serde(default, skip_serializing_if = "std::ops::Not::not")]
    pub degraded: bool,
}

pub fn filter_record(
    record: &ManifestRecord,
    cfg: &FilterConfig,
    scorer: Option<&dyn Scorer>,
) -> FilterVerdict {
    let text = record.text();
    let rule_hits = heuristic_scan(&text, &cfg.rules);
    let mut repetition = repetition_score(&text, &cfg.rules);
    let mut quality = None;
    let mut degraded = false;

    if let Some(scorer) = scorer {
        if record.modality == Modality::Text {
            match scorer.score(&text, record.domain(), QUALITY_PROMPT) {
                Ok(s) => quality = Some(s),
                Err(e) => {
                    log::warn!("record {}: quality stage skipped: {e}", record.id);
                    degraded = true;
                }
            }
        }
        if cfg.scorer_repetition {
            match scorer.score(&text, record.domain(), REPETITION_PROMPT) {
                Ok(s) => repetition = repetition.min(s),
                Err(e) => {
                    log::warn!("record {}: scorer repetition skipped: {e}", record.id);
                    degraded = true;
                }
            }
        }
    }

    let quality_failed = quality.is_some_and(|q| q < cfg.thresholds.quality);
    let decision = if !rule_hits.is_empty() || quality_failed {
        Decision::Drop
    } else if repetition < cfg.thresholds.repetition {
        Decision::Review
    } else {
        Decision::Keep
    };
    FilterVerdict {
        quality_score: quality,
        repetition_score: Some(repetition),
        rule_hits,
        decision,
        degraded,
    }
}

/// A non-kept record with its verdict, or the parse error that rejected it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoutedRecord {
    pub line: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub id: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub verdict: Option<FilterVerdict>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
    pub record: serde_json::Value,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct FilterSummary {
    pub input: u64,
    pub keep: u64,
    pub drop: u64,
    pub review: u64,
    pub parse_errors: u64,
    pub degraded: u64,
    pub rule_hits: BTreeMap<Rule, u64>,
    pub config_fingerprint: String,
    pub config: FilterConfig,
}

impl FilterSummary {
    /// Adds another shard's counts.
    pub fn merge(&mut self, other: &FilterSummary) {
        self.input += other.input;
        self.keep += other.keep;
        self.drop += other.drop;
        self.review += other.review;
        self.parse_errors += other.parse_errors;
        self.degraded += other.degraded;
        for (r, n) in &other.rule_hits {
            *self.rule_hits.entry(*r).or_default() += n;
        }
    }
}

#[derive(Debug, Clone, Default)]
pub struct CorpusOutput {
    /// Kept lines, verbatim.
    pub kept: Vec<String>,
    pub dropped: Vec<RoutedRecord>,
    pub review: Vec<RoutedRecord>,
    pub summary: FilterSummary,
}

/// Outcome for one manifest line.
pub enum LineOutcome {
    Verdict(Box<ManifestRecord>, FilterVerdict),
    ParseError(String),
}

pub fn filter_line(
    line_no: usize,
    line: &str,
    cfg: &FilterConfig,
    scorer: Option<&dyn Scorer>,
) -> LineOutcome {
    match parse_record(line_no, line) {
        Ok(rec) => {
            let v = filter_record(&rec, cfg, scorer);
            LineOutcome::Verdict(Box::new(rec), v)
        }
        Err(e) => LineOutcome::ParseError(e.to_string()),
    }
}

/// Routes already-evaluated lines into kept / dropped / review outputs.
pub fn route_outcomes<'a>(
    outcomes: impl IntoIterator<Item = (usize, &'a str, LineOutcome)>,
    cfg: &FilterConfig,
) -> CorpusOutput {
    let mut out = CorpusOutput {
        summary: FilterSummary {
            config_fingerprint: cfg.fingerprint(),
            config: cfg.clone(),
            ..FilterSummary::default()
        },
        ..CorpusOutput::default()
    };
    for (line_no, line, outcome) in outcomes {
        out.summary.input += 1;
        let raw = || {
            serde_json::from_str(line)
                .unwrap_or_else(|_| serde_json::Value::String(line.to_owned()))
        };
        match outcome {
            LineOutcome::ParseError(err) => {
                out.summary.parse_errors += 1;
                out.summary.drop += 1;
                out.dropped.push(RoutedRecord {
                    line: line_no,
                    id: None,
                    verdict: None,
                    error: Some(format!("parse_error: {err}")),
                    record: raw(),
                });
            }
            LineOutcome::Verdict(rec, verdict) => {
                for h in &verdict.rule_hits {
                    *out.summary.rule_hits.entry(h.rule).or_default() += 1;
                }
                if verdict.degraded {
                    out.summary.degraded += 1;
                }
                let routed = |verdict| RoutedRecord {
                    line: line_no,
                    id: Some(rec.id.clone()),
                    verdict: Some(verdict),
                    error: None,
                    record: raw(),
                };
                match verdict.decision {
                    Decision::Keep => {
                        out.summary.keep += 1;
                        out.kept.push(line.to_owned());
                    }
                    Decision::Drop => {
                        out.summary.drop += 1;
                        out.dropped.push(routed(verdict));
                    }
                    Decision::Review => {
                        out.summary.review += 1;
                        out.review.push(routed(verdict));
                    }
                }
            }
        }
    }
    out
}

/// Filters a manifest given as `(line number, line)` pairs.
pub fn filter_corpus<'a>(
    lines: impl IntoIterator<Item = (usize, &'a str)>,
    cfg: &FilterConfig,
    scorer: Option<&dyn Scorer>,
) -> CorpusOutput {
    route_outcomes(
        lines
            .into_iter()
            .map(|(n, l)| (n, l, filter_line(n, l, cfg, scorer))),
        cfg,
    )
}
