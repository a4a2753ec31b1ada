//! The scorer contract plus its simulated and remote implementations.
//!
//! Scores use the human-preference ×100 scale, so typical readings sit in the
//! 20–30 band.
//!
//! The simulated scorer is a deterministic function of `(query, prompt, seed)`:
//!
//! ```text
//! score = 20
//!       + 4 · coverage     fraction of non-stopword query terms present in the prompt
//!       + min(4, 0.5 · q)  q = distinct quality-vocabulary words in the prompt
//!       + length           2·w/30 below 30 words, 2 for 30..=60, linear to 0 at 120
//!       + noise            0.5 · u, u = top 53 bits of SHA-256(seed ␟ query ␟ prompt) / 2^53
//! ```
//!
//! `␟` is U+001F and the seed is written in decimal. The model sidecar's mock
//! mode reproduces the same formula.

use std::collections::BTreeSet;
use std::fmt;
use std::time::Duration;

use base64::Engine;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::http;
use crate::retry::{RetryError, RetryPolicy};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ScoringError {
    #[error("prompt must not be empty")]
    InvalidPrompt,
    #[error("cannot average an empty batch")]
    EmptyBatch,
    #[error("score must be finite, got {0}")]
    NonFinite(f64),
    #[error("scorer unavailable after {attempts} attempt(s): {message}")]
    ScorerUnavailable { attempts: u32, message: String },
    #[error("malformed score response: {0}")]
    MalformedScore(String),
    #[error("image generation failed: {0}")]
    ImageGeneration(String),
}

/// A finite score value.
#[derive(Debug, Clone, Copy, PartialEq, PartialOrd, Serialize, Deserialize)]
#[serde(try_from = "f64", into = "f64")]
pub struct ScoreValue(f64);

impl ScoreValue {
    pub fn new(value: f64) -> Result<Self, ScoringError> {
        if value.is_finite() {
            Ok(Self(value))
        } else {
            Err(ScoringError::NonFinite(value))
        }
    }

    pub fn value(self) -> f64 {
        self.0
    }
}

impl TryFrom<f64> for ScoreValue {
    type Error = ScoringError;

    fn try_from(value: f64) -> Result<Self, Self::Error> {
        Self::new(value)
    }
}

impl From<ScoreValue> for f64 {
    fn from(v: ScoreValue) -> f64 {
        v.0
    }
}

impl fmt::Display for ScoreValue {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        fmt::Display::fmt(&self.0, f)
    }
}

pub fn mean_score(scores: &[ScoreValue]) -> Result<ScoreValue, ScoringError> {
    if scores.is_empty() {
        return Err(ScoringError::EmptyBatch);
    }
    // Running mean: exact when every score is equal.
    let mut mean = 0.0;
    for (i, s) in scores.iter().enumerate() {
        mean += (s.0 - mean) / (i + 1) as f64;
    }
    ScoreValue::new(mean)
}

pub const QUALITY_VOCABULARY: [&str; 16] = [
    "lighting",
    "composition",
    "detailed",
    "serene",
    "vibrant",
    "cinematic",
    "dramatic",
    "atmospheric",
    "intricate",
    "textured",
    "colorful",
    "golden",
    "soft",
    "sharp",
    "panoramic",
    "ethereal",
];

pub const STOPWORDS: [&str; 32] = [
    "a", "an", "and", "are", "as", "at", "be", "by", "for", "from", "in", "into", "is", "it",
    "its", "of", "on", "or", "that", "the", "their", "this", "to", "with", "you", "your", "each",
    "every", "all", "so", "than", "then",
];

pub const BASE_SCORE: f64 = 20.0;
pub const MAX_COVERAGE_POINTS: f64 = 4.0;
pub const MAX_QUALITY_POINTS: f64 = 4.0;
pub const QUALITY_POINTS_PER_WORD: f64 = 0.5;
pub const MAX_LENGTH_POINTS: f64 = 2.0;
pub const MAX_NOISE: f64 = 0.5;

/// Lowercased alphanumeric runs.
pub fn tokens(text: &str) -> Vec<String> {
    text.split(|c: char| !c.is_alphanumeric())
        .filter(|t| !t.is_empty())
        .map(str::to_lowercase)
        .collect()
}

pub fn is_stopword(token: &str) -> bool {
    STOPWORDS.contains(&token)
}

pub fn is_quality_word(token: &str) -> bool {
    QUALITY_VOCABULARY.contains(&token)
}

/// Per-component breakdown of a simulated score.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SimScoreBreakdown {
    pub coverage: f64,
    pub quality: f64,
    pub length: f64,
    pub noise: f64,
}

impl SimScoreBreakdown {
    pub fn total(&self) -> f64 {
        BASE_SCORE + self.coverage + self.quality + self.length + self.noise
    }
}

fn query_terms(query: &str) -> BTreeSet<String> {
    let all: BTreeSet<String> = tokens(query).into_iter().collect();
    let content: BTreeSet<String> = all.iter().filter(|t| !is_stopword(t)).cloned().collect();
    if content.is_empty() {
        all
    } else {
        content
    }
}

pub fn coverage_points(query: &str, prompt: &str) -> f64 {
    let terms = query_terms(query);
    if terms.is_empty() {
        return MAX_COVERAGE_POINTS;
    }
    let present: BTreeSet<String> = tokens(prompt).into_iter().collect();
    let hit = terms.iter().filter(|t| present.contains(*t)).count();
    MAX_COVERAGE_POINTS * hit as f64 / terms.len() as f64
}

pub fn quality_points(prompt: &str) -> f64 {
    let distinct: BTreeSet<String> = tokens(prompt)
        .into_iter()
        .filter(|t| is_quality_word(t))
        .collect();
    (QUALITY_POINTS_PER_WORD * distinct.len() as f64).min(MAX_QUALITY_POINTS)
}

/// Peaks at 30–60 words, ramps up from zero below and decays to zero at 120.
pub fn length_points(words: usize) -> f64 {
    let w = words as f64;
    if words < 30 {
        MAX_LENGTH_POINTS * w / 30.0
    } else if words <= 60 {
        MAX_LENGTH_POINTS
    } else {
        MAX_LENGTH_POINTS * (1.0 - (w - 60.0) / 60.0).max(0.0)
    }
}

pub fn hash_noise(query: &str, prompt: &str, seed: u64) -> f64 {
    let mut hasher = Sha256::new();
    hasher.update(seed.to_string().as_bytes());
    hasher.update([0x1f]);
    hasher.update(query.as_bytes());
    hasher.update([0x1f]);
    hasher.update(prompt.as_bytes());
    let digest = hasher.finalize();
    let mut head = [0u8; 8];
    head.copy_from_slice(&digest[..8]);
    let unit = (u64::from_be_bytes(head) >> 11) as f64 / (1u64 << 53) as f64;
    MAX_NOISE * unit
}

pub fn sim_score_breakdown(
    query: &str,
    prompt: &str,
    seed: u64,
) -> Result<SimScoreBreakdown, ScoringError> {
    if prompt.trim().is_empty() {
        return Err(ScoringError::InvalidPrompt);
    }
    Ok(SimScoreBreakdown {
        coverage: coverage_points(query, prompt),
        quality: quality_points(prompt),
        length: length_points(prompt.split_whitespace().count()),
        noise: hash_noise(query, prompt, seed),
    })
}

pub fn sim_score(query: &str, prompt: &str, seed: u64) -> Result<ScoreValue, ScoringError> {
    ScoreValue::new(sim_score_breakdown(query, prompt, seed)?.total())
}

/// `S(query, prompt, image)`. Implementations that score text directly
/// ignore the image.
pub trait Scorer: Send + Sync {
    fn score(
        &self,
        query: &str,
        prompt: &str,
        image: Option<&[u8]>,
    ) -> Result<ScoreValue, ScoringError>;

    /// Whether the scorer wants an image rendered before scoring.
    fn wants_image(&self) -> bool {
        false
    }
}

#[derive(Debug, Clone, Copy)]
pub struct SimScorer {
    pub seed: u64,
}

impl Scorer for SimScorer {
    fn score(
        &self,
        query: &str,
        prompt: &str,
        _image: Option<&[u8]>,
    ) -> Result<ScoreValue, ScoringError> {
        sim_score(query, prompt, self.seed)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum ScorerKind {
    Simulated { sim_seed: u64 },
    Remote { endpoint: String },
}

impl Default for ScorerKind {
    fn default() -> Self {
        ScorerKind::Simulated { sim_seed: 0 }
    }
}

#[derive(Serialize)]
struct ScoreRequest<'a> {
    query: &'a str,
    prompt: &'a str,
    #[serde(skip_serializing_if = "Option::is_none")]
    image_b64: Option<String>,
}

/// Client for the sidecar's `POST {endpoint}/score`.
pub struct RemoteScorer {
    endpoint: String,
    agent: ureq::Agent,
    retry: RetryPolicy,
}

impl RemoteScorer {
    pub fn new(endpoint: impl Into<String>, retry: RetryPolicy) -> Self {
        Self {
            endpoint: endpoint.into(),
            agent: http::agent(Duration::from_secs(120)),
            retry,
        }
    }

    pub fn endpoint(&self) -> &str {
        &self.endpoint
    }
}

/// Extracts a finite `score` number from a response body.
pub fn parse_score_body(body: &str) -> Result<ScoreValue, ScoringError> {
    let value: serde_json::Value =
        serde_json::from_str(body).map_err(|e| ScoringError::MalformedScore(e.to_string()))?;
    let score = value
        .get("score")
        .ok_or_else(|| ScoringError::MalformedScore("missing `score` field".into()))?;
    let number = score
        .as_f64()
        .ok_or_else(|| ScoringError::MalformedScore(format!("`score` is not a number: {score}")))?;
    ScoreValue::new(number)
        .map_err(|_| ScoringError::MalformedScore(format!("non-finite score {number}")))
}

fn unavailable(err: RetryError<String>) -> ScoringError {
    match err {
        RetryError::Exhausted { attempts, last } => ScoringError::ScorerUnavailable {
            attempts,
            message: last,
        },
        RetryError::Fatal { attempt, error } => ScoringError::ScorerUnavailable {
            attempts: attempt,
            message: error,
        },
    }
}

impl Scorer for RemoteScorer {
    fn score(
        &self,
        query: &str,
        prompt: &str,
        image: Option<&[u8]>,
    ) -> Result<ScoreValue, ScoringError> {
        if prompt.trim().is_empty() {
            return Err(ScoringError::InvalidPrompt);
        }
        let body = ScoreRequest {
            query,
            prompt,
            image_b64: image.map(|bytes| base64::engine::general_purpose::STANDARD.encode(bytes)),
        };
        let url = http::join_url(&self.endpoint, "score");
        let (resp, _) = self
            .retry
            .run(|_| http::classify(http::post_json(&self.agent, &url, None, &body)))
            .map_err(unavailable)?;
        parse_score_body(&resp.body)
    }

    fn wants_image(&self) -> bool {
        true
    }
}

/// Renders an image for a refined prompt; returns encoded image bytes.
pub trait ImageGenerator: Send + Sync {
    fn generate(&self, prompt: &str) -> Result<Vec<u8>, ScoringError>;
}

#[derive(Serialize)]
struct GenerateRequest<'a> {
    prompt: &'a str,
    #[serde(skip_serializing_if = "Option::is_none")]
    seed: Option<u64>,
}

/// Client for the sidecar's `POST {endpoint}/generate`.
pub struct SidecarImageClient {
    endpoint: String,
    seed: Option<u64>,
    agent: ureq::Agent,
    retry: RetryPolicy,
}

impl SidecarImageClient {
    pub fn new(endpoint: impl Into<String>, seed: Option<u64>, retry: RetryPolicy) -> Self {
        Self {
            endpoint: endpoint.into(),
            seed,
            agent: http::agent(Duration::from_secs(300)),
            retry,
        }
    }
}

impl ImageGenerator for SidecarImageClient {
    fn generate(&self, prompt: &str) -> Result<Vec<u8>, ScoringError> {
        let url = http::join_url(&self.endpoint, "generate");
        let body = GenerateRequest {
            prompt,
            seed: self.seed,
        };
        let (resp, _) = self
            .retry
            .run(|_| http::classify(http::post_json(&self.agent, &url, None, &body)))
            .map_err(|e| ScoringError::ImageGeneration(unavailable(e).to_string()))?;
        let value: serde_json::Value = serde_json::from_str(&resp.body)
            .map_err(|e| ScoringError::ImageGeneration(e.to_string()))?;
        let encoded = value
            .get("image_b64")
            .and_then(|v| v.as_str())
            .ok_or_else(|| ScoringError::ImageGeneration("missing `image_b64` field".into()))?;
        base64::engine::general_purpose::STANDARD
            .decode(encoded)
            .map_err(|e| ScoringError::ImageGeneration(e.to_string()))
    }
}
