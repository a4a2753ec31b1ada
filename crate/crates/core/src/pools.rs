//! The prompt pool and the professional-prompt sources.

use std::collections::{BTreeMap, HashSet};
use std::path::{Path, PathBuf};
use std::time::Duration;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::http;
use crate::retry::RetryPolicy;
use crate::scoring::ScoreValue;
use crate::selector::ArmId;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum PoolError {
    #[error("invalid pool entry: {0}")]
    InvalidEntry(String),
    #[error("entry {0} already has a score")]
    ScoreAlreadyAttached(usize),
    #[error("no pool entry at index {0}")]
    NoSuchEntry(usize),
    #[error("professional prompt fixture `{path}`: {message}")]
    FixtureFormat { path: String, message: String },
    #[error("professional prompt source unavailable: {0}")]
    SourceUnavailable(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PromptSource {
    Generated,
    Professional,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PoolEntry {
    pub query: String,
    pub prompt_text: String,
    pub score: Option<ScoreValue>,
    pub source: PromptSource,
    pub instruction_id: Option<ArmId>,
    pub iteration: u32,
}

impl PoolEntry {
    pub fn generated(
        query: impl Into<String>,
        prompt_text: impl Into<String>,
        score: ScoreValue,
        instruction_id: ArmId,
        iteration: u32,
    ) -> Self {
        Self {
            query: query.into(),
            prompt_text: prompt_text.into(),
            score: Some(score),
            source: PromptSource::Generated,
            instruction_id: Some(instruction_id),
            iteration,
        }
    }

    pub fn professional(
        query: impl Into<String>,
        prompt_text: impl Into<String>,
        score: Option<ScoreValue>,
        iteration: u32,
    ) -> Self {
        Self {
            query: query.into(),
            prompt_text: prompt_text.into(),
            score,
            source: PromptSource::Professional,
            instruction_id: None,
            iteration,
        }
    }

    fn validate(&self) -> Result<(), PoolError> {
        if self.source == PromptSource::Generated && self.instruction_id.is_none() {
            return Err(PoolError::InvalidEntry(
                "generated entry without instruction id".into(),
            ));
        }
        if self.prompt_text.trim().is_empty() {
            return Err(PoolError::InvalidEntry("empty prompt text".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AddOutcome {
    Added(usize),
    Duplicate,
}

type EntryKey = (String, String, PromptSource, Option<ArmId>, u32);

/// Append-only store of every scored prompt, indexed by query.
#[derive(Debug, Clone, Default)]
pub struct PromptPool {
    entries: Vec<PoolEntry>,
    by_query: BTreeMap<String, Vec<usize>>,
    seen: HashSet<EntryKey>,
}

impl PromptPool {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn entries(&self) -> &[PoolEntry] {
        &self.entries
    }

    /// Appends `entry`. A repeat of the same query, prompt, source,
    /// instruction and iteration is skipped.
    pub fn add_entry(&mut self, entry: PoolEntry) -> Result<AddOutcome, PoolError> {
        entry.validate()?;
        let key = (
            entry.query.clone(),
            entry.prompt_text.clone(),
            entry.source,
            entry.instruction_id,
            entry.iteration,
        );
        if !self.seen.insert(key) {
            return Ok(AddOutcome::Duplicate);
        }
        let index = self.entries.len();
        self.by_query
            .entry(entry.query.clone())
            .or_default()
            .push(index);
        self.entries.push(entry);
        Ok(AddOutcome::Added(index))
    }

    /// Sets the score of an unscored entry. Scores are write-once.
    pub fn attach_score(&mut self, index: usize, score: ScoreValue) -> Result<(), PoolError> {
        let entry = self
            .entries
            .get_mut(index)
            .ok_or(PoolError::NoSuchEntry(index))?;
        if entry.score.is_some() {
            return Err(PoolError::ScoreAlreadyAttached(index));
        }
        entry.score = Some(score);
        Ok(())
    }

    pub fn entries_for_query(&self, query: &str) -> impl Iterator<Item = &PoolEntry> {
        self.by_query
            .get(query)
            .into_iter()
            .flatten()
            .map(move |&i| &self.entries[i])
    }

    /// Highest-scoring entry for `query`. Ties prefer professional prompts,
    /// then the earliest iteration, then insertion order.
    pub fn best_for_query(&self, query: &str) -> Option<&PoolEntry> {
        let mut best: Option<&PoolEntry> = None;
        for entry in self.entries_for_query(query) {
            let Some(score) = entry.score else { continue };
            let better = match best {
                None => true,
                Some(b) => {
                    let bs = b.score.expect("best is scored").value();
                    let s = score.value();
                    s > bs
                        || (s == bs
                            && (rank_source(entry.source), entry.iteration)
                                < (rank_source(b.source), b.iteration))
                }
            };
            if better {
                best = Some(entry);
            }
        }
        best
    }

    /// Generated entries from one instruction in one iteration, in insertion (query) order.
    pub fn entries_for_instruction(
        &self,
        instruction_id: ArmId,
        iteration: u32,
    ) -> Vec<&PoolEntry> {
        self.entries
            .iter()
            .filter(|e| {
                e.source == PromptSource::Generated
                    && e.instruction_id == Some(instruction_id)
                    && e.iteration == iteration
            })
            .collect()
    }
}

fn rank_source(source: PromptSource) -> u8 {
    match source {
        PromptSource::Professional => 0,
        PromptSource::Generated => 1,
    }
}

/// Where professional prompts come from.
pub trait ProfessionalSource: Send + Sync {
    fn fetch(&self, query: &str) -> Result<Vec<String>, PoolError>;
}

#[derive(Debug, Clone, Copy, Default)]
pub struct NoProfessionalSource;

impl ProfessionalSource for NoProfessionalSource {
    fn fetch(&self, _query: &str) -> Result<Vec<String>, PoolError> {
        Ok(Vec::new())
    }
}

/// JSON object mapping query to an array of prompt strings.
#[derive(Debug, Clone, Default)]
pub struct FixtureSource {
    prompts: BTreeMap<String, Vec<String>>,
}

impl FixtureSource {
    pub fn from_json_str(json: &str, origin: &str) -> Result<Self, PoolError> {
        let prompts = serde_json::from_str(json).map_err(|e| PoolError::FixtureFormat {
            path: origin.to_string(),
            message: e.to_string(),
        })?;
        Ok(Self { prompts })
    }

    pub fn from_path(path: &Path) -> Result<Self, PoolError> {
        let text = std::fs::read_to_string(path).map_err(|e| PoolError::FixtureFormat {
            path: path.display().to_string(),
            message: e.to_string(),
        })?;
        Self::from_json_str(&text, &path.display().to_string())
    }
}

impl ProfessionalSource for FixtureSource {
    fn fetch(&self, query: &str) -> Result<Vec<String>, PoolError> {
        if let Some(v) = self.prompts.get(query) {
            return Ok(v.clone());
        }
        let lower = query.to_lowercase();
        Ok(self
            .prompts
            .iter()
            .find(|(k, _)| k.to_lowercase() == lower)
            .map(|(_, v)| v.clone())
            .unwrap_or_default())
    }
}

/// `GET {base_url}?q=<query>` against a Lexica-style search endpoint.
pub struct LiveSource {
    base_url: String,
    max_prompts: usize,
    agent: ureq::Agent,
    retry: RetryPolicy,
}

impl LiveSource {
    pub fn new(base_url: impl Into<String>, max_prompts: usize, retry: RetryPolicy) -> Self {
        Self {
            base_url: base_url.into(),
            max_prompts,
            agent: http::agent(Duration::from_secs(30)),
            retry,
        }
    }
}

/// Accepts a top-level array of `{"prompt": ...}` objects, or an object
/// holding such an array under any key.
pub fn extract_prompts(body: &str, cap: usize) -> Result<Vec<String>, PoolError> {
    let value: serde_json::Value = serde_json::from_str(body)
        .map_err(|e| PoolError::SourceUnavailable(format!("invalid JSON: {e}")))?;
    let array = match &value {
        serde_json::Value::Array(a) => Some(a),
        serde_json::Value::Object(map) => map.values().find_map(|v| v.as_array()),
        _ => None,
    }
    .ok_or_else(|| PoolError::SourceUnavailable("response holds no result array".into()))?;
    Ok(array
        .iter()
        .filter_map(|item| item.get("prompt").and_then(|p| p.as_str()))
        .filter(|p| !p.trim().is_empty())
        .take(cap)
        .map(str::to_string)
        .collect())
}

impl ProfessionalSource for LiveSource {
    fn fetch(&self, query: &str) -> Result<Vec<String>, PoolError> {
        let (resp, _) = self
            .retry
            .run(|_| {
                http::classify(http::get_with_query(
                    &self.agent,
                    &self.base_url,
                    "q",
                    query,
                ))
            })
            .map_err(|e| {
                PoolError::SourceUnavailable(match e {
                    crate::retry::RetryError::Exhausted { last, .. } => last,
                    crate::retry::RetryError::Fatal { error, .. } => error,
                })
            })?;
        extract_prompts(&resp.body, self.max_prompts)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
#[derive(Default)]
pub enum ProfessionalSourceConfig {
    #[default]
    None,
    Fixture {
        path: PathBuf,
    },
    Live {
        base_url: String,
        #[serde(default = "default_max_prompts")]
        max_prompts: usize,
    },
}

fn default_max_prompts() -> usize {
    3
}

impl ProfessionalSourceConfig {
    pub fn build(&self, retry: RetryPolicy) -> Result<Box<dyn ProfessionalSource>, PoolError> {
        Ok(match self {
            ProfessionalSourceConfig::None => Box::new(NoProfessionalSource),
            ProfessionalSourceConfig::Fixture { path } => Box::new(FixtureSource::from_path(path)?),
            ProfessionalSourceConfig::Live {
                base_url,
                max_prompts,
            } => Box::new(LiveSource::new(base_url.clone(), *max_prompts, retry)),
        })
    }
}
