//! The three LLM agents: Generator, Gradient Calculator and Instruction Modifier.
//!
//! Templates and parsers are pure. [`ChatAgent`] owns the transport and the
//! retry policy; [`SimTransport`] answers deterministically for offline runs.

mod client;
mod parse;
mod sim;
mod templates;

use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::scoring::ScoreValue;
use crate::selector::ArmId;

pub use client::{
    AgentSettings, ChatAgent, ChatMessage, ChatRequest, ChatTransport, HttpChatTransport,
    Preambles, ScriptedTransport, TransportError, API_KEY_ENV,
};
pub use parse::{parse_gradient_report, parse_new_instructions};
pub use sim::SimTransport;
pub use templates::{
    render_generator_prompt, render_gradient_prompt, render_modifier_prompt, BASELINE_INSTRUCTION,
    GRADIENT_FORMAT_REMINDER, MODIFIER_FORMAT_REMINDER,
};

pub type InstructionId = ArmId;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum AgentError {
    #[error("query must not be empty")]
    InvalidQuery,
    #[error("invalid batch: {0}")]
    InvalidBatch(String),
    #[error("number of new instructions must be >= 1")]
    InvalidCount,
    #[error("instruction text must not be empty")]
    EmptyInstruction,
    #[error("rendered prompt must not be empty")]
    EmptyPrompt,
    #[error("could not parse {what} from model output")]
    ParseFailure { what: &'static str, raw: String },
    #[error("{role} unavailable after {attempts} attempt(s): {message}")]
    AgentUnavailable {
        role: AgentRole,
        attempts: u32,
        message: String,
    },
    #[error("{role} returned an empty response")]
    EmptyResponse { role: AgentRole },
    #[error("environment variable {API_KEY_ENV} is not set")]
    MissingApiKey,
}

impl AgentError {
    /// Failures worth one more try with the same inputs.
    pub fn is_soft(&self) -> bool {
        matches!(
            self,
            AgentError::EmptyResponse { .. } | AgentError::ParseFailure { .. }
        )
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AgentRole {
    Generator,
    GradientCalculator,
    InstructionModifier,
}

impl fmt::Display for AgentRole {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            AgentRole::Generator => "generator",
            AgentRole::GradientCalculator => "gradient_calculator",
            AgentRole::InstructionModifier => "instruction_modifier",
        })
    }
}

/// A candidate system instruction for the Generator.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Instruction {
    pub id: InstructionId,
    pub text: String,
    pub parent_id: Option<InstructionId>,
    pub created_at: u32,
}

impl Instruction {
    pub fn initial(id: InstructionId, text: impl Into<String>) -> Result<Self, AgentError> {
        let text = text.into();
        if text.trim().is_empty() {
            return Err(AgentError::EmptyInstruction);
        }
        Ok(Self {
            id,
            text,
            parent_id: None,
            created_at: 0,
        })
    }
}

/// Hands out fresh instruction ids.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct IdAllocator {
    next: u64,
}

impl IdAllocator {
    pub fn starting_at(next: u64) -> Self {
        Self { next }
    }

    pub fn allocate(&mut self) -> InstructionId {
        let id = ArmId(self.next);
        self.next += 1;
        id
    }
}

/// The textual gradient: what went wrong and how to fix the instruction.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct GradientReport {
    pub inferences: Vec<String>,
    pub improvements: Vec<String>,
}

/// One `(query, prompt, score)` row fed to the Gradient Calculator.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoredPrompt {
    pub query: String,
    pub prompt: String,
    pub score: ScoreValue,
}

/// Audit record of one chat completion.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AgentExchange {
    pub agent_role: AgentRole,
    pub rendered_prompt: String,
    pub raw_response: String,
    pub latency_ms: u64,
    pub attempt: u32,
}
