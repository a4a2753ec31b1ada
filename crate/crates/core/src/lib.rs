//! Instruction optimization for a text-to-image prompt refiner.
//!
//! A Generator agent refines naive prompts under an instruction. Refined
//! prompts are scored, a Gradient Calculator contrasts the worst
//! instruction's prompts with the best prompts seen per query, and an
//! Instruction Modifier turns that feedback into new instructions. A bandit
//! selector keeps the instruction list at a fixed capacity.

pub mod agents;
pub mod bandit_sim;
pub mod config;
pub mod http;
pub mod optimizer;
pub mod pools;
pub mod report;
pub mod retry;
pub mod runlog;
pub mod scoring;
pub mod selector;

use agents::AgentError;
use config::ConfigError;
use optimizer::OptimizerError;
use pools::PoolError;
use runlog::LogError;
use scoring::ScoringError;

pub const EXIT_OK: i32 = 0;
pub const EXIT_FAILURE: i32 = 1;
pub const EXIT_CONFIG: i32 = 2;
pub const EXIT_SERVICE: i32 = 3;
pub const EXIT_PARSE: i32 = 4;

/// Process exit code for an error: 2 config, 3 external service, 4 parse failure.
pub trait ExitStatus {
    fn exit_code(&self) -> i32;
}

impl ExitStatus for AgentError {
    fn exit_code(&self) -> i32 {
        match self {
            AgentError::ParseFailure { .. } => EXIT_PARSE,
            AgentError::AgentUnavailable { .. } | AgentError::EmptyResponse { .. } => EXIT_SERVICE,
            AgentError::MissingApiKey => EXIT_CONFIG,
            AgentError::InvalidQuery
            | AgentError::InvalidBatch(_)
            | AgentError::InvalidCount
            | AgentError::EmptyInstruction
            | AgentError::EmptyPrompt => EXIT_CONFIG,
        }
    }
}

impl ExitStatus for ScoringError {
    fn exit_code(&self) -> i32 {
        match self {
            ScoringError::MalformedScore(_) => EXIT_PARSE,
            ScoringError::ScorerUnavailable { .. } | ScoringError::ImageGeneration(_) => {
                EXIT_SERVICE
            }
            ScoringError::InvalidPrompt | ScoringError::EmptyBatch | ScoringError::NonFinite(_) => {
                EXIT_FAILURE
            }
        }
    }
}

impl ExitStatus for PoolError {
    fn exit_code(&self) -> i32 {
        match self {
            PoolError::FixtureFormat { .. } => EXIT_CONFIG,
            PoolError::SourceUnavailable(_) => EXIT_SERVICE,
            _ => EXIT_FAILURE,
        }
    }
}

impl ExitStatus for LogError {
    fn exit_code(&self) -> i32 {
        match self {
            LogError::Parse { .. } => EXIT_PARSE,
            LogError::Locked(_) | LogError::Io { .. } => EXIT_CONFIG,
            LogError::Serialize(_) => EXIT_FAILURE,
        }
    }
}

impl ExitStatus for OptimizerError {
    fn exit_code(&self) -> i32 {
        match self.root() {
            OptimizerError::InvalidConfig(_)
            | OptimizerError::InvalidBatchSize { .. }
            | OptimizerError::QueryPool { .. } => EXIT_CONFIG,
            OptimizerError::AllQueriesSkipped(_) => EXIT_SERVICE,
            OptimizerError::Agent(e) => e.exit_code(),
            OptimizerError::Scoring(e) => e.exit_code(),
            OptimizerError::Pool(e) => e.exit_code(),
            OptimizerError::Log(e) => e.exit_code(),
            OptimizerError::Selector(_) | OptimizerError::BudgetExceeded { .. } => EXIT_FAILURE,
            OptimizerError::IterationAbort { .. } => EXIT_FAILURE,
        }
    }
}

impl ExitStatus for ConfigError {
    fn exit_code(&self) -> i32 {
        match self {
            ConfigError::Run(e) => e.exit_code(),
            ConfigError::Pool(e) => e.exit_code(),
            _ => EXIT_CONFIG,
        }
    }
}
