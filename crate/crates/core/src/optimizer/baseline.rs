use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::evaluate::score_prompt;
use super::{sample_query_batch, OptimizerError, RunConfig, Services};
use crate::agents::{Instruction, ScoredPrompt};
use crate::runlog::RecordBody;
use crate::scoring::{mean_score, ScoreValue};
use crate::selector::ArmId;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BaselineSystem {
    /// The plain refinement instruction.
    BaselineInstruction,
    /// Professional prompts fetched per query.
    ProfessionalPrompts,
    OptimizedInstruction,
}

impl BaselineSystem {
    pub fn label(self) -> &'static str {
        match self {
            BaselineSystem::BaselineInstruction => "baseline instruction",
            BaselineSystem::ProfessionalPrompts => "professional prompts",
            BaselineSystem::OptimizedInstruction => "optimized instruction",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BaselineSummary {
    pub system: BaselineSystem,
    pub instruction: Option<String>,
    pub items: Vec<ScoredPrompt>,
    /// `None` when nothing could be scored for this system.
    pub mean: Option<ScoreValue>,
}

#[derive(Debug, Clone)]
pub struct BaselineComparison {
    pub queries: Vec<String>,
    pub rows: Vec<BaselineSummary>,
    pub events: Vec<RecordBody>,
}

impl BaselineComparison {
    pub fn mean_of(&self, system: BaselineSystem) -> Option<ScoreValue> {
        self.rows
            .iter()
            .find(|r| r.system == system)
            .and_then(|r| r.mean)
    }
}

fn instruction_row(
    system: BaselineSystem,
    text: &str,
    queries: &[String],
    services: &Services,
    events: &mut Vec<RecordBody>,
) -> Result<BaselineSummary, OptimizerError> {
    let instruction = Instruction::initial(ArmId(u64::MAX), text)?;
    let mut items = Vec::new();
    for query in queries {
        let mut prompt = None;
        for _ in 0..2 {
            match services.agent.refine(&instruction, query) {
                Ok(ex) => {
                    prompt = Some(ex.raw_response);
                    break;
                }
                Err(e) if e.is_soft() => continue,
                Err(e) => {
                    return Err(OptimizerError::IterationAbort {
                        query: query.clone(),
                        cause: Box::new(e.into()),
                    })
                }
            }
        }
        let Some(prompt) = prompt else {
            events.push(RecordBody::warning(
                None,
                format!("{}: query `{query}` skipped", system.label()),
            ));
            continue;
        };
        let score =
            score_prompt(services, query, &prompt).map_err(|e| OptimizerError::IterationAbort {
                query: query.clone(),
                cause: Box::new(e.into()),
            })?;
        items.push(ScoredPrompt {
            query: query.clone(),
            prompt,
            score,
        });
    }
    summarize(system, Some(text.to_string()), items)
}

fn summarize(
    system: BaselineSystem,
    instruction: Option<String>,
    items: Vec<ScoredPrompt>,
) -> Result<BaselineSummary, OptimizerError> {
    let scores: Vec<ScoreValue> = items.iter().map(|i| i.score).collect();
    let mean = if scores.is_empty() {
        None
    } else {
        Some(mean_score(&scores)?)
    };
    Ok(BaselineSummary {
        system,
        instruction,
        items,
        mean,
    })
}

/// Scores the baseline instruction, professional prompts and the optimized
/// instruction over the same sampled queries (up to `config.baseline_queries`).
///
/// An unavailable professional source only costs that row; it is logged as
/// a warning.
pub fn evaluate_baselines(
    config: &RunConfig,
    services: &Services,
    baseline_instruction: &str,
    optimized_instruction: &str,
) -> Result<BaselineComparison, OptimizerError> {
    let count = config.baseline_queries.min(config.queries.len());
    if count == 0 {
        return Err(OptimizerError::InvalidConfig(
            "baseline needs at least one query".into(),
        ));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(config.rng_seed);
    let queries = sample_query_batch(&config.queries, count, &mut rng)?;
    let mut events = Vec::new();

    let baseline = instruction_row(
        BaselineSystem::BaselineInstruction,
        baseline_instruction,
        &queries,
        services,
        &mut events,
    )?;

    let mut professional = Vec::new();
    for query in &queries {
        let prompts = match services.professional.fetch(query) {
            Ok(p) => p,
            Err(e) => {
                events.push(RecordBody::warning(
                    None,
                    format!("professional source: {e}"),
                ));
                continue;
            }
        };
        for prompt in prompts {
            match score_prompt(services, query, &prompt) {
                Ok(score) => professional.push(ScoredPrompt {
                    query: query.clone(),
                    prompt,
                    score,
                }),
                Err(e) => events.push(RecordBody::warning(
                    None,
                    format!("professional prompt for `{query}` not scored: {e}"),
                )),
            }
        }
    }
    let professional = summarize(BaselineSystem::ProfessionalPrompts, None, professional)?;

    let optimized = instruction_row(
        BaselineSystem::OptimizedInstruction,
        optimized_instruction,
        &queries,
        services,
        &mut events,
    )?;

    Ok(BaselineComparison {
        queries,
        rows: vec![baseline, professional, optimized],
        events,
    })
}
