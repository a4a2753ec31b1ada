use std::thread;

use super::{OptimizerError, Services};
use crate::agents::Instruction;
use crate::pools::PoolEntry;
use crate::scoring::{mean_score, ScoreValue, ScoringError};
use crate::selector::ArmStats;

#[derive(Debug, Clone)]
pub struct Evaluation {
    pub mean: ScoreValue,
    /// One entry per scored query, in batch order.
    pub entries: Vec<PoolEntry>,
    pub skipped: Vec<String>,
}

enum QueryOutcome {
    Scored { prompt: String, score: ScoreValue },
    Skipped,
}

/// Scores a prompt, rendering an image first when the scorer wants one.
pub(super) fn score_prompt(
    services: &Services,
    query: &str,
    prompt: &str,
) -> Result<ScoreValue, ScoringError> {
    let image = match (&services.images, services.scorer.wants_image()) {
        (Some(generator), true) => Some(generator.generate(prompt)?),
        _ => None,
    };
    services.scorer.score(query, prompt, image.as_deref())
}

fn evaluate_query(
    services: &Services,
    instruction: &Instruction,
    query: &str,
) -> Result<QueryOutcome, OptimizerError> {
    let abort = |cause: OptimizerError| OptimizerError::IterationAbort {
        query: query.to_string(),
        cause: Box::new(cause),
    };
    let mut prompt = None;
    for attempt in 1..=2 {
        match services.agent.refine(instruction, query) {
            Ok(exchange) => {
                prompt = Some(exchange.raw_response);
                break;
            }
            Err(e) if e.is_soft() => {
                log::warn!("generator soft failure on `{query}` (attempt {attempt}): {e}");
            }
            Err(e) => return Err(abort(e.into())),
        }
    }
    let Some(prompt) = prompt else {
        return Ok(QueryOutcome::Skipped);
    };
    let score = score_prompt(services, query, &prompt).map_err(|e| abort(e.into()))?;
    Ok(QueryOutcome::Scored { prompt, score })
}

/// Generates and scores a refined prompt per query, then records one pull
/// on `arm` with the batch mean as reward.
///
/// Queries run concurrently in groups of `concurrency`; results are merged
/// in batch order. A query whose generator reply is empty twice is skipped.
pub fn evaluate_instruction(
    instruction: &Instruction,
    queries: &[String],
    services: &Services,
    iteration: u32,
    concurrency: usize,
    arm: &mut ArmStats,
) -> Result<Evaluation, OptimizerError> {
    if queries.is_empty() {
        return Err(OptimizerError::InvalidConfig(
            "cannot evaluate on an empty batch".into(),
        ));
    }
    let width = concurrency.max(1);
    let mut outcomes = Vec::with_capacity(queries.len());
    for chunk in queries.chunks(width) {
        if chunk.len() == 1 {
            outcomes.push(evaluate_query(services, instruction, &chunk[0]));
            continue;
        }
        let results: Vec<_> = thread::scope(|s| {
            let handles: Vec<_> = chunk
                .iter()
                .map(|q| s.spawn(move || evaluate_query(services, instruction, q)))
                .collect();
            handles
                .into_iter()
                .map(|h| h.join().expect("evaluation thread panicked"))
                .collect()
        });
        outcomes.extend(results);
    }

    let mut entries = Vec::new();
    let mut skipped = Vec::new();
    for (query, outcome) in queries.iter().zip(outcomes) {
        match outcome? {
            QueryOutcome::Scored { prompt, score } => entries.push(PoolEntry::generated(
                query.clone(),
                prompt,
                score,
                instruction.id,
                iteration,
            )),
            QueryOutcome::Skipped => skipped.push(query.clone()),
        }
    }
    if entries.is_empty() {
        return Err(OptimizerError::AllQueriesSkipped(instruction.id));
    }
    let scores: Vec<ScoreValue> = entries.iter().filter_map(|e| e.score).collect();
    let mean = mean_score(&scores)?;
    arm.record(mean.value());
    Ok(Evaluation {
        mean,
        entries,
        skipped,
    })
}
