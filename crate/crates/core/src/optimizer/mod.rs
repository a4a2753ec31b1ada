//! The optimization loop and the baseline comparison.
//!
//! One iteration, in order:
//! 1. seed the instruction list with the initial instruction when empty
//! 2. sample a query batch
//! 3. evaluate every instruction on the batch (one arm pull each)
//! 4. fetch and score professional prompts for the batch
//! 5. run the selector
//! 6. find the worst instruction
//! 7. compute a textual gradient from its prompts against the best prompts per query
//! 8. ask the modifier for new instructions derived from the worst one
//! 9. prune back to capacity

mod baseline;
mod evaluate;

use std::path::Path;
use std::sync::Arc;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::agents::{
    AgentError, AgentSettings, ChatAgent, GradientReport, IdAllocator, Instruction, ScoredPrompt,
    SimTransport, BASELINE_INSTRUCTION,
};
use crate::pools::{
    AddOutcome, NoProfessionalSource, PoolEntry, PoolError, ProfessionalSource, PromptPool,
    PromptSource,
};
use crate::retry::RetryPolicy;
use crate::runlog::{LogError, RecordBody, RunLogWriter, ScoreEvent};
use crate::scoring::{ImageGenerator, ScoreValue, Scorer, ScoringError, SimScorer};
use crate::selector::{
    find_best_arm, find_worst_arm, prune_to_capacity, select_arm, total_pulls, ArmId, ArmStats,
    SelectorConfig, SelectorError, Strategy,
};

pub use baseline::{evaluate_baselines, BaselineComparison, BaselineSummary, BaselineSystem};
pub use evaluate::{evaluate_instruction, Evaluation};

#[derive(Debug, Error)]
pub enum OptimizerError {
    #[error("invalid run config: {0}")]
    InvalidConfig(String),
    #[error("batch size {batch_size} exceeds query pool of {pool_size}")]
    InvalidBatchSize { batch_size: usize, pool_size: usize },
    #[error("iteration aborted on query `{query}`: {cause}")]
    IterationAbort {
        query: String,
        #[source]
        cause: Box<OptimizerError>,
    },
    #[error("every query was skipped for instruction {0}")]
    AllQueriesSkipped(ArmId),
    #[error("agent call budget of {limit} exceeded")]
    BudgetExceeded { limit: usize },
    #[error(transparent)]
    Agent(#[from] AgentError),
    #[error(transparent)]
    Scoring(#[from] ScoringError),
    #[error(transparent)]
    Selector(#[from] SelectorError),
    #[error(transparent)]
    Pool(#[from] PoolError),
    #[error(transparent)]
    Log(#[from] LogError),
    #[error("query pool `{path}`: {message}")]
    QueryPool { path: String, message: String },
}

impl OptimizerError {
    /// The innermost error, looking through iteration aborts.
    pub fn root(&self) -> &OptimizerError {
        match self {
            OptimizerError::IterationAbort { cause, .. } => cause.root(),
            other => other,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    Sim,
    Live,
}

impl std::str::FromStr for Mode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "sim" => Ok(Mode::Sim),
            "live" => Ok(Mode::Live),
            other => Err(format!("unknown mode `{other}` (expected sim or live)")),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub iterations: u32,
    pub batch_size: usize,
    pub selector: SelectorConfig,
    pub n_new_instructions: usize,
    pub init_instruction: String,
    pub queries: Vec<String>,
    pub mode: Mode,
    pub rng_seed: u64,
    /// In-flight generator/scorer calls per fan-out.
    pub concurrency: usize,
    pub baseline_queries: usize,
}

impl RunConfig {
    pub fn new(queries: Vec<String>) -> Self {
        Self {
            iterations: 10,
            batch_size: 3,
            selector: SelectorConfig::default(),
            n_new_instructions: 2,
            init_instruction: BASELINE_INSTRUCTION.to_string(),
            queries,
            mode: Mode::Sim,
            rng_seed: 0,
            concurrency: 4,
            baseline_queries: 10,
        }
    }

    pub fn validate(&self) -> Result<(), OptimizerError> {
        let bad = |m: &str| Err(OptimizerError::InvalidConfig(m.to_string()));
        if self.iterations == 0 {
            return bad("iterations must be >= 1");
        }
        if self.batch_size == 0 {
            return bad("batch_size must be >= 1");
        }
        if self.n_new_instructions == 0 {
            return bad("n_new_instructions must be >= 1");
        }
        if self.init_instruction.trim().is_empty() {
            return bad("init_instruction must not be empty");
        }
        if self.batch_size > self.queries.len() {
            return Err(OptimizerError::InvalidBatchSize {
                batch_size: self.batch_size,
                pool_size: self.queries.len(),
            });
        }
        self.selector.validate()?;
        Ok(())
    }
}

/// One naive prompt per line; blank lines and `#` comments are ignored.
pub fn parse_query_pool(text: &str) -> Vec<String> {
    text.lines()
        .map(str::trim)
        .filter(|l| !l.is_empty() && !l.starts_with('#'))
        .map(str::to_string)
        .collect()
}

pub fn load_query_pool(path: &Path) -> Result<Vec<String>, OptimizerError> {
    let text = std::fs::read_to_string(path).map_err(|e| OptimizerError::QueryPool {
        path: path.display().to_string(),
        message: e.to_string(),
    })?;
    let queries = parse_query_pool(&text);
    if queries.is_empty() {
        return Err(OptimizerError::QueryPool {
            path: path.display().to_string(),
            message: "no queries".into(),
        });
    }
    Ok(queries)
}

/// Uniform sample without replacement, in random order.
pub fn sample_query_batch<R: Rng + ?Sized>(
    query_pool: &[String],
    batch_size: usize,
    rng: &mut R,
) -> Result<Vec<String>, OptimizerError> {
    if batch_size > query_pool.len() {
        return Err(OptimizerError::InvalidBatchSize {
            batch_size,
            pool_size: query_pool.len(),
        });
    }
    Ok(query_pool
        .choose_multiple(rng, batch_size)
        .cloned()
        .collect())
}

/// Everything the loop calls out to.
#[derive(Clone)]
pub struct Services {
    pub agent: ChatAgent,
    pub scorer: Arc<dyn Scorer>,
    pub images: Option<Arc<dyn ImageGenerator>>,
    pub professional: Arc<dyn ProfessionalSource>,
}

impl Services {
    /// Scripted agents, simulated scorer, no images.
    pub fn sim(score_seed: u64, professional: Arc<dyn ProfessionalSource>) -> Self {
        Self {
            agent: ChatAgent::new(
                Arc::new(SimTransport),
                AgentSettings::default(),
                RetryPolicy::immediate(5),
            ),
            scorer: Arc::new(SimScorer { seed: score_seed }),
            images: None,
            professional,
        }
    }

    pub fn sim_without_professional(score_seed: u64) -> Self {
        Self::sim(score_seed, Arc::new(NoProfessionalSource))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InstructionScore {
    pub instruction_id: ArmId,
    /// This iteration's batch mean.
    pub mean_score: ScoreValue,
    pub pulls: u64,
    /// Mean reward across all pulls so far.
    pub running_mean: ScoreValue,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IterationRecord {
    pub iteration: u32,
    pub strategy: Strategy,
    pub batch_size: usize,
    pub queries: Vec<String>,
    pub instruction_scores: Vec<InstructionScore>,
    pub selected_arm: ArmId,
    pub worst_arm: ArmId,
    pub gradient: GradientReport,
    pub new_instructions: Vec<Instruction>,
    pub pruned: Vec<ArmId>,
    pub pool_after: Vec<ArmId>,
    pub best_instruction: Instruction,
    pub best_so_far: ScoreValue,
}

impl IterationRecord {
    pub fn new_instruction_ids(&self) -> Vec<ArmId> {
        self.new_instructions.iter().map(|i| i.id).collect()
    }

    /// Highest batch mean among the instructions evaluated this iteration.
    pub fn best_mean(&self) -> Option<ScoreValue> {
        self.instruction_scores
            .iter()
            .map(|s| s.mean_score)
            .max_by(|a, b| a.value().total_cmp(&b.value()))
    }

    pub fn average_mean(&self) -> Option<f64> {
        if self.instruction_scores.is_empty() {
            return None;
        }
        let sum: f64 = self
            .instruction_scores
            .iter()
            .map(|s| s.mean_score.value())
            .sum();
        Some(sum / self.instruction_scores.len() as f64)
    }
}

/// Mutable loop state: the instruction list with its arms, the prompt pool,
/// the id counter, the batch-sampling RNG and the selector RNG.
#[derive(Debug, Clone)]
pub struct RunState {
    pub instructions: Vec<Instruction>,
    pub arms: Vec<ArmStats>,
    pub pool: PromptPool,
    pub iteration: u32,
    pub ids: IdAllocator,
    pub best_so_far: Option<ScoreValue>,
    rng: ChaCha8Rng,
    selector_rng: ChaCha8Rng,
}

impl RunState {
    pub fn new(seed: u64, selector_seed: u64) -> Self {
        Self {
            instructions: Vec::new(),
            arms: Vec::new(),
            pool: PromptPool::new(),
            iteration: 0,
            ids: IdAllocator::default(),
            best_so_far: None,
            rng: ChaCha8Rng::seed_from_u64(seed),
            selector_rng: ChaCha8Rng::seed_from_u64(selector_seed),
        }
    }

    /// Adds an instruction as a fresh, unpulled arm.
    pub fn push_instruction(&mut self, instruction: Instruction) {
        self.arms
            .push(ArmStats::new(instruction.id, instruction.created_at));
        self.instructions.push(instruction);
    }

    pub fn instruction(&self, id: ArmId) -> Option<&Instruction> {
        self.instructions.iter().find(|i| i.id == id)
    }

    pub fn arm(&self, id: ArmId) -> Option<&ArmStats> {
        self.arms.iter().find(|a| a.arm_id == id)
    }

    /// Instruction with the best running mean, or the first one if none is pulled.
    pub fn best_instruction(&self) -> Option<&Instruction> {
        match find_best_arm(&self.arms) {
            Some(id) => self.instruction(id),
            None => self.instructions.first(),
        }
    }
}

/// What one iteration produced: its summary plus the log events in order.
#[derive(Debug, Clone)]
pub struct IterationOutput {
    pub record: IterationRecord,
    pub events: Vec<RecordBody>,
}

struct Budget {
    limit: usize,
    used: usize,
}

impl Budget {
    fn charge(&mut self, calls: usize) -> Result<(), OptimizerError> {
        self.used += calls;
        if self.used > self.limit {
            return Err(OptimizerError::BudgetExceeded { limit: self.limit });
        }
        Ok(())
    }
}

fn score_event(entry: &PoolEntry) -> Option<RecordBody> {
    Some(RecordBody::ScoreEvent(ScoreEvent {
        iteration: entry.iteration,
        instruction_id: entry.instruction_id,
        query: entry.query.clone(),
        prompt_text: entry.prompt_text.clone(),
        score: entry.score?,
        source: entry.source,
    }))
}

fn add_to_pool(
    pool: &mut PromptPool,
    entry: PoolEntry,
    events: &mut Vec<RecordBody>,
) -> Result<(), OptimizerError> {
    let iteration = entry.iteration;
    let event = score_event(&entry);
    match pool.add_entry(entry)? {
        AddOutcome::Added(_) => events.extend(event),
        AddOutcome::Duplicate => {
            if let Some(RecordBody::ScoreEvent(e)) = event {
                events.push(RecordBody::warning(
                    Some(iteration),
                    format!("duplicate {:?} prompt for `{}` skipped", e.source, e.query),
                ));
            }
        }
    }
    Ok(())
}

fn scored(entry: &PoolEntry) -> Option<ScoredPrompt> {
    Some(ScoredPrompt {
        query: entry.query.clone(),
        prompt: entry.prompt_text.clone(),
        score: entry.score?,
    })
}

fn fetch_professional(
    state: &mut RunState,
    services: &Services,
    batch: &[String],
    iteration: u32,
    events: &mut Vec<RecordBody>,
) -> Result<(), OptimizerError> {
    for query in batch {
        let prompts = match services.professional.fetch(query) {
            Ok(p) => p,
            Err(e) => {
                log::warn!("professional prompts for `{query}` unavailable: {e}");
                events.push(RecordBody::warning(
                    Some(iteration),
                    format!("professional source: {e}"),
                ));
                continue;
            }
        };
        for prompt in prompts {
            let already = state
                .pool
                .entries_for_query(query)
                .any(|e| e.source == PromptSource::Professional && e.prompt_text == prompt);
            if already {
                continue;
            }
            match evaluate::score_prompt(services, query, &prompt) {
                Ok(score) => {
                    let entry =
                        PoolEntry::professional(query.clone(), prompt, Some(score), iteration);
                    add_to_pool(&mut state.pool, entry, events)?;
                }
                Err(e) => {
                    log::warn!("scoring professional prompt for `{query}` failed: {e}");
                    events.push(RecordBody::warning(
                        Some(iteration),
                        format!("professional prompt for `{query}` not scored: {e}"),
                    ));
                }
            }
        }
    }
    Ok(())
}

/// Runs one full iteration against `state`.
pub fn run_iteration(
    state: &mut RunState,
    config: &RunConfig,
    services: &Services,
) -> Result<IterationOutput, OptimizerError> {
    let iteration = state.iteration;
    let mut events = Vec::new();

    if state.instructions.is_empty() {
        let init = Instruction {
            id: state.ids.allocate(),
            text: config.init_instruction.clone(),
            parent_id: None,
            created_at: iteration,
        };
        state.push_instruction(init);
    }

    let batch = sample_query_batch(&config.queries, config.batch_size, &mut state.rng)?;
    let mut budget = Budget {
        limit: state.instructions.len() * batch.len() + 2,
        used: 0,
    };

    let mut instruction_scores = Vec::with_capacity(state.instructions.len());
    let mut best_this_round: Option<ScoreValue> = None;
    for idx in 0..state.instructions.len() {
        budget.charge(batch.len())?;
        let instruction = state.instructions[idx].clone();
        let eval = evaluate_instruction(
            &instruction,
            &batch,
            services,
            iteration,
            config.concurrency,
            &mut state.arms[idx],
        )?;
        for query in &eval.skipped {
            events.push(RecordBody::warning(
                Some(iteration),
                format!("query `{query}` skipped for instruction {}", instruction.id),
            ));
        }
        for entry in eval.entries {
            add_to_pool(&mut state.pool, entry, &mut events)?;
        }
        let arm = &state.arms[idx];
        instruction_scores.push(InstructionScore {
            instruction_id: instruction.id,
            mean_score: eval.mean,
            pulls: arm.pulls,
            running_mean: ScoreValue::new(arm.mean_reward.expect("arm was just pulled"))?,
        });
        if best_this_round.is_none_or(|b| eval.mean.value() > b.value()) {
            best_this_round = Some(eval.mean);
        }
    }

    fetch_professional(state, services, &batch, iteration, &mut events)?;

    let selected_arm = select_arm(
        &state.arms,
        &config.selector,
        total_pulls(&state.arms),
        &mut state.selector_rng,
    )?;
    let worst_arm = find_worst_arm(&state.arms)?;
    let worst = state
        .instruction(worst_arm)
        .expect("arm has an instruction")
        .clone();

    let low_batch: Vec<ScoredPrompt> = state
        .pool
        .entries_for_instruction(worst_arm, iteration)
        .into_iter()
        .filter_map(scored)
        .collect();
    let high_batch: Vec<ScoredPrompt> = low_batch
        .iter()
        .filter_map(|low| state.pool.best_for_query(&low.query).and_then(scored))
        .collect();

    budget.charge(1)?;
    let (gradient, _) = services
        .agent
        .compute_gradient(&worst, &low_batch, &high_batch)?;

    budget.charge(1)?;
    let (children, _) = services.agent.modify_instruction(
        &gradient,
        &worst,
        config.n_new_instructions,
        iteration,
        &mut state.ids,
    )?;
    let mut new_instructions = Vec::with_capacity(children.len());
    for child in children {
        if state.instructions.iter().any(|i| i.text == child.text) {
            events.push(RecordBody::warning(
                Some(iteration),
                format!(
                    "new instruction {} duplicates an existing instruction; dropped",
                    child.id
                ),
            ));
            continue;
        }
        new_instructions.push(child.clone());
        state.push_instruction(child);
    }

    let survivors = prune_to_capacity(&state.arms, &config.selector);
    let kept: Vec<ArmId> = survivors.iter().map(|a| a.arm_id).collect();
    let pruned: Vec<ArmId> = state
        .arms
        .iter()
        .map(|a| a.arm_id)
        .filter(|id| !kept.contains(id))
        .collect();
    state.instructions.retain(|i| kept.contains(&i.id));
    state.arms = survivors;

    let best_round = best_this_round.expect("at least one instruction evaluated");
    let best_so_far = match state.best_so_far {
        Some(prev) if prev.value() >= best_round.value() => prev,
        _ => best_round,
    };
    state.best_so_far = Some(best_so_far);
    state.iteration += 1;

    let record = IterationRecord {
        iteration,
        strategy: config.selector.strategy,
        batch_size: config.batch_size,
        queries: batch,
        instruction_scores,
        selected_arm,
        worst_arm,
        gradient,
        new_instructions,
        pruned,
        pool_after: kept,
        best_instruction: state.best_instruction().expect("pool is non-empty").clone(),
        best_so_far,
    };
    Ok(IterationOutput { record, events })
}

/// Runs `config.iterations` iterations from a fresh state, appending every
/// event and iteration summary to `log` when given.
pub fn run_optimization(
    config: &RunConfig,
    services: &Services,
    mut log: Option<&mut RunLogWriter>,
) -> Result<(Vec<IterationRecord>, RunState), OptimizerError> {
    config.validate()?;
    let mut state = RunState::new(config.rng_seed, config.selector.rng_seed);
    let mut records = Vec::with_capacity(config.iterations as usize);
    for _ in 0..config.iterations {
        let out = run_iteration(&mut state, config, services)?;
        if let Some(log) = log.as_deref_mut() {
            for event in out.events {
                log.append_body(event)?;
            }
            log.append_body(RecordBody::IterationSummary(out.record.clone()))?;
        }
        log::info!(
            "iteration {}: best mean {:?}, best so far {}",
            out.record.iteration,
            out.record.best_mean().map(|s| s.value()),
            out.record.best_so_far
        );
        records.push(out.record);
    }
    Ok((records, state))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn queries(n: usize) -> Vec<String> {
        (0..n).map(|i| format!("query {i}")).collect()
    }

    #[test]
    fn query_pool_file_format() {
        let text =
            "# naive prompts\ncactus\n\n  Aquarium with sharks  \n#skip\nFarm with windmill\n";
        assert_eq!(
            parse_query_pool(text),
            ["cactus", "Aquarium with sharks", "Farm with windmill"]
        );
    }

    #[test]
    fn full_batch_is_a_permutation() {
        let pool = queries(6);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut batch = sample_query_batch(&pool, 6, &mut rng).unwrap();
        batch.sort();
        assert_eq!(batch, pool);
    }

    #[test]
    fn same_seed_same_batch() {
        let pool = queries(10);
        let a = sample_query_batch(&pool, 3, &mut ChaCha8Rng::seed_from_u64(9)).unwrap();
        let b = sample_query_batch(&pool, 3, &mut ChaCha8Rng::seed_from_u64(9)).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn oversized_batch_rejected() {
        let err =
            sample_query_batch(&queries(2), 3, &mut ChaCha8Rng::seed_from_u64(0)).unwrap_err();
        assert!(matches!(
            err,
            OptimizerError::InvalidBatchSize {
                batch_size: 3,
                pool_size: 2
            }
        ));
    }

    #[test]
    fn config_validation() {
        let mut c = RunConfig::new(queries(3));
        assert!(c.validate().is_ok());
        c.iterations = 0;
        assert!(matches!(
            c.validate(),
            Err(OptimizerError::InvalidConfig(_))
        ));
        c.iterations = 1;
        c.batch_size = 4;
        assert!(matches!(
            c.validate(),
            Err(OptimizerError::InvalidBatchSize { .. })
        ));
    }

    #[test]
    fn fresh_state_grows_to_three_instructions() {
        let config = RunConfig {
            iterations: 1,
            ..RunConfig::new(queries(5))
        };
        let services = Services::sim_without_professional(1);
        let mut state = RunState::new(3, 3);
        let out = run_iteration(&mut state, &config, &services).unwrap();
        assert_eq!(state.instructions.len(), 3);
        assert_eq!(state.arms.len(), 3);
        assert_eq!(out.record.new_instructions.len(), 2);
        assert!(out.record.pruned.is_empty());
        let init = state.instructions[0].id;
        assert!(out
            .record
            .new_instructions
            .iter()
            .all(|i| i.parent_id == Some(init)));
        assert_eq!(state.pool.len(), 3);
    }
}
