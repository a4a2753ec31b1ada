//! Python bindings for the promptforge core.

use std::collections::BTreeMap;
use std::sync::Arc;

use pyo3::exceptions::{PyRuntimeError, PyValueError};
use pyo3::prelude::*;

use promptforge::agents::{self, AgentError, Instruction};
use promptforge::optimizer::{run_optimization, OptimizerError, RunConfig, Services};
use promptforge::pools::{FixtureSource, NoProfessionalSource, ProfessionalSource};
use promptforge::scoring::{self, ScoreValue, ScoringError};
use promptforge::selector::{self, ArmId, SelectorConfig, SelectorError, Strategy};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn value_err(e: impl std::fmt::Display) -> PyErr {
    PyValueError::new_err(e.to_string())
}

fn selector_err(e: SelectorError) -> PyErr {
    value_err(e)
}

fn scoring_err(e: ScoringError) -> PyErr {
    value_err(e)
}

fn agent_err(e: AgentError) -> PyErr {
    match e {
        AgentError::ParseFailure { .. } | AgentError::EmptyInstruction => value_err(e),
        other => PyRuntimeError::new_err(other.to_string()),
    }
}

fn optimizer_err(e: OptimizerError) -> PyErr {
    PyRuntimeError::new_err(e.to_string())
}

fn parse_strategy(name: &str) -> PyResult<Strategy> {
    name.parse().map_err(selector_err)
}

/// Bandit statistics for one instruction.
#[pyclass(name = "ArmStats", module = "promptforge_py", skip_from_py_object)]
#[derive(Clone)]
struct PyArmStats {
    inner: selector::ArmStats,
}

#[pymethods]
impl PyArmStats {
    #[new]
    #[pyo3(signature = (arm_id, created_at = 0, pulls = 0, mean = 0.0))]
    fn new(arm_id: u64, created_at: u32, pulls: u64, mean: f64) -> Self {
        Self {
            inner: selector::ArmStats::with_history(ArmId(arm_id), created_at, pulls, mean),
        }
    }

    fn record(&mut self, reward: f64) -> PyResult<()> {
        if !reward.is_finite() {
            return Err(value_err("reward must be finite"));
        }
        self.inner.record(reward);
        Ok(())
    }

    #[getter]
    fn arm_id(&self) -> u64 {
        self.inner.arm_id.0
    }

    #[getter]
    fn pulls(&self) -> u64 {
        self.inner.pulls
    }

    #[getter]
    fn mean_reward(&self) -> Option<f64> {
        self.inner.mean_reward
    }

    #[getter]
    fn created_at(&self) -> u32 {
        self.inner.created_at
    }

    fn __repr__(&self) -> String {
        let a = &self.inner;
        format!(
            "ArmStats(arm_id={}, created_at={}, pulls={}, mean_reward={:?})",
            a.arm_id.0, a.created_at, a.pulls, a.mean_reward
        )
    }
}

/// Parsed output of the gradient agent.
#[pyclass(name = "GradientReport", module = "promptforge_py")]
struct PyGradientReport {
    #[pyo3(get)]
    inferences: Vec<String>,
    #[pyo3(get)]
    improvements: Vec<String>,
}

#[pymethods]
impl PyGradientReport {
    fn __repr__(&self) -> String {
        format!(
            "GradientReport({} inferences, {} improvements)",
            self.inferences.len(),
            self.improvements.len()
        )
    }
}

fn unwrap_arms(arms: &[PyRef<'_, PyArmStats>]) -> Vec<selector::ArmStats> {
    arms.iter().map(|a| a.inner.clone()).collect()
}

fn selector_config(
    strategy: &str,
    exploration_c: f64,
    epsilon: f64,
    capacity: usize,
) -> PyResult<SelectorConfig> {
    let config = SelectorConfig {
        exploration_c,
        epsilon,
        capacity,
        ..SelectorConfig::with_strategy(parse_strategy(strategy)?)
    };
    config.validate().map_err(selector_err)?;
    Ok(config)
}

/// Deterministic offline score of `prompt` for `query`.
#[pyfunction]
#[pyo3(signature = (query, prompt, seed = 0))]
fn sim_score(query: &str, prompt: &str, seed: u64) -> PyResult<f64> {
    scoring::sim_score(query, prompt, seed)
        .map(ScoreValue::value)
        .map_err(scoring_err)
}

#[pyfunction]
fn mean_score(scores: Vec<f64>) -> PyResult<f64> {
    let values = scores
        .into_iter()
        .map(ScoreValue::new)
        .collect::<Result<Vec<_>, _>>()
        .map_err(scoring_err)?;
    scoring::mean_score(&values)
        .map(ScoreValue::value)
        .map_err(scoring_err)
}

/// UCB index of `arm` after `total_pulls` pulls overall. Infinite for an unpulled arm.
#[pyfunction]
#[pyo3(signature = (arm, total_pulls, c = std::f64::consts::SQRT_2))]
fn ucb_index(arm: PyRef<'_, PyArmStats>, total_pulls: u64, c: f64) -> PyResult<f64> {
    selector::ucb_index(&arm.inner, total_pulls, c).map_err(selector_err)
}

#[pyfunction]
#[pyo3(signature = (arms, strategy = "ucb", seed = 0, epsilon = 0.1, exploration_c = std::f64::consts::SQRT_2))]
fn select_arm(
    arms: Vec<PyRef<'_, PyArmStats>>,
    strategy: &str,
    seed: u64,
    epsilon: f64,
    exploration_c: f64,
) -> PyResult<u64> {
    let arms = unwrap_arms(&arms);
    let config = selector_config(strategy, exploration_c, epsilon, arms.len().max(1))?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    selector::select_arm(&arms, &config, selector::total_pulls(&arms), &mut rng)
        .map(|id| id.0)
        .map_err(selector_err)
}

#[pyfunction]
fn find_worst_arm(arms: Vec<PyRef<'_, PyArmStats>>) -> PyResult<u64> {
    selector::find_worst_arm(&unwrap_arms(&arms))
        .map(|id| id.0)
        .map_err(selector_err)
}

#[pyfunction]
#[pyo3(signature = (arms, capacity = 5, strategy = "ucb", exploration_c = std::f64::consts::SQRT_2))]
fn prune_to_capacity(
    arms: Vec<PyRef<'_, PyArmStats>>,
    capacity: usize,
    strategy: &str,
    exploration_c: f64,
) -> PyResult<Vec<PyArmStats>> {
    let config = selector_config(strategy, exploration_c, 0.1, capacity)?;
    Ok(selector::prune_to_capacity(&unwrap_arms(&arms), &config)
        .into_iter()
        .map(|inner| PyArmStats { inner })
        .collect())
}

#[pyfunction]
fn render_generator_prompt(instruction: &str, query: &str) -> PyResult<String> {
    let instruction = Instruction::initial(ArmId(0), instruction).map_err(agent_err)?;
    agents::render_generator_prompt(&instruction, query).map_err(agent_err)
}

#[pyfunction]
fn parse_gradient_report(text: &str) -> PyResult<PyGradientReport> {
    let report = agents::parse_gradient_report(text).map_err(agent_err)?;
    Ok(PyGradientReport {
        inferences: report.inferences,
        improvements: report.improvements,
    })
}

/// Runs the loop offline and returns the iteration records as a JSON string.
#[pyfunction]
#[pyo3(signature = (
    queries,
    iterations = 10,
    batch_size = 3,
    seed = 0,
    strategy = "ucb",
    capacity = 5,
    professional = None,
))]
#[allow(clippy::too_many_arguments)]
fn run_sim(
    py: Python<'_>,
    queries: Vec<String>,
    iterations: u32,
    batch_size: usize,
    seed: u64,
    strategy: &str,
    capacity: usize,
    professional: Option<BTreeMap<String, Vec<String>>>,
) -> PyResult<String> {
    let mut config = RunConfig::new(queries);
    config.iterations = iterations;
    config.batch_size = batch_size;
    config.rng_seed = seed;
    config.selector = SelectorConfig {
        rng_seed: seed,
        ..selector_config(strategy, std::f64::consts::SQRT_2, 0.1, capacity)?
    };
    let source: Arc<dyn ProfessionalSource> = match professional {
        Some(map) => {
            let json = serde_json::to_string(&map).map_err(value_err)?;
            Arc::new(FixtureSource::from_json_str(&json, "<python>").map_err(value_err)?)
        }
        None => Arc::new(NoProfessionalSource),
    };
    let services = Services::sim(seed, source);
    let (records, state) = py
        .detach(|| run_optimization(&config, &services, None))
        .map_err(optimizer_err)?;
    let best = state.best_instruction().map(|i| i.text.clone());
    let out = serde_json::json!({ "iterations": records, "best_instruction": best });
    serde_json::to_string(&out).map_err(|e| PyRuntimeError::new_err(e.to_string()))
}

#[pymodule]
fn promptforge_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyArmStats>()?;
    m.add_class::<PyGradientReport>()?;
    m.add_function(wrap_pyfunction!(sim_score, m)?)?;
    m.add_function(wrap_pyfunction!(mean_score, m)?)?;
    m.add_function(wrap_pyfunction!(ucb_index, m)?)?;
    m.add_function(wrap_pyfunction!(select_arm, m)?)?;
    m.add_function(wrap_pyfunction!(find_worst_arm, m)?)?;
    m.add_function(wrap_pyfunction!(prune_to_capacity, m)?)?;
    m.add_function(wrap_pyfunction!(render_generator_prompt, m)?)?;
    m.add_function(wrap_pyfunction!(parse_gradient_report, m)?)?;
    m.add_function(wrap_pyfunction!(run_sim, m)?)?;
    Ok(())
}
