//! TOML run configuration.
//!
//! ```toml
//! [run]
//! iterations = 10
//! batch_size = 3
//! n_new_instructions = 2
//! query_pool = "queries.txt"      # relative to this file
//! mode = "sim"                    # or "live"
//! seed = 7
//!
//! [selector]
//! strategy = "ucb"                # ucb | greedy | epsilon_greedy
//! exploration_c = 1.4142135623730951
//! epsilon = 0.1
//! capacity = 5
//!
//! [agents]
//! base_url = "https://api.openai.com/v1"
//! model = "gpt-3.5-turbo"
//!
//! [scorer]
//! kind = "simulated"              # or kind = "remote", endpoint = "http://127.0.0.1:8000"
//! sim_seed = 7
//!
//! [professional_source]
//! kind = "fixture"                # none | fixture | live
//! path = "professional.json"
//! ```

use std::path::{Path, PathBuf};
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::agents::{
    AgentError, AgentSettings, ChatAgent, HttpChatTransport, SimTransport, BASELINE_INSTRUCTION,
};
use crate::optimizer::{load_query_pool, Mode, OptimizerError, RunConfig, Services};
use crate::pools::{PoolError, ProfessionalSourceConfig};
use crate::retry::RetryPolicy;
use crate::scoring::{
    ImageGenerator, RemoteScorer, Scorer, ScorerKind, SidecarImageClient, SimScorer,
};
use crate::selector::{SelectorConfig, Strategy};

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read config `{path}`: {message}")]
    Io { path: PathBuf, message: String },
    #[error("invalid config `{path}`: {message}")]
    Parse { path: PathBuf, message: String },
    #[error("invalid config: {0}")]
    Invalid(String),
    #[error(transparent)]
    Run(#[from] OptimizerError),
    #[error(transparent)]
    Agent(#[from] AgentError),
    #[error(transparent)]
    Pool(#[from] PoolError),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunSection {
    pub iterations: u32,
    pub batch_size: usize,
    pub n_new_instructions: usize,
    pub init_instruction: String,
    pub query_pool: Option<PathBuf>,
    pub mode: Mode,
    pub seed: u64,
    pub baseline_queries: usize,
}

impl Default for RunSection {
    fn default() -> Self {
        Self {
            iterations: 10,
            batch_size: 3,
            n_new_instructions: 2,
            init_instruction: BASELINE_INSTRUCTION.to_string(),
            query_pool: None,
            mode: Mode::Sim,
            seed: 0,
            baseline_queries: 10,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SelectorSection {
    pub strategy: Strategy,
    pub exploration_c: f64,
    pub epsilon: f64,
    pub capacity: usize,
    /// Defaults to the run seed.
    pub rng_seed: Option<u64>,
}

impl Default for SelectorSection {
    fn default() -> Self {
        let d = SelectorConfig::default();
        Self {
            strategy: d.strategy,
            exploration_c: d.exploration_c,
            epsilon: d.epsilon,
            capacity: d.capacity,
            rng_seed: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FileConfig {
    pub run: RunSection,
    pub selector: SelectorSection,
    pub agents: AgentSettings,
    pub scorer: ScorerKind,
    pub professional_source: ProfessionalSourceConfig,
    /// Directory relative paths resolve against; not part of the file.
    #[serde(skip)]
    pub base_dir: PathBuf,
}

/// Command-line overrides; `None` keeps the file value.
#[derive(Debug, Clone, Default)]
pub struct Overrides {
    pub mode: Option<Mode>,
    pub seed: Option<u64>,
    pub iterations: Option<u32>,
    pub batch_size: Option<usize>,
    pub strategy: Option<Strategy>,
    pub n_new_instructions: Option<usize>,
    pub capacity: Option<usize>,
    pub epsilon: Option<f64>,
    pub exploration_c: Option<f64>,
    pub query_pool: Option<PathBuf>,
    pub init_instruction: Option<String>,
    pub concurrency: Option<usize>,
}

impl FileConfig {
    pub fn from_toml_str(text: &str, origin: &Path) -> Result<Self, ConfigError> {
        toml::from_str(text).map_err(|e| ConfigError::Parse {
            path: origin.to_path_buf(),
            message: e.to_string(),
        })
    }

    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|e| ConfigError::Io {
            path: path.to_path_buf(),
            message: e.to_string(),
        })?;
        let mut config = Self::from_toml_str(&text, path)?;
        let parent = path.parent().map(Path::to_path_buf).unwrap_or_default();
        // Absolute, so the saved snapshot can be reloaded from any directory.
        config.base_dir = std::path::absolute(&parent).unwrap_or(parent);
        if let ProfessionalSourceConfig::Fixture { path } = &mut config.professional_source {
            *path = resolve(&config.base_dir, path);
        }
        Ok(config)
    }

    pub fn apply(&mut self, o: &Overrides) {
        let run = &mut self.run;
        if let Some(v) = o.mode {
            run.mode = v;
        }
        if let Some(v) = o.seed {
            run.seed = v;
        }
        if let Some(v) = o.iterations {
            run.iterations = v;
        }
        if let Some(v) = o.batch_size {
            run.batch_size = v;
        }
        if let Some(v) = o.n_new_instructions {
            run.n_new_instructions = v;
        }
        if let Some(v) = &o.query_pool {
            run.query_pool = Some(v.clone());
        }
        if let Some(v) = &o.init_instruction {
            run.init_instruction = v.clone();
        }
        let sel = &mut self.selector;
        if let Some(v) = o.strategy {
            sel.strategy = v;
        }
        if let Some(v) = o.capacity {
            sel.capacity = v;
        }
        if let Some(v) = o.epsilon {
            sel.epsilon = v;
        }
        if let Some(v) = o.exploration_c {
            sel.exploration_c = v;
        }
        if let Some(v) = o.concurrency {
            self.agents.concurrency = v;
        }
    }

    /// Effective config as TOML with paths resolved, for run directories.
    pub fn to_toml_string(&self) -> Result<String, ConfigError> {
        let mut resolved = self.clone();
        if let Some(pool) = &self.run.query_pool {
            resolved.run.query_pool = Some(resolve(&self.base_dir, pool));
        }
        toml::to_string(&resolved).map_err(|e| ConfigError::Invalid(e.to_string()))
    }

    pub fn selector_config(&self) -> SelectorConfig {
        SelectorConfig {
            strategy: self.selector.strategy,
            exploration_c: self.selector.exploration_c,
            epsilon: self.selector.epsilon,
            capacity: self.selector.capacity,
            rng_seed: self.selector.rng_seed.unwrap_or(self.run.seed),
        }
    }

    /// Builds the run config, loading the query pool from disk.
    pub fn run_config(&self) -> Result<RunConfig, ConfigError> {
        let pool_path = self
            .run
            .query_pool
            .as_ref()
            .ok_or_else(|| ConfigError::Invalid("[run] query_pool is required".into()))?;
        let queries = load_query_pool(&resolve(&self.base_dir, pool_path))?;
        let config = RunConfig {
            iterations: self.run.iterations,
            batch_size: self.run.batch_size,
            selector: self.selector_config(),
            n_new_instructions: self.run.n_new_instructions,
            init_instruction: self.run.init_instruction.clone(),
            queries,
            mode: self.run.mode,
            rng_seed: self.run.seed,
            concurrency: self.agents.concurrency.max(1),
            baseline_queries: self.run.baseline_queries,
        };
        config.validate()?;
        Ok(config)
    }

    /// Wires agents, scorer, image generation and professional source for `mode`.
    pub fn services(&self, mode: Mode) -> Result<Services, ConfigError> {
        let retry = RetryPolicy::default();
        let agent = match mode {
            Mode::Sim => ChatAgent::new(
                Arc::new(SimTransport),
                self.agents.clone(),
                RetryPolicy::immediate(5),
            ),
            Mode::Live => ChatAgent::new(
                Arc::new(HttpChatTransport::from_env(&self.agents)?),
                self.agents.clone(),
                retry.clone(),
            ),
        };
        let (scorer, images): (Arc<dyn Scorer>, Option<Arc<dyn ImageGenerator>>) = match &self
            .scorer
        {
            ScorerKind::Simulated { sim_seed } => (Arc::new(SimScorer { seed: *sim_seed }), None),
            ScorerKind::Remote { endpoint } => {
                let images: Option<Arc<dyn ImageGenerator>> = match mode {
                    Mode::Live => Some(Arc::new(SidecarImageClient::new(
                        endpoint.clone(),
                        Some(self.run.seed),
                        retry.clone(),
                    ))),
                    Mode::Sim => None,
                };
                (
                    Arc::new(RemoteScorer::new(endpoint.clone(), retry.clone())),
                    images,
                )
            }
        };
        let professional = Arc::from(self.professional_source.build(retry)?);
        Ok(Services {
            agent,
            scorer,
            images,
            professional,
        })
    }
}

fn resolve(base: &Path, path: &Path) -> PathBuf {
    if path.is_absolute() {
        path.to_path_buf()
    } else {
        base.join(path)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const SAMPLE: &str = r#"
[run]
iterations = 4
batch_size = 2
query_pool = "queries.txt"
seed = 9

[selector]
strategy = "epsilon_greedy"
epsilon = 0.2

[agents]
model = "gpt-3.5-turbo"

[agents.preambles]
generator = "custom"

[scorer]
kind = "simulated"
sim_seed = 3

[professional_source]
kind = "fixture"
path = "pro.json"
"#;

    #[test]
    fn parses_all_sections() {
        let c = FileConfig::from_toml_str(SAMPLE, Path::new("x.toml")).unwrap();
        assert_eq!(c.run.iterations, 4);
        assert_eq!(c.selector.strategy, Strategy::EpsilonGreedy);
        assert_eq!(c.selector.capacity, 5);
        assert_eq!(c.agents.preambles.generator, "custom");
        assert_eq!(c.scorer, ScorerKind::Simulated { sim_seed: 3 });
        assert_eq!(c.selector_config().rng_seed, 9);
    }

    #[test]
    fn unknown_keys_are_rejected() {
        let err =
            FileConfig::from_toml_str("[run]\niteratons = 3\n", Path::new("x.toml")).unwrap_err();
        assert!(matches!(err, ConfigError::Parse { .. }));
    }

    #[test]
    fn overrides_win() {
        let mut c = FileConfig::from_toml_str(SAMPLE, Path::new("x.toml")).unwrap();
        c.apply(&Overrides {
            seed: Some(1),
            strategy: Some(Strategy::Greedy),
            batch_size: Some(1),
            ..Overrides::default()
        });
        assert_eq!((c.run.seed, c.run.batch_size), (1, 1));
        assert_eq!(c.selector.strategy, Strategy::Greedy);
    }

    #[test]
    fn load_resolves_relative_paths() {
        let dir = tempfile::tempdir().unwrap();
        std::fs::write(dir.path().join("queries.txt"), "cactus\nyacht\nphoenix\n").unwrap();
        std::fs::write(
            dir.path().join("pro.json"),
            r#"{"cactus": ["a desert cactus"]}"#,
        )
        .unwrap();
        let path = dir.path().join("run.toml");
        std::fs::write(&path, SAMPLE).unwrap();
        let c = FileConfig::load(&path).unwrap();
        let run = c.run_config().unwrap();
        assert_eq!(run.queries.len(), 3);
        let services = c.services(Mode::Sim).unwrap();
        assert_eq!(
            services.professional.fetch("cactus").unwrap(),
            vec!["a desert cactus"]
        );
    }

    #[test]
    fn snapshot_round_trips() {
        let c = FileConfig::from_toml_str(SAMPLE, Path::new("x.toml")).unwrap();
        let text = c.to_toml_string().unwrap();
        let back = FileConfig::from_toml_str(&text, Path::new("y.toml")).unwrap();
        assert_eq!(back, c);
    }

    #[test]
    fn missing_query_pool_is_config_error() {
        let c = FileConfig::default();
        assert!(matches!(c.run_config(), Err(ConfigError::Invalid(_))));
    }
}
