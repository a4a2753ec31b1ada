use std::collections::VecDeque;
use std::sync::{Arc, Mutex};
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};

use super::{
    parse_gradient_report, parse_new_instructions, render_generator_prompt, render_gradient_prompt,
    render_modifier_prompt, AgentError, AgentExchange, AgentRole, GradientReport, IdAllocator,
    Instruction, ScoredPrompt, GRADIENT_FORMAT_REMINDER, MODIFIER_FORMAT_REMINDER,
};
use crate::http;
use crate::retry::{Attempt, RetryError, RetryPolicy};

pub const API_KEY_ENV: &str = "PROMPTFORGE_LLM_KEY";

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ChatMessage {
    pub role: String,
    pub content: String,
}

/// Chat-completions request body.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChatRequest {
    pub model: String,
    pub messages: Vec<ChatMessage>,
    pub temperature: f64,
}

impl ChatRequest {
    pub fn user_content(&self) -> &str {
        self.messages
            .iter()
            .rev()
            .find(|m| m.role == "user")
            .map(|m| m.content.as_str())
            .unwrap_or("")
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum TransportError {
    /// Network failure, 429 or 5xx.
    Retryable(String),
    Fatal(String),
}

/// Sends one chat request and returns the assistant text.
pub trait ChatTransport: Send + Sync {
    fn send(&self, role: AgentRole, request: &ChatRequest) -> Result<String, TransportError>;
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct Preambles {
    pub generator: String,
    pub gradient_calculator: String,
    pub instruction_modifier: String,
}

impl Default for Preambles {
    fn default() -> Self {
        Self {
            generator:
                "You refine short image prompts into detailed prompts for a text-to-image model. \
Reply with the refined prompt only."
                    .into(),
            gradient_calculator:
                "You compare low-scoring and high-scoring image prompts and explain how \
the instruction that produced the low-scoring ones should change."
                    .into(),
            instruction_modifier:
                "You rewrite instructions for a prompt-refining assistant, applying \
the requested improvements."
                    .into(),
        }
    }
}

impl Preambles {
    pub fn for_role(&self, role: AgentRole) -> &str {
        match role {
            AgentRole::Generator => &self.generator,
            AgentRole::GradientCalculator => &self.gradient_calculator,
            AgentRole::InstructionModifier => &self.instruction_modifier,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AgentSettings {
    pub base_url: String,
    pub path: String,
    pub model: String,
    pub temperature: f64,
    pub concurrency: usize,
    pub timeout_secs: u64,
    pub preambles: Preambles,
}

impl Default for AgentSettings {
    fn default() -> Self {
        Self {
            base_url: "https://api.openai.com/v1".into(),
            path: "/chat/completions".into(),
            model: "gpt-3.5-turbo".into(),
            temperature: 0.7,
            concurrency: 4,
            timeout_secs: 120,
            preambles: Preambles::default(),
        }
    }
}

/// Chat-completions endpoint over HTTP with bearer authentication.
pub struct HttpChatTransport {
    url: String,
    api_key: String,
    agent: ureq::Agent,
}

impl HttpChatTransport {
    pub fn new(settings: &AgentSettings, api_key: impl Into<String>) -> Self {
        Self {
            url: http::join_url(&settings.base_url, &settings.path),
            api_key: api_key.into(),
            agent: http::agent(Duration::from_secs(settings.timeout_secs)),
        }
    }

    /// Reads the bearer token from `PROMPTFORGE_LLM_KEY`.
    pub fn from_env(settings: &AgentSettings) -> Result<Self, AgentError> {
        let key = std::env::var(API_KEY_ENV).map_err(|_| AgentError::MissingApiKey)?;
        Ok(Self::new(settings, key))
    }
}

fn extract_content(body: &str) -> Result<String, TransportError> {
    let value: serde_json::Value = serde_json::from_str(body)
        .map_err(|e| TransportError::Fatal(format!("invalid JSON: {e}")))?;
    value
        .pointer("/choices/0/message/content")
        .and_then(|c| c.as_str())
        .map(str::to_string)
        .ok_or_else(|| TransportError::Fatal("response has no choices[0].message.content".into()))
}

impl ChatTransport for HttpChatTransport {
    fn send(&self, _role: AgentRole, request: &ChatRequest) -> Result<String, TransportError> {
        let resp = http::classify(http::post_json(
            &self.agent,
            &self.url,
            Some(&self.api_key),
            request,
        ))
        .map_err(|a| match a {
            Attempt::Retry(m) => TransportError::Retryable(m),
            Attempt::Fatal(m) => TransportError::Fatal(m),
        })?;
        extract_content(&resp.body)
    }
}

type Script = Box<dyn FnMut(AgentRole, &ChatRequest) -> Result<String, TransportError> + Send>;

/// Test transport that replays canned replies or delegates to a closure.
pub struct ScriptedTransport {
    script: Mutex<Script>,
    calls: Mutex<Vec<(AgentRole, ChatRequest)>>,
}

impl ScriptedTransport {
    pub fn from_fn(
        f: impl FnMut(AgentRole, &ChatRequest) -> Result<String, TransportError> + Send + 'static,
    ) -> Self {
        Self {
            script: Mutex::new(Box::new(f)),
            calls: Mutex::new(Vec::new()),
        }
    }

    /// Replies in order; once exhausted every call fails fatally.
    pub fn sequence(replies: Vec<Result<String, TransportError>>) -> Self {
        let mut queue: VecDeque<_> = replies.into();
        Self::from_fn(move |_, _| {
            queue
                .pop_front()
                .unwrap_or_else(|| Err(TransportError::Fatal("script exhausted".into())))
        })
    }

    pub fn calls(&self) -> Vec<(AgentRole, ChatRequest)> {
        self.calls.lock().expect("poisoned").clone()
    }
}

impl ChatTransport for ScriptedTransport {
    fn send(&self, role: AgentRole, request: &ChatRequest) -> Result<String, TransportError> {
        self.calls
            .lock()
            .expect("poisoned")
            .push((role, request.clone()));
        (self.script.lock().expect("poisoned"))(role, request)
    }
}

/// Runs the three agent roles over a shared transport.
#[derive(Clone)]
pub struct ChatAgent {
    transport: Arc<dyn ChatTransport>,
    settings: AgentSettings,
    retry: RetryPolicy,
}

impl ChatAgent {
    pub fn new(
        transport: Arc<dyn ChatTransport>,
        settings: AgentSettings,
        retry: RetryPolicy,
    ) -> Self {
        Self {
            transport,
            settings,
            retry,
        }
    }

    pub fn settings(&self) -> &AgentSettings {
        &self.settings
    }

    /// One user message behind the role's system preamble, with retries on
    /// transport failures.
    pub fn complete(
        &self,
        role: AgentRole,
        rendered_prompt: &str,
    ) -> Result<AgentExchange, AgentError> {
        if rendered_prompt.trim().is_empty() {
            return Err(AgentError::EmptyPrompt);
        }
        let request = ChatRequest {
            model: self.settings.model.clone(),
            messages: vec![
                ChatMessage {
                    role: "system".into(),
                    content: self.settings.preambles.for_role(role).to_string(),
                },
                ChatMessage {
                    role: "user".into(),
                    content: rendered_prompt.to_string(),
                },
            ],
            temperature: self.settings.temperature,
        };
        let started = Instant::now();
        let (raw, attempt) = self
            .retry
            .run(|_| {
                self.transport.send(role, &request).map_err(|e| match e {
                    TransportError::Retryable(m) => Attempt::Retry(m),
                    TransportError::Fatal(m) => Attempt::Fatal(m),
                })
            })
            .map_err(|e| match e {
                RetryError::Exhausted { attempts, last } => AgentError::AgentUnavailable {
                    role,
                    attempts,
                    message: last,
                },
                RetryError::Fatal { attempt, error } => AgentError::AgentUnavailable {
                    role,
                    attempts: attempt,
                    message: error,
                },
            })?;
        if raw.trim().is_empty() {
            return Err(AgentError::EmptyResponse { role });
        }
        Ok(AgentExchange {
            agent_role: role,
            rendered_prompt: rendered_prompt.to_string(),
            raw_response: raw,
            latency_ms: started.elapsed().as_millis() as u64,
            attempt,
        })
    }

    /// Generator step: the refined prompt is the trimmed reply.
    pub fn refine(
        &self,
        instruction: &Instruction,
        query: &str,
    ) -> Result<AgentExchange, AgentError> {
        let prompt = render_generator_prompt(instruction, query)?;
        let mut exchange = self.complete(AgentRole::Generator, &prompt)?;
        exchange.raw_response = exchange.raw_response.trim().to_string();
        Ok(exchange)
    }

    /// Gradient Calculator step. A reply without improvements is re-asked
    /// once with a format reminder.
    pub fn compute_gradient(
        &self,
        instruction: &Instruction,
        low_batch: &[ScoredPrompt],
        high_batch: &[ScoredPrompt],
    ) -> Result<(GradientReport, Vec<AgentExchange>), AgentError> {
        let prompt = render_gradient_prompt(instruction, low_batch, high_batch)?;
        let first = self.complete(AgentRole::GradientCalculator, &prompt)?;
        if let Ok(report) = parse_gradient_report(&first.raw_response) {
            return Ok((report, vec![first]));
        }
        log::warn!("gradient report unparseable, re-asking once");
        let second = self.complete(
            AgentRole::GradientCalculator,
            &format!("{prompt}{GRADIENT_FORMAT_REMINDER}"),
        )?;
        let report = parse_gradient_report(&second.raw_response)?;
        Ok((report, vec![first, second]))
    }

    /// Instruction Modifier step, with the same single re-ask.
    pub fn modify_instruction(
        &self,
        report: &GradientReport,
        instruction: &Instruction,
        n: usize,
        iteration: u32,
        ids: &mut IdAllocator,
    ) -> Result<(Vec<Instruction>, Vec<AgentExchange>), AgentError> {
        let prompt = render_modifier_prompt(report, instruction, n)?;
        let first = self.complete(AgentRole::InstructionModifier, &prompt)?;
        let limit = n.min(report.improvements.len());
        if let Ok(mut children) =
            parse_new_instructions(&first.raw_response, instruction, iteration, ids)
        {
            children.truncate(limit);
            return Ok((children, vec![first]));
        }
        log::warn!("instruction modifier reply unparseable, re-asking once");
        let second = self.complete(
            AgentRole::InstructionModifier,
            &format!("{prompt}{MODIFIER_FORMAT_REMINDER}"),
        )?;
        let mut children =
            parse_new_instructions(&second.raw_response, instruction, iteration, ids)?;
        children.truncate(limit);
        Ok((children, vec![first, second]))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::selector::ArmId;

    fn agent(transport: Arc<ScriptedTransport>) -> ChatAgent {
        ChatAgent::new(
            transport,
            AgentSettings::default(),
            RetryPolicy::immediate(5),
        )
    }

    fn retryable() -> Result<String, TransportError> {
        Err(TransportError::Retryable("503".into()))
    }

    #[test]
    fn passthrough_on_first_attempt() {
        let t = Arc::new(ScriptedTransport::sequence(vec![Ok("ok".into())]));
        let ex = agent(t.clone())
            .complete(AgentRole::Generator, "hi")
            .unwrap();
        assert_eq!(ex.raw_response, "ok");
        assert_eq!(ex.attempt, 1);
        let calls = t.calls();
        assert_eq!(calls[0].1.messages.len(), 2);
        assert_eq!(calls[0].1.messages[0].role, "system");
        assert_eq!(calls[0].1.user_content(), "hi");
    }

    #[test]
    fn retries_until_success() {
        let t = Arc::new(ScriptedTransport::sequence(vec![
            retryable(),
            retryable(),
            Ok("ok".into()),
        ]));
        let ex = agent(t).complete(AgentRole::Generator, "hi").unwrap();
        assert_eq!(ex.attempt, 3);
    }

    #[test]
    fn five_failures_exhaust() {
        let t = Arc::new(ScriptedTransport::sequence(
            (0..6).map(|_| retryable()).collect(),
        ));
        let err = agent(t.clone())
            .complete(AgentRole::GradientCalculator, "hi")
            .unwrap_err();
        assert!(matches!(
            err,
            AgentError::AgentUnavailable { attempts: 5, .. }
        ));
        assert_eq!(t.calls().len(), 5);
    }

    #[test]
    fn empty_reply_is_an_error() {
        let t = Arc::new(ScriptedTransport::sequence(vec![Ok("  \n".into())]));
        assert_eq!(
            agent(t).complete(AgentRole::Generator, "hi").unwrap_err(),
            AgentError::EmptyResponse {
                role: AgentRole::Generator
            }
        );
    }

    #[test]
    fn gradient_reasks_once_then_parses() {
        let t = Arc::new(ScriptedTransport::sequence(vec![
            Ok("I think it is fine".into()),
            Ok("Inference 1: a\nImprovement 1: b".into()),
        ]));
        let instr = Instruction::initial(ArmId(0), "I").unwrap();
        let item = ScoredPrompt {
            query: "q".into(),
            prompt: "p".into(),
            score: crate::scoring::ScoreValue::new(25.0).unwrap(),
        };
        let (report, exchanges) = agent(t.clone())
            .compute_gradient(
                &instr,
                std::slice::from_ref(&item),
                std::slice::from_ref(&item),
            )
            .unwrap();
        assert_eq!(report.improvements, vec!["b"]);
        assert_eq!(exchanges.len(), 2);
        assert!(t.calls()[1]
            .1
            .user_content()
            .ends_with(GRADIENT_FORMAT_REMINDER));
    }

    #[test]
    fn modifier_caps_children_at_requested_count() {
        let t = Arc::new(ScriptedTransport::sequence(vec![Ok(
            "Instruction 1: A\nInstruction 2: B\nInstruction 3: C".into(),
        )]));
        let instr = Instruction::initial(ArmId(0), "I").unwrap();
        let report = GradientReport {
            inferences: vec![],
            improvements: vec!["x".into(), "y".into()],
        };
        let mut ids = IdAllocator::starting_at(1);
        let (children, _) = agent(t)
            .modify_instruction(&report, &instr, 5, 2, &mut ids)
            .unwrap();
        assert_eq!(children.len(), 2);
    }

    #[test]
    fn extracts_chat_completion_content() {
        let body = r#"{"choices":[{"message":{"role":"assistant","content":"hello"}}]}"#;
        assert_eq!(extract_content(body).unwrap(), "hello");
        assert!(matches!(
            extract_content("{}"),
            Err(TransportError::Fatal(_))
        ));
    }
}
