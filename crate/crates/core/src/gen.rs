//! Prompt assembly and chat-completion providers.

use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::eval::split_statements;
use crate::remote::{JsonClient, RetryPolicy};

pub const LLM_API_KEY_ENV: &str = "RAGFORGE_LLM_API_KEY";
pub const DEFAULT_TOP_P: f64 = 0.95;
pub const DEFAULT_MAX_CONTEXT_CHARS: usize = 12_000;
pub const DEFAULT_PREAMBLE: &str = "You are a research assistant for wireless networking and \
communication systems. Answer the question. When numbered contexts are provided, base the \
answer on them.";
/// Answer the canned provider gives when the prompt carries no context.
pub const NO_CONTEXT_ANSWER: &str = "I do not have information about that.";

const CONTEXT_HEADER: &str = "[Context ";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ContextPassage {
    pub chunk_id: String,
    pub text: String,
    pub score: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GenerationRequest {
    pub question: String,
    /// Ranked by score, highest first.
    pub contexts: Vec<ContextPassage>,
    pub system_preamble: String,
    pub sampling_top_p: f64,
    pub max_context_chars: usize,
    pub model_name: String,
}

impl GenerationRequest {
    pub fn new(question: impl Into<String>, contexts: Vec<ContextPassage>) -> Self {
        Self {
            question: question.into(),
            contexts,
            system_preamble: DEFAULT_PREAMBLE.into(),
            sampling_top_p: DEFAULT_TOP_P,
            max_context_chars: DEFAULT_MAX_CONTEXT_CHARS,
            model_name: String::new(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GenerationResult {
    pub answer: String,
    pub used_contexts: Vec<String>,
    pub provider_latency_ms: u64,
}

/// System and user message text plus how many leading contexts fit the budget.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AssembledPrompt {
    pub system: String,
    pub user: String,
    pub used: usize,
}

impl AssembledPrompt {
    pub fn full_text(&self) -> String {
        format!("{}\n\n{}", self.system, self.user)
    }
}

/// Lays out the prompt: contexts in rank order, each as
/// `[Context i] (score=s)` followed by its text, then the question.
///
/// Contexts are included whole while their combined text length in characters stays
/// within `max_context_chars`; the first one that does not fit ends inclusion.
pub fn assemble_prompt(req: &GenerationRequest) -> AssembledPrompt {
    let mut user = String::new();
    let mut budget = req.max_context_chars;
    let mut used = 0;
    for (i, ctx) in req.contexts.iter().enumerate() {
        let len = ctx.text.chars().count();
        if len > budget {
            break;
        }
        budget -= len;
        used += 1;
        user.push_str(&format!("{CONTEXT_HEADER}{}] (score={:.4})\n{}\n\n", i + 1, ctx.score, ctx.text));
    }
    user.push_str("Question: ");
    user.push_str(&req.question);
    AssembledPrompt {
        system: req.system_preamble.clone(),
        user,
        used,
    }
}

pub fn build_prompt(req: &GenerationRequest) -> Result<String> {
    if req.question.trim().is_empty() {
        return Err(Error::EmptyInput);
    }
    Ok(assemble_prompt(req).full_text())
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ChatMessage {
    pub role: String,
    pub content: String,
}

/// Body of an OpenAI-compatible chat completion request.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChatRequest {
    pub model: String,
    pub messages: Vec<ChatMessage>,
    pub top_p: f64,
}

pub trait ChatProvider: Send + Sync {
    fn complete(&self, req: &ChatRequest) -> Result<String>;
}

pub fn generate(req: &GenerationRequest, provider: &dyn ChatProvider) -> Result<GenerationResult> {
    if req.question.trim().is_empty() {
        return Err(Error::EmptyInput);
    }
    if !(req.sampling_top_p > 0.0 && req.sampling_top_p <= 1.0) {
        return Err(Error::InvalidConfig(format!(
            "sampling_top_p must be in (0, 1], got {}",
            req.sampling_top_p
        )));
    }
    let prompt = assemble_prompt(req);
    let chat = ChatRequest {
        model: req.model_name.clone(),
        messages: vec![
            ChatMessage {
                role: "system".into(),
                content: prompt.system.clone(),
            },
            ChatMessage {
                role: "user".into(),
                content: prompt.user.clone(),
            },
        ],
        top_p: req.sampling_top_p,
    };
    let started = Instant::now();
    let answer = provider.complete(&chat)?;
    let provider_latency_ms = started.elapsed().as_millis() as u64;
    if answer.trim().is_empty() {
        return Err(Error::Refused("provider returned an empty answer".into()));
    }
    Ok(GenerationResult {
        answer,
        used_contexts: req.contexts[..prompt.used]
            .iter()
            .map(|c| c.chunk_id.clone())
            .collect(),
        provider_latency_ms,
    })
}

/// Offline provider: answers with the first sentence of the top-ranked context, or
/// [`NO_CONTEXT_ANSWER`] when the prompt carries none.
#[derive(Debug, Clone, Copy, Default)]
pub struct CannedProvider;

impl CannedProvider {
    pub fn answer_for(user_message: &str) -> String {
        let Some(rest) = user_message.strip_prefix(CONTEXT_HEADER) else {
            return NO_CONTEXT_ANSWER.into();
        };
        // Skip the "1] (score=...)" header line.
        let Some((_, body)) = rest.split_once('\n') else {
            return NO_CONTEXT_ANSWER.into();
        };
        let body = body.split("\n\n[Context ").next().unwrap_or(body);
        let body = body.rsplit_once("\n\nQuestion: ").map_or(body, |(b, _)| b);
        split_statements(body)
            .into_iter()
            .next()
            .unwrap_or_else(|| NO_CONTEXT_ANSWER.into())
    }
}

impl ChatProvider for CannedProvider {
    fn complete(&self, req: &ChatRequest) -> Result<String> {
        let user = req
            .messages
            .iter()
            .rev()
            .find(|m| m.role == "user")
            .map_or("", |m| m.content.as_str());
        Ok(Self::answer_for(user))
    }
}

#[derive(Deserialize)]
struct ChatResponse {
    choices: Vec<ChatChoice>,
}

#[derive(Deserialize)]
struct ChatChoice {
    message: ChatMessageOut,
    #[serde(default)]
    finish_reason: Option<String>,
}

#[derive(Deserialize)]
struct ChatMessageOut {
    #[serde(default)]
    content: Option<String>,
    #[serde(default)]
    refusal: Option<String>,
}

/// Client for `POST {endpoint}/v1/chat/completions`.
#[derive(Debug)]
pub struct RemoteChatProvider {
    url: String,
    client: JsonClient,
}

impl RemoteChatProvider {
    pub fn new(spec: &GeneratorSpec, api_key: Option<String>) -> Result<Self> {
        let endpoint = spec
            .endpoint
            .as_deref()
            .ok_or_else(|| Error::InvalidConfig("remote generator needs an endpoint".into()))?;
        Ok(Self {
            url: format!("{}/v1/chat/completions", endpoint.trim_end_matches('/')),
            client: JsonClient::new(
                api_key,
                spec.retry,
                spec.max_in_flight,
                Duration::from_millis(spec.timeout_ms),
            )?,
        })
    }
}

impl ChatProvider for RemoteChatProvider {
    fn complete(&self, req: &ChatRequest) -> Result<String> {
        let resp: ChatResponse = self.client.post(&self.url, req)?;
        let choice = resp
            .choices
            .into_iter()
            .next()
            .ok_or_else(|| Error::BadResponse("no choices in response".into()))?;
        if let Some(r) = choice.message.refusal {
            return Err(Error::Refused(r));
        }
        if choice.finish_reason.as_deref() == Some("content_filter") {
            return Err(Error::Refused("content filtered".into()));
        }
        choice
            .message
            .content
            .ok_or_else(|| Error::BadResponse("choice has no content".into()))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum GeneratorKind {
    Canned,
    Remote,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GeneratorSpec {
    pub kind: GeneratorKind,
    pub endpoint: Option<String>,
    pub model_name: String,
    pub system_preamble: String,
    pub sampling_top_p: f64,
    pub max_context_chars: usize,
    pub max_in_flight: usize,
    pub timeout_ms: u64,
    pub retry: RetryPolicy,
}

impl Default for GeneratorSpec {
    fn default() -> Self {
        Self {
            kind: GeneratorKind::Canned,
            endpoint: None,
            model_name: "canned-echo".into(),
            system_preamble: DEFAULT_PREAMBLE.into(),
            sampling_top_p: DEFAULT_TOP_P,
            max_context_chars: DEFAULT_MAX_CONTEXT_CHARS,
            max_in_flight: 2,
            timeout_ms: 120_000,
            retry: RetryPolicy::default(),
        }
    }
}

impl GeneratorSpec {
    pub fn validate(&self) -> Result<()> {
        if !(self.sampling_top_p > 0.0 && self.sampling_top_p <= 1.0) {
            return Err(Error::InvalidConfig(format!(
                "sampling_top_p must be in (0, 1], got {}",
                self.sampling_top_p
            )));
        }
        if self.kind == GeneratorKind::Remote && self.endpoint.is_none() {
            return Err(Error::InvalidConfig("remote generator needs an endpoint".into()));
        }
        Ok(())
    }

    /// Instantiates the provider. Remote credentials come from `RAGFORGE_LLM_API_KEY`.
    pub fn build(&self) -> Result<Box<dyn ChatProvider>> {
        self.validate()?;
        Ok(match self.kind {
            GeneratorKind::Canned => Box::new(CannedProvider),
            GeneratorKind::Remote => Box::new(RemoteChatProvider::new(
                self,
                std::env::var(LLM_API_KEY_ENV).ok(),
            )?),
        })
    }

    pub fn request(&self, question: &str, contexts: Vec<ContextPassage>) -> GenerationRequest {
        GenerationRequest {
            question: question.into(),
            contexts,
            system_preamble: self.system_preamble.clone(),
            sampling_top_p: self.sampling_top_p,
            max_context_chars: self.max_context_chars,
            model_name: self.model_name.clone(),
        }
    }
}
