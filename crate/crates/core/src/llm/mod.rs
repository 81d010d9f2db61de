//! Completion providers and prompt rendering.
//!
//! Every LLM call in a run goes through [`Provider::complete`]. Three
//! backends exist: [`LiveProvider`] talks to an OpenAI-compatible chat
//! endpoint, [`ReplayProvider`] serves stored completions, and
//! [`RecordProvider`] wraps another provider and appends each exchange to a
//! replay file.

mod live;
mod replay;
pub mod templates;

use std::collections::BTreeMap;
use std::collections::HashMap;
use std::fmt;
use std::sync::Mutex;
use std::time::Duration;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use live::{LiveConfig, LiveProvider};
pub use replay::{parse_replay, RecordProvider, ReplayProvider};
pub use templates::{render_prompt, Bindings, TemplateError, TemplateId};

#[derive(Debug, Error)]
pub enum ProviderError {
    #[error("provider timed out after {0:?}")]
    Timeout(Duration),
    #[error("no scripted completion for role {role} step {step}{}", key.as_ref().map(|k| format!(" key {k}")).unwrap_or_default())]
    ReplayMiss { role: Role, step: u64, key: Option<String> },
    #[error("http {status}: {body}")]
    Http { status: u16, body: String },
    #[error("transport error: {0}")]
    Transport(String),
    #[error("replay file line {line}: {message}")]
    ReplayFormat { line: usize, message: String },
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Role {
    SeedGenerator,
    Critic,
    Modifier,
    ContextExtractor,
}

impl fmt::Display for Role {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            Role::SeedGenerator => "seed_generator",
            Role::Critic => "critic",
            Role::Modifier => "modifier",
            Role::ContextExtractor => "context_extractor",
        };
        f.write_str(s)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Backend {
    Live,
    Replay,
    Record,
}

/// Tag that, when present, joins `(role, step)` in the replay key. Context
/// extraction sets it to the cache key so replay does not depend on how many
/// extractions a warm cache skipped.
pub const REPLAY_KEY_TAG: &str = "key";

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PromptRequest {
    pub role: Role,
    pub step: u64,
    #[serde(default)]
    pub tags: BTreeMap<String, String>,
    #[serde(default)]
    pub rendered_text: String,
}

impl PromptRequest {
    pub fn new(role: Role, step: u64, rendered_text: String) -> Self {
        Self {
            role,
            step,
            tags: BTreeMap::new(),
            rendered_text,
        }
    }

    pub fn tag(mut self, key: &str, value: impl ToString) -> Self {
        self.tags.insert(key.to_string(), value.to_string());
        self
    }

    pub fn replay_key(&self) -> Option<&str> {
        self.tags.get(REPLAY_KEY_TAG).map(String::as_str)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CompletionRecord {
    pub request: PromptRequest,
    pub completion: String,
    #[serde(default)]
    pub latency_ms: u64,
    pub backend: Backend,
}

pub trait Provider: Send + Sync {
    fn complete(&self, request: &PromptRequest) -> Result<CompletionRecord, ProviderError>;

    /// Identifier of the underlying model, used in context cache keys.
    fn model_id(&self) -> &str;
}

impl<P: Provider + ?Sized> Provider for std::sync::Arc<P> {
    fn complete(&self, request: &PromptRequest) -> Result<CompletionRecord, ProviderError> {
        (**self).complete(request)
    }

    fn model_id(&self) -> &str {
        (**self).model_id()
    }
}

/// Per-role step numbering within one run.
#[derive(Debug, Default)]
pub struct StepCounter {
    next: Mutex<HashMap<Role, u64>>,
}

impl StepCounter {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn next(&self, role: Role) -> u64 {
        let mut map = self.next.lock().unwrap();
        let slot = map.entry(role).or_insert(0);
        let step = *slot;
        *slot += 1;
        step
    }

    pub fn issued(&self, role: Role) -> u64 {
        self.next.lock().unwrap().get(&role).copied().unwrap_or(0)
    }
}
