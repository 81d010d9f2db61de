use std::time::{Duration, Instant};

use serde_json::{json, Value};

use super::{Backend, CompletionRecord, PromptRequest, Provider, ProviderError};

pub const ENV_URL: &str = "VERINDUCE_LLM_URL";
pub const ENV_MODEL: &str = "VERINDUCE_LLM_MODEL";
pub const ENV_API_KEY: &str = "VERINDUCE_LLM_API_KEY";

const MAX_RETRIES: u32 = 2;
const BACKOFF_BASE: Duration = Duration::from_millis(500);

#[derive(Debug, Clone)]
pub struct LiveConfig {
    /// Base URL; `/chat/completions` is appended.
    pub base_url: String,
    pub model: String,
    pub api_key: Option<String>,
    pub timeout: Duration,
    pub temperature: f64,
}

impl LiveConfig {
    pub fn from_env() -> Self {
        Self {
            base_url: std::env::var(ENV_URL).unwrap_or_else(|_| "https://api.openai.com/v1".into()),
            model: std::env::var(ENV_MODEL).unwrap_or_else(|_| "gpt-4.1".into()),
            api_key: std::env::var(ENV_API_KEY).ok(),
            timeout: Duration::from_secs(120),
            temperature: 0.0,
        }
    }
}

/// OpenAI-compatible chat-completions client.
///
/// Transient failures (transport errors, timeouts, 5xx, 429) are retried
/// twice with exponential backoff; other 4xx responses fail immediately.
pub struct LiveProvider {
    config: LiveConfig,
    agent: ureq::Agent,
}

enum Attempt {
    Done(String),
    Retry(ProviderError),
    Fatal(ProviderError),
}

impl LiveProvider {
    pub fn new(config: LiveConfig) -> Self {
        let agent = ureq::Agent::config_builder()
            .timeout_global(Some(config.timeout))
            .http_status_as_error(false)
            .build()
            .into();
        Self { config, agent }
    }

    fn endpoint(&self) -> String {
        format!("{}/chat/completions", self.config.base_url.trim_end_matches('/'))
    }

    fn attempt(&self, body: &Value) -> Attempt {
        let mut req = self.agent.post(&self.endpoint());
        if let Some(key) = &self.config.api_key {
            req = req.header("Authorization", &format!("Bearer {key}"));
        }
        let mut resp = match req.send_json(body) {
            Ok(r) => r,
            Err(ureq::Error::Timeout(_)) => return Attempt::Retry(ProviderError::Timeout(self.config.timeout)),
            Err(e) => return Attempt::Retry(ProviderError::Transport(e.to_string())),
        };
        let status = resp.status().as_u16();
        let text = match resp.body_mut().read_to_string() {
            Ok(t) => t,
            Err(e) => return Attempt::Retry(ProviderError::Transport(e.to_string())),
        };
        if !(200..300).contains(&status) {
            let err = ProviderError::Http {
                status,
                body: text.chars().take(500).collect(),
            };
            return if status == 429 || status >= 500 {
                Attempt::Retry(err)
            } else {
                Attempt::Fatal(err)
            };
        }
        match extract_message(&text) {
            Some(content) => Attempt::Done(content),
            None => Attempt::Fatal(ProviderError::Transport(format!(
                "unexpected response body: {}",
                text.chars().take(200).collect::<String>()
            ))),
        }
    }
}

fn extract_message(body: &str) -> Option<String> {
    let v: Value = serde_json::from_str(body).ok()?;
    v.pointer("/choices/0/message/content")?.as_str().map(str::to_string)
}

impl Provider for LiveProvider {
    fn complete(&self, request: &PromptRequest) -> Result<CompletionRecord, ProviderError> {
        let body = json!({
            "model": self.config.model,
            "temperature": self.config.temperature,
            "messages": [{"role": "user", "content": request.rendered_text}],
        });
        let started = Instant::now();
        let mut last = None;
        for attempt in 0..=MAX_RETRIES {
            if attempt > 0 {
                std::thread::sleep(BACKOFF_BASE * 2u32.pow(attempt - 1));
            }
            match self.attempt(&body) {
                Attempt::Done(completion) => {
                    return Ok(CompletionRecord {
                        request: request.clone(),
                        completion,
                        latency_ms: started.elapsed().as_millis() as u64,
                        backend: Backend::Live,
                    })
                }
                Attempt::Fatal(e) => return Err(e),
                Attempt::Retry(e) => {
                    log::warn!("provider attempt {} failed: {e}", attempt + 1);
                    last = Some(e);
                }
            }
        }
        Err(last.expect("at least one attempt"))
    }

    fn model_id(&self) -> &str {
        &self.config.model
    }
}
