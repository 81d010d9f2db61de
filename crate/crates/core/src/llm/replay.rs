use std::collections::HashMap;
use std::fs::{File, OpenOptions};
use std::io::Write;
use std::path::Path;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;
use std::time::Instant;

use super::{Backend, CompletionRecord, PromptRequest, Provider, ProviderError, Role};

type ReplayKey = (Role, u64, Option<String>);

fn key_of(request: &PromptRequest) -> ReplayKey {
    (request.role, request.step, request.replay_key().map(str::to_string))
}

/// Parses an NDJSON replay file. Blank lines are skipped.
pub fn parse_replay(text: &str) -> Result<Vec<CompletionRecord>, ProviderError> {
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| {
            serde_json::from_str(l).map_err(|e| ProviderError::ReplayFormat {
                line: i + 1,
                message: e.to_string(),
            })
        })
        .collect()
}

/// Serves stored completions keyed by `(role, step, key-tag)`.
///
/// Lookups do not consume entries, so one script can drive several runs.
pub struct ReplayProvider {
    records: Vec<CompletionRecord>,
    index: HashMap<ReplayKey, usize>,
    calls: Mutex<HashMap<Role, usize>>,
    total_calls: AtomicUsize,
    model_id: String,
}

impl ReplayProvider {
    pub fn new(records: Vec<CompletionRecord>) -> Self {
        let mut index = HashMap::new();
        for (i, r) in records.iter().enumerate() {
            let key = key_of(&r.request);
            if index.contains_key(&key) {
                log::warn!(
                    "replay script has duplicate entry for {} step {}; keeping the first",
                    r.request.role,
                    r.request.step
                );
                continue;
            }
            index.insert(key, i);
        }
        Self {
            records,
            index,
            calls: Mutex::new(HashMap::new()),
            total_calls: AtomicUsize::new(0),
            model_id: "replay".to_string(),
        }
    }

    pub fn from_file(path: impl AsRef<Path>) -> Result<Self, ProviderError> {
        let text = std::fs::read_to_string(path)?;
        Ok(Self::new(parse_replay(&text)?))
    }

    pub fn with_model_id(mut self, model_id: impl Into<String>) -> Self {
        self.model_id = model_id.into();
        self
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    /// Successful lookups served so far.
    pub fn calls(&self) -> usize {
        self.total_calls.load(Ordering::SeqCst)
    }

    pub fn calls_for(&self, role: Role) -> usize {
        self.calls.lock().unwrap().get(&role).copied().unwrap_or(0)
    }
}

impl Provider for ReplayProvider {
    fn complete(&self, request: &PromptRequest) -> Result<CompletionRecord, ProviderError> {
        let key = key_of(request);
        let Some(&idx) = self.index.get(&key) else {
            return Err(ProviderError::ReplayMiss {
                role: key.0,
                step: key.1,
                key: key.2,
            });
        };
        let stored = &self.records[idx];
        if !stored.request.rendered_text.is_empty() && stored.request.rendered_text != request.rendered_text {
            log::warn!(
                "replay prompt mismatch for {} step {} (completion served anyway)",
                request.role,
                request.step
            );
        }
        *self.calls.lock().unwrap().entry(request.role).or_insert(0) += 1;
        self.total_calls.fetch_add(1, Ordering::SeqCst);
        Ok(CompletionRecord {
            request: request.clone(),
            completion: stored.completion.clone(),
            latency_ms: 0,
            backend: Backend::Replay,
        })
    }

    fn model_id(&self) -> &str {
        &self.model_id
    }
}

/// Forwards to `inner` and appends every exchange to a replay file.
pub struct RecordProvider<P> {
    inner: P,
    out: Mutex<File>,
}

impl<P: Provider> RecordProvider<P> {
    pub fn create(inner: P, path: impl AsRef<Path>) -> Result<Self, ProviderError> {
        let out = OpenOptions::new().create(true).append(true).open(path)?;
        Ok(Self {
            inner,
            out: Mutex::new(out),
        })
    }
}

impl<P: Provider> Provider for RecordProvider<P> {
    fn complete(&self, request: &PromptRequest) -> Result<CompletionRecord, ProviderError> {
        let started = Instant::now();
        let inner = self.inner.complete(request)?;
        let record = CompletionRecord {
            request: request.clone(),
            completion: inner.completion,
            latency_ms: started.elapsed().as_millis() as u64,
            backend: Backend::Record,
        };
        let line = serde_json::to_string(&record).expect("records serialize");
        let mut out = self.out.lock().unwrap();
        writeln!(out, "{line}")?;
        out.flush()?;
        Ok(record)
    }

    fn model_id(&self) -> &str {
        self.inner.model_id()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn record(role: Role, step: u64, completion: &str) -> CompletionRecord {
        CompletionRecord {
            request: PromptRequest::new(role, step, String::new()),
            completion: completion.into(),
            latency_ms: 0,
            backend: Backend::Record,
        }
    }

    #[test]
    fn hit_and_miss() {
        let p = ReplayProvider::new(vec![record(Role::SeedGenerator, 0, "hello")]);
        let r = p
            .complete(&PromptRequest::new(Role::SeedGenerator, 0, "prompt".into()))
            .unwrap();
        assert_eq!(r.completion, "hello");
        assert_eq!(r.backend, Backend::Replay);
        let miss = p.complete(&PromptRequest::new(Role::SeedGenerator, 1, "prompt".into()));
        assert!(matches!(miss, Err(ProviderError::ReplayMiss { step: 1, .. })));
        assert_eq!(p.calls(), 1);
    }

    #[test]
    fn key_tag_participates() {
        let mut r = record(Role::ContextExtractor, 0, "{}");
        r.request.tags.insert("key".into(), "e1|a".into());
        let p = ReplayProvider::new(vec![r]);
        let ok = PromptRequest::new(Role::ContextExtractor, 0, String::new()).tag("key", "e1|a");
        assert!(p.complete(&ok).is_ok());
        let other = PromptRequest::new(Role::ContextExtractor, 0, String::new()).tag("key", "e2|a");
        assert!(p.complete(&other).is_err());
    }

    #[test]
    fn record_then_replay_reproduces() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("replay.ndjson");
        let script: Vec<_> = (0..5).map(|i| record(Role::Critic, i, &format!("c{i}"))).collect();
        let source = ReplayProvider::new(script);
        let recorder = RecordProvider::create(source, &path).unwrap();
        let first: Vec<String> = (0..5)
            .map(|i| {
                recorder
                    .complete(&PromptRequest::new(Role::Critic, i, format!("p{i}")))
                    .unwrap()
                    .completion
            })
            .collect();
        drop(recorder);
        let replay = ReplayProvider::from_file(&path).unwrap();
        assert_eq!(replay.len(), 5);
        let second: Vec<String> = (0..5)
            .map(|i| {
                replay
                    .complete(&PromptRequest::new(Role::Critic, i, format!("p{i}")))
                    .unwrap()
                    .completion
            })
            .collect();
        assert_eq!(first, second);
    }

    #[test]
    fn malformed_line_reports_position() {
        let err = parse_replay("\n{broken").unwrap_err();
        assert!(matches!(err, ProviderError::ReplayFormat { line: 2, .. }));
    }
}
