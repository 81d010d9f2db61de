//! Per-example context extraction.
//!
//! Verifiers read structured values (a final answer, a list of numbers, ...)
//! from a context object instead of re-parsing the raw output. Contexts are
//! produced by one LLM call per (example, field set) and cached on disk as
//! NDJSON so repeated runs and grid points reuse them.

use std::collections::HashMap;
use std::fs::{File, OpenOptions};
use std::io::Write;
use std::path::{Path, PathBuf};
use std::sync::{Arc, Mutex, OnceLock};

use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};
use sha2::{Digest as _, Sha256};
use thiserror::Error;

use crate::bundle::{VerifierBundle, VerifierSpec};
use crate::dataset::DevExample;
use crate::llm::{Bindings, PromptRequest, Provider, Role, TemplateId, REPLAY_KEY_TAG};

#[derive(Debug, Error)]
pub enum ContextError {
    #[error("context cache {path} is corrupt at line {line}: {message}")]
    CacheCorrupt { path: String, line: usize, message: String },
    #[error("io error on context cache: {0}")]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Context {
    pub example_id: String,
    pub fields: Vec<String>,
    pub values: Map<String, Value>,
}

impl Context {
    pub fn empty(example_id: &str) -> Self {
        Self {
            example_id: example_id.to_string(),
            fields: Vec::new(),
            values: Map::new(),
        }
    }

    pub fn all_null(example_id: &str, fields: &[String]) -> Self {
        Self::shaped(example_id, fields, &Map::new())
    }

    /// Exactly `fields`, in order, taking values from `source` and null for
    /// anything absent. Extra keys in `source` are dropped.
    pub fn shaped(example_id: &str, fields: &[String], source: &Map<String, Value>) -> Self {
        let values = fields
            .iter()
            .map(|f| (f.clone(), source.get(f).cloned().unwrap_or(Value::Null)))
            .collect();
        Self {
            example_id: example_id.to_string(),
            fields: fields.to_vec(),
            values,
        }
    }

    pub fn is_all_null(&self) -> bool {
        self.values.values().all(Value::is_null)
    }
}

/// Union of all `requires` lists in first-occurrence order.
pub fn required_fields(bundle: &VerifierBundle) -> Vec<String> {
    required_fields_of(&bundle.specs)
}

pub fn required_fields_of(specs: &[VerifierSpec]) -> Vec<String> {
    let mut out: Vec<String> = Vec::new();
    for field in specs.iter().flat_map(|s| &s.requires) {
        if !out.contains(field) {
            out.push(field.clone());
        }
    }
    out
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum JsonExtractError {
    NoObject,
    Ambiguous,
}

/// Finds the single JSON object embedded in `text`.
///
/// Outermost brace-balanced spans are tried first; a span that does not
/// parse is searched for inner objects. More than one disjoint parseable
/// object is ambiguous.
pub fn extract_json_object(text: &str) -> Result<Map<String, Value>, JsonExtractError> {
    let mut found = Vec::new();
    collect_objects(text, &mut found);
    match found.len() {
        0 => Err(JsonExtractError::NoObject),
        1 => Ok(found.pop().unwrap()),
        _ => Err(JsonExtractError::Ambiguous),
    }
}

fn collect_objects(text: &str, found: &mut Vec<Map<String, Value>>) {
    for (start, end) in balanced_spans(text) {
        let span = &text[start..end];
        match serde_json::from_str::<Value>(span) {
            Ok(Value::Object(map)) => found.push(map),
            _ => collect_objects(&span[1..span.len() - 1], found),
        }
        if found.len() > 1 {
            return;
        }
    }
}

/// Byte ranges of outermost `{...}` spans, skipping braces inside JSON
/// string literals.
fn balanced_spans(text: &str) -> Vec<(usize, usize)> {
    let bytes = text.as_bytes();
    let mut spans = Vec::new();
    let mut depth = 0usize;
    let mut start = 0;
    let mut in_string = false;
    let mut escaped = false;
    for (i, &b) in bytes.iter().enumerate() {
        if depth > 0 && in_string {
            if escaped {
                escaped = false;
            } else if b == b'\\' {
                escaped = true;
            } else if b == b'"' {
                in_string = false;
            }
            continue;
        }
        match b {
            b'"' if depth > 0 => in_string = true,
            b'{' => {
                if depth == 0 {
                    start = i;
                }
                depth += 1;
            }
            b'}' if depth > 0 => {
                depth -= 1;
                if depth == 0 {
                    spans.push((start, i + 1));
                }
            }
            _ => {}
        }
    }
    spans
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct ContextCacheKey {
    pub example_id: String,
    /// Sorted, deduplicated.
    pub fields: Vec<String>,
    pub model: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub specs_digest: Option<String>,
}

impl ContextCacheKey {
    pub fn new(example_id: &str, fields: &[String], model: &str, specs_digest: Option<String>) -> Self {
        let mut fields = fields.to_vec();
        fields.sort();
        fields.dedup();
        Self {
            example_id: example_id.to_string(),
            fields,
            model: model.to_string(),
            specs_digest,
        }
    }

    /// Replay key for the extraction request. The model is left out so a
    /// script recorded against a live model replays unchanged.
    pub fn replay_tag(&self) -> String {
        let mut tag = format!("{}|{}", self.example_id, self.fields.join(","));
        if let Some(d) = &self.specs_digest {
            tag.push('|');
            tag.push_str(d);
        }
        tag
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct CacheEntry {
    values: Map<String, Value>,
    #[serde(default)]
    warnings: Vec<String>,
}

#[derive(Serialize, Deserialize)]
struct CacheLine {
    key: ContextCacheKey,
    values: Map<String, Value>,
    warnings: Vec<String>,
    checksum: String,
}

fn line_checksum(key: &ContextCacheKey, values: &Map<String, Value>, warnings: &[String]) -> String {
    let canonical = serde_json::json!({"key": key, "values": values, "warnings": warnings});
    hex::encode(Sha256::digest(canonical.to_string().as_bytes()))
}

/// Key, extracted values and warnings of one cache line.
pub type CacheRecord = (ContextCacheKey, Map<String, Value>, Vec<String>);

/// Decodes one cache file line and checks its checksum.
pub fn parse_cache_line(raw: &str) -> Result<CacheRecord, String> {
    let line: CacheLine = serde_json::from_str(raw).map_err(|e| e.to_string())?;
    if line_checksum(&line.key, &line.values, &line.warnings) != line.checksum {
        return Err("checksum mismatch".into());
    }
    Ok((line.key, line.values, line.warnings))
}

type Slot = Arc<OnceLock<CacheEntry>>;

/// Extraction cache. Concurrent misses on one key share a single
/// extraction.
pub struct ContextCache {
    slots: Mutex<HashMap<ContextCacheKey, Slot>>,
    file: Option<Mutex<File>>,
    path: Option<PathBuf>,
}

impl ContextCache {
    pub fn in_memory() -> Self {
        Self {
            slots: Mutex::new(HashMap::new()),
            file: None,
            path: None,
        }
    }

    /// Loads an existing cache file (or starts an empty one). Any line that
    /// fails to parse or whose checksum does not match is reported as
    /// corruption.
    pub fn open(path: impl AsRef<Path>) -> Result<Self, ContextError> {
        let path = path.as_ref();
        let mut slots = HashMap::new();
        if path.exists() {
            let text = std::fs::read_to_string(path)?;
            for (i, raw) in text.lines().enumerate() {
                if raw.trim().is_empty() {
                    continue;
                }
                let corrupt = |message: String| ContextError::CacheCorrupt {
                    path: path.display().to_string(),
                    line: i + 1,
                    message,
                };
                let (key, values, warnings) = parse_cache_line(raw).map_err(corrupt)?;
                let cell = OnceLock::new();
                let _ = cell.set(CacheEntry { values, warnings });
                slots.insert(key, Arc::new(cell));
            }
        }
        let file = OpenOptions::new().create(true).append(true).open(path)?;
        Ok(Self {
            slots: Mutex::new(slots),
            file: Some(Mutex::new(file)),
            path: Some(path.to_path_buf()),
        })
    }

    /// Like [`open`](Self::open), but a corrupt file is truncated and the
    /// cache starts empty. The corruption error is returned alongside.
    pub fn open_or_rebuild(path: impl AsRef<Path>) -> Result<(Self, Option<ContextError>), ContextError> {
        match Self::open(path.as_ref()) {
            Ok(c) => Ok((c, None)),
            Err(e @ ContextError::CacheCorrupt { .. }) => {
                log::warn!("{e}; rebuilding empty");
                std::fs::write(path.as_ref(), "")?;
                Ok((Self::open(path)?, Some(e)))
            }
            Err(e) => Err(e),
        }
    }

    pub fn len(&self) -> usize {
        self.slots
            .lock()
            .unwrap()
            .values()
            .filter(|s| s.get().is_some())
            .count()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn slot(&self, key: &ContextCacheKey) -> Slot {
        self.slots.lock().unwrap().entry(key.clone()).or_default().clone()
    }

    fn persist(&self, key: &ContextCacheKey, entry: &CacheEntry) -> Result<(), ContextError> {
        let Some(file) = &self.file else { return Ok(()) };
        let line = CacheLine {
            key: key.clone(),
            values: entry.values.clone(),
            warnings: entry.warnings.clone(),
            checksum: line_checksum(key, &entry.values, &entry.warnings),
        };
        let mut f = file.lock().unwrap();
        writeln!(f, "{}", serde_json::to_string(&line).expect("cache lines serialize"))?;
        f.flush()?;
        Ok(())
    }

    /// Rewrites the backing file with one line per key, sorted by key.
    pub fn compact(&self) -> Result<usize, ContextError> {
        let (Some(path), Some(file)) = (&self.path, &self.file) else {
            return Ok(self.len());
        };
        let slots = self.slots.lock().unwrap();
        let mut keys: Vec<_> = slots.iter().filter(|(_, s)| s.get().is_some()).collect();
        keys.sort_by(|a, b| a.0.cmp(b.0));
        let mut out = String::new();
        for (key, slot) in &keys {
            let entry = slot.get().unwrap();
            let line = CacheLine {
                key: (*key).clone(),
                values: entry.values.clone(),
                warnings: entry.warnings.clone(),
                checksum: line_checksum(key, &entry.values, &entry.warnings),
            };
            out.push_str(&serde_json::to_string(&line).expect("cache lines serialize"));
            out.push('\n');
        }
        let _guard = file.lock().unwrap();
        let tmp = path.with_extension("compact.tmp");
        std::fs::write(&tmp, out)?;
        std::fs::rename(&tmp, path)?;
        drop(_guard);
        *file.lock().unwrap() = OpenOptions::new().append(true).open(path)?;
        Ok(keys.len())
    }
}

/// Runs extraction calls against a provider and maintains the cache.
pub struct ContextExtractor {
    provider: Arc<dyn Provider>,
    cache: Arc<ContextCache>,
    task_description: String,
    /// Key the cache on the specs as well as the field list.
    strict_specs: bool,
    warnings: Mutex<Vec<String>>,
}

impl ContextExtractor {
    pub fn new(provider: Arc<dyn Provider>, cache: Arc<ContextCache>, task_description: impl Into<String>) -> Self {
        Self {
            provider,
            cache,
            task_description: task_description.into(),
            strict_specs: false,
            warnings: Mutex::new(Vec::new()),
        }
    }

    pub fn strict_specs(mut self, strict: bool) -> Self {
        self.strict_specs = strict;
        self
    }

    pub fn cache(&self) -> &Arc<ContextCache> {
        &self.cache
    }

    /// Warnings accumulated since the last call, in order.
    pub fn take_warnings(&self) -> Vec<String> {
        std::mem::take(&mut *self.warnings.lock().unwrap())
    }

    pub fn key_for(&self, example: &DevExample, fields: &[String], specs: &[VerifierSpec]) -> ContextCacheKey {
        let specs_digest = self.strict_specs.then(|| {
            let json = serde_json::to_string(specs).expect("specs serialize");
            hex::encode(Sha256::digest(json.as_bytes()))[..16].to_string()
        });
        ContextCacheKey::new(&example.id, fields, self.provider.model_id(), specs_digest)
    }

    /// One extraction call, re-asked once on an unparseable reply. Never
    /// fails: the fallback is an all-null context plus a warning.
    pub fn extract_context(&self, example: &DevExample, fields: &[String], specs: &[VerifierSpec]) -> Context {
        if fields.is_empty() {
            return Context::empty(&example.id);
        }
        let key = self.key_for(example, fields, specs);
        let entry = self.extract_entry(example, fields, specs, &key);
        self.note(&entry.warnings);
        Context::shaped(&example.id, fields, &entry.values)
    }

    pub fn get_or_extract(&self, example: &DevExample, fields: &[String], specs: &[VerifierSpec]) -> Context {
        if fields.is_empty() {
            return Context::empty(&example.id);
        }
        let key = self.key_for(example, fields, specs);
        let slot = self.cache.slot(&key);
        let mut fresh = false;
        let entry = slot.get_or_init(|| {
            fresh = true;
            let entry = self.extract_entry(example, fields, specs, &key);
            if let Err(e) = self.cache.persist(&key, &entry) {
                log::warn!("failed to persist context cache entry: {e}");
            }
            entry
        });
        if fresh {
            self.note(&entry.warnings);
        }
        Context::shaped(&example.id, fields, &entry.values)
    }

    fn note(&self, warnings: &[String]) {
        if !warnings.is_empty() {
            self.warnings.lock().unwrap().extend(warnings.iter().cloned());
        }
    }

    fn extract_entry(
        &self,
        example: &DevExample,
        fields: &[String],
        specs: &[VerifierSpec],
        key: &ContextCacheKey,
    ) -> CacheEntry {
        let prompt = Bindings::new()
            .set("task_description", &self.task_description)
            .set("input", &example.x)
            .set("output", &example.y)
            .set("fields", serde_json::to_string(fields).expect("fields serialize"))
            .set("specs", serde_json::to_string(specs).expect("specs serialize"))
            .render(TemplateId::Context)
            .expect("context template bindings are complete");
        let tag = key.replay_tag();
        let mut failures = Vec::new();
        for attempt in 0..2u64 {
            let request = PromptRequest::new(Role::ContextExtractor, attempt, prompt.clone())
                .tag(REPLAY_KEY_TAG, &tag)
                .tag("example_id", &example.id);
            match self.provider.complete(&request) {
                Ok(record) => match extract_json_object(&record.completion) {
                    Ok(obj) => {
                        let shaped = Context::shaped(&example.id, fields, &obj);
                        return CacheEntry {
                            values: shaped.values,
                            warnings: failures,
                        };
                    }
                    Err(e) => failures.push(format!(
                        "context for {} attempt {}: {}",
                        example.id,
                        attempt + 1,
                        match e {
                            JsonExtractError::NoObject => "no JSON object in reply",
                            JsonExtractError::Ambiguous => "more than one JSON object in reply",
                        }
                    )),
                },
                Err(e) => failures.push(format!("context for {} attempt {}: {e}", example.id, attempt + 1)),
            }
        }
        failures.push(format!("context for {}: falling back to all-null", example.id));
        CacheEntry {
            values: Context::all_null(&example.id, fields).values,
            warnings: failures,
        }
    }
}
