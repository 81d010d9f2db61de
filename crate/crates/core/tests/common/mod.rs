#![allow(dead_code)]

use std::path::PathBuf;
use std::sync::Arc;
use std::time::Duration;

use verinduce::context::{ContextCache, ContextExtractor};
use verinduce::dataset::{load_dev_set, DevSet};
use verinduce::gateway::{Gateway, GatewayConfig, WorkerCommand};
use verinduce::llm::{Provider, ReplayProvider};
use verinduce::search::Evaluator;

pub const TASK: &str = "output must contain an even integer in a boxed marker";

pub fn stub_command() -> WorkerCommand {
    WorkerCommand::new(env!("CARGO_BIN_EXE_verinduce-stub-worker"))
}

pub fn gateway_with(workers: usize, timeout: Duration) -> Arc<Gateway> {
    let mut config = GatewayConfig::new(stub_command());
    config.workers = workers;
    config.timeout_per_call = timeout;
    Arc::new(Gateway::start(config).expect("stub worker starts"))
}

pub fn gateway() -> Arc<Gateway> {
    gateway_with(1, Duration::from_millis(2000))
}

pub fn fixture(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures").join(name)
}

pub fn fixture_text(name: &str) -> String {
    std::fs::read_to_string(fixture(name)).unwrap()
}

pub fn replay(name: &str) -> Arc<ReplayProvider> {
    Arc::new(ReplayProvider::from_file(fixture(name)).expect("replay fixture parses"))
}

pub fn even_boxed_dev() -> DevSet {
    load_dev_set(fixture("even_boxed_dev.ndjson"), TASK).unwrap()
}

pub fn evaluator(provider: Arc<dyn Provider>, task: &str, gateway: Arc<Gateway>) -> Evaluator {
    let extractor = ContextExtractor::new(provider, Arc::new(ContextCache::in_memory()), task);
    Evaluator::new(gateway, Arc::new(extractor), Duration::from_millis(2000))
}

const AGG: &str = "\ndef aggregate(checks, x, y, context=None):\n    return all(checks.values())\n";

fn wrap(imports: &str, body: &str) -> String {
    format!(
        "{imports}\nVERIFIER_SPECS = [\n    {{\"name\": \"check\", \"description\": \"probe\", \"requires\": []}},\n]\n\ndef check(x, y, context=None):\n{body}\n{AGG}"
    )
}

/// Bundles that break the verifier contract, each with a short label.
pub fn probe_corpus() -> Vec<(&'static str, String)> {
    let mut probes: Vec<(&'static str, String)> = vec![
        ("compile", wrap("", "    code = compile(y, 'v', 'eval')\n    return code is not None")),
        ("exec", wrap("", "    exec(y)\n    return True")),
        ("eval", wrap("", "    return bool(eval(y))")),
        ("open", wrap("", "    with_handle = open('/etc/passwd')\n    return True")),
        ("input", wrap("", "    return input() == y")),
        ("globals", wrap("", "    return 'x' in globals()")),
        ("locals", wrap("", "    return len(locals()) > 0")),
        ("vars", wrap("", "    return len(vars()) > 0")),
        ("getattr", wrap("", "    f = getattr(y, 'upper')\n    return f() == y")),
        ("setattr", wrap("", "    setattr(check, 'flag', 1)\n    return True")),
        ("delattr", wrap("", "    delattr(check, 'flag')\n    return True")),
        ("__import__", wrap("", "    m = __import__('os')\n    return m is not None")),
        ("breakpoint", wrap("", "    breakpoint()\n    return True")),
        ("help", wrap("", "    h = help\n    return h is not None")),
        ("__builtins__", wrap("", "    b = __builtins__\n    return b is not None")),
        ("import os", wrap("import os", "    return os.getcwd() != y")),
        ("import sys", wrap("import sys", "    return len(sys.argv) > 0")),
        ("import subprocess", wrap("import subprocess", "    return subprocess is not None")),
        ("import socket", wrap("import socket", "    return socket is not None")),
        ("import shutil", wrap("import shutil", "    return shutil is not None")),
        ("from os import path", wrap("from os import path", "    return path.exists(y)")),
        ("import re, os", wrap("import re, os", "    return re.search('a', y) is not None")),
        ("relative import", wrap("from . import helpers", "    return True")),
        ("dunder attribute", wrap("", "    cls = ().__class__\n    return cls is not None")),
    ];
    probes.push((
        "missing specs",
        format!("def check(x, y, context=None):\n    return True\n{AGG}"),
    ));
    probes.push((
        "missing aggregate",
        "VERIFIER_SPECS = [\n    {\"name\": \"check\", \"description\": \"d\", \"requires\": []},\n]\n\ndef check(x, y, context=None):\n    return True\n".to_string(),
    ));
    probes.push((
        "spec without function",
        format!("VERIFIER_SPECS = [\n    {{\"name\": \"check\", \"description\": \"d\", \"requires\": []}},\n    {{\"name\": \"ghost\", \"description\": \"d\", \"requires\": []}},\n]\n\ndef check(x, y, context=None):\n    return True\n{AGG}"),
    ));
    probes.push((
        "computed specs",
        format!("NAMES = ['check']\nVERIFIER_SPECS = [{{\"name\": n, \"description\": \"d\", \"requires\": []}} for n in NAMES]\n\ndef check(x, y, context=None):\n    return True\n{AGG}"),
    ));
    probes.push((
        "empty specs",
        format!("VERIFIER_SPECS = []\n\ndef check(x, y, context=None):\n    return True\n{AGG}"),
    ));
    probes.push(("syntax error", wrap("", "    return (y ==")));
    probes
}

fn conforming(name: &str, imports: &str, requires: &str, body: &str) -> String {
    format!(
        "{imports}\n\nVERIFIER_SPECS = [\n    {{\"name\": \"{name}\", \"description\": \"{name} holds\", \"requires\": [{requires}]}},\n]\n\ndef {name}(x, y, context=None):\n{body}\n{AGG}"
    )
}

/// Bundles that satisfy the contract.
pub fn conforming_bundles() -> Vec<String> {
    vec![
        conforming("nonempty", "", "", "    return len(y.strip()) > 0"),
        conforming("has_box", "import re", "", "    return re.search(r\"\\\\boxed\\{\", y) is not None"),
        conforming("is_json", "import json", "", "    try:\n        json.loads(y)\n        return True\n    except ValueError:\n        return False"),
        conforming("sqrt_ok", "import math", "\"numbers\"", "    nums = (context or {}).get(\"numbers\") or []\n    return all(math.isfinite(float(n)) for n in nums)"),
        conforming("mean_pos", "import statistics", "", "    vals = [int(t) for t in y.split() if t.isdigit()]\n    return bool(vals) and statistics.mean(vals) > 0"),
        conforming("few_repeats", "from collections import Counter", "", "    counts = Counter(y.split())\n    return max(counts.values(), default=0) < 5"),
        conforming("short", "", "\"normalized_text\"", "    text = (context or {}).get(\"normalized_text\") or y\n    return len(text) < 4000"),
        conforming("balanced", "", "", "    depth = 0\n    for ch in y:\n        if ch == '(':\n            depth += 1\n        elif ch == ')':\n            depth -= 1\n            if depth < 0:\n                return False\n    return depth == 0"),
        conforming("has_answer", "import re\nimport math", "\"final_answer\"", "    fa = (context or {}).get(\"final_answer\")\n    return fa is not None and re.fullmatch(r\"-?\\d+\", str(fa)) is not None"),
        format!(
            "import re\n\nVERIFIER_SPECS = [\n    {{\"name\": \"a\", \"description\": \"d\", \"requires\": []}},\n    {{\"name\": \"b\", \"description\": \"d\", \"requires\": [\"steps\"]}},\n]\n\ndef a(x, y, context=None):\n    return y.endswith('.')\n\ndef b(x, y, context=None):\n    steps = (context or {{}}).get('steps') or []\n    return len(steps) <= 10\n\ndef aggregate(checks, x, y, context=None):\n    return checks['a'] or checks['b']\n"
        ),
    ]
}

use std::sync::Mutex;

use verinduce::llm::{Backend, CompletionRecord, PromptRequest, ProviderError, Role};

type Script = dyn Fn(&PromptRequest) -> Result<String, ProviderError> + Send + Sync;

/// Provider answering from a closure and remembering every request.
pub struct Scripted {
    script: Box<Script>,
    pub log: Mutex<Vec<PromptRequest>>,
}

impl Scripted {
    pub fn new(script: impl Fn(&PromptRequest) -> Result<String, ProviderError> + Send + Sync + 'static) -> Arc<Self> {
        Arc::new(Self {
            script: Box::new(script),
            log: Mutex::new(Vec::new()),
        })
    }

    pub fn calls(&self, role: Role) -> Vec<PromptRequest> {
        self.log.lock().unwrap().iter().filter(|r| r.role == role).cloned().collect()
    }
}

impl Provider for Scripted {
    fn complete(&self, request: &PromptRequest) -> Result<CompletionRecord, ProviderError> {
        self.log.lock().unwrap().push(request.clone());
        Ok(CompletionRecord {
            request: request.clone(),
            completion: (self.script)(request)?,
            latency_ms: 0,
            backend: Backend::Replay,
        })
    }

    fn model_id(&self) -> &str {
        "scripted"
    }
}

/// One-verifier bundle passing when `y` is longer than `n` characters.
pub fn length_bundle(n: u64) -> String {
    format!(
        "VERIFIER_SPECS = [\n    {{\"name\": \"long_enough\", \"description\": \"output is long\", \"requires\": []}},\n]\n\ndef long_enough(x, y, context=None):\n    return len(y) > {n}\n\ndef aggregate(checks, x, y, context=None):\n    return checks['long_enough']\n"
    )
}

pub fn fenced(sources: &[String]) -> String {
    sources.iter().map(|s| format!("```python\n{s}```\n")).collect::<Vec<_>>().join("\n")
}
