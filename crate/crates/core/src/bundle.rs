//! Verifier bundles: extraction from completions, static lint, and digests.
//!
//! The lint here is a token-level screen that runs before any bundle is sent
//! to a worker. It does not parse the verifier language; the worker's
//! syntax-tree validation is authoritative. Forbidden names are matched on
//! word boundaries anywhere in the text, including strings and comments.

use std::fmt;
use std::sync::OnceLock;

use regex::Regex;
use serde::{Deserialize, Serialize};
use sha2::{Digest as _, Sha256};

/// Names a bundle may not mention. The fourteen from the verifier contract
/// plus `__builtins__`.
pub const FORBIDDEN_IDENTIFIERS: [&str; 15] = [
    "compile",
    "exec",
    "eval",
    "open",
    "input",
    "globals",
    "locals",
    "vars",
    "getattr",
    "setattr",
    "delattr",
    "__import__",
    "breakpoint",
    "help",
    "__builtins__",
];

pub const ALLOWED_IMPORTS: [&str; 9] = [
    "math",
    "re",
    "json",
    "statistics",
    "fractions",
    "decimal",
    "itertools",
    "ast",
    "collections",
];

/// Fence info strings accepted as the verifier language.
const LANGUAGE_TAGS: [&str; 3] = ["python", "py", "python3"];

pub const SPECS_CONSTANT: &str = "VERIFIER_SPECS";
pub const AGGREGATE_FUNCTION: &str = "aggregate";

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct VerifierSpec {
    pub name: String,
    #[serde(default)]
    pub description: String,
    #[serde(default)]
    pub requires: Vec<String>,
}

/// Hex SHA-256 of normalized bundle source.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Digest(String);

impl Digest {
    pub fn as_str(&self) -> &str {
        &self.0
    }

    pub fn short(&self) -> &str {
        &self.0[..12.min(self.0.len())]
    }
}

impl fmt::Display for Digest {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VerifierBundle {
    pub source: String,
    pub specs: Vec<VerifierSpec>,
    pub digest: Digest,
}

impl VerifierBundle {
    pub fn new(source: impl Into<String>, specs: Vec<VerifierSpec>) -> Self {
        let source = source.into();
        let digest = bundle_digest(&source);
        Self { source, specs, digest }
    }

    /// Number of verifier functions, |V|.
    pub fn size(&self) -> usize {
        self.specs.len()
    }

    pub fn verifier_names(&self) -> impl Iterator<Item = &str> {
        self.specs.iter().map(|s| s.name.as_str())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FindingKind {
    ForbiddenIdentifier,
    DisallowedImport,
    MissingSpecs,
    MissingAggregate,
    MissingFunction,
    NoCodeBlock,
    /// Only produced by worker validation, never by [`lint_bundle`].
    SyntaxError,
}

impl fmt::Display for FindingKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            FindingKind::ForbiddenIdentifier => "forbidden_identifier",
            FindingKind::DisallowedImport => "disallowed_import",
            FindingKind::MissingSpecs => "missing_specs",
            FindingKind::MissingAggregate => "missing_aggregate",
            FindingKind::MissingFunction => "missing_function",
            FindingKind::NoCodeBlock => "no_code_block",
            FindingKind::SyntaxError => "syntax_error",
        };
        f.write_str(s)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LintFinding {
    pub kind: FindingKind,
    pub detail: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub line: Option<u32>,
}

impl LintFinding {
    fn new(kind: FindingKind, detail: impl Into<String>, line: Option<usize>) -> Self {
        Self {
            kind,
            detail: detail.into(),
            line: line.map(|l| l as u32),
        }
    }
}

impl fmt::Display for LintFinding {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.line {
            Some(line) => write!(f, "{}: {} (line {line})", self.kind, self.detail),
            None => write!(f, "{}: {}", self.kind, self.detail),
        }
    }
}

/// Returns the body of every fenced block tagged with the verifier language,
/// in order. Untagged and foreign-tagged blocks are skipped; a block still
/// open at end of text is dropped.
pub fn parse_bundles(completion: &str) -> Vec<String> {
    let mut blocks = Vec::new();
    let mut current: Option<(bool, Vec<&str>)> = None;
    for line in completion.lines() {
        let trimmed = line.trim();
        match current.as_mut() {
            None => {
                if let Some(info) = trimmed.strip_prefix("```") {
                    let tag = info.trim().to_ascii_lowercase();
                    let wanted = LANGUAGE_TAGS.contains(&tag.as_str());
                    current = Some((wanted, Vec::new()));
                }
            }
            Some((wanted, body)) => {
                if trimmed == "```" {
                    if *wanted {
                        let mut text = body.join("\n");
                        text.push('\n');
                        blocks.push(text);
                    }
                    current = None;
                } else {
                    body.push(line);
                }
            }
        }
    }
    blocks
}

fn regexes() -> &'static LintRegexes {
    static CELL: OnceLock<LintRegexes> = OnceLock::new();
    CELL.get_or_init(LintRegexes::new)
}

struct LintRegexes {
    forbidden: Regex,
    dunder_attr: Regex,
    import: Regex,
    from_import: Regex,
    specs_assign: Regex,
    aggregate_def: Regex,
    spec_name: Regex,
}

impl LintRegexes {
    fn new() -> Self {
        let alternation = FORBIDDEN_IDENTIFIERS
            .iter()
            .map(|s| regex::escape(s))
            .collect::<Vec<_>>()
            .join("|");
        Self {
            forbidden: Regex::new(&format!(r"(?:^|[^A-Za-z0-9_])({alternation})(?:$|[^A-Za-z0-9_])")).unwrap(),
            dunder_attr: Regex::new(r"\.\s*(__[A-Za-z0-9_]+__)").unwrap(),
            import: Regex::new(r"^\s*import\s+(.+)$").unwrap(),
            from_import: Regex::new(r"^\s*from\s+(\S+)\s+import\b").unwrap(),
            specs_assign: Regex::new(r"(?m)^VERIFIER_SPECS\s*(?::[^=\n]*)?=").unwrap(),
            aggregate_def: Regex::new(r"(?m)^def\s+aggregate\s*\(").unwrap(),
            spec_name: Regex::new(r#"["']name["']\s*:\s*["']([^"'\n]*)["']"#).unwrap(),
        }
    }
}

/// Token-level contract screen. An empty result means lint-clean.
pub fn lint_bundle(source: &str) -> Vec<LintFinding> {
    let re = regexes();
    let mut findings = Vec::new();

    for (idx, line) in source.lines().enumerate() {
        let lineno = Some(idx + 1);
        // overlapping matches: the boundary char is consumed, so rescan from each hit
        let mut start = 0;
        while let Some(caps) = re.forbidden.captures_at(line, start) {
            let m = caps.get(1).unwrap();
            findings.push(LintFinding::new(FindingKind::ForbiddenIdentifier, m.as_str(), lineno));
            start = m.end();
        }
        for caps in re.dunder_attr.captures_iter(line) {
            let name = caps.get(1).unwrap().as_str();
            findings.push(LintFinding::new(
                FindingKind::ForbiddenIdentifier,
                format!("dunder attribute {name}"),
                lineno,
            ));
        }
        for stmt in line.split(';') {
            for module in imported_modules(re, stmt) {
                let top = module.split('.').next().unwrap_or("");
                if module.starts_with('.') || !ALLOWED_IMPORTS.contains(&top) {
                    findings.push(LintFinding::new(FindingKind::DisallowedImport, module, lineno));
                }
            }
        }
    }

    let specs_match = re.specs_assign.find(source);
    if specs_match.is_none() {
        findings.push(LintFinding::new(
            FindingKind::MissingSpecs,
            "no VERIFIER_SPECS assignment",
            None,
        ));
    }
    if !re.aggregate_def.is_match(source) {
        findings.push(LintFinding::new(
            FindingKind::MissingAggregate,
            "no top-level def aggregate(...)",
            None,
        ));
    }
    if let Some(m) = specs_match {
        let region = specs_region(&source[m.start()..]);
        let base_line = source[..m.start()].matches('\n').count() + 1;
        let mut any = false;
        for caps in re.spec_name.captures_iter(region) {
            any = true;
            let name = caps.get(1).unwrap().as_str();
            let line = base_line + region[..caps.get(0).unwrap().start()].matches('\n').count();
            if !is_identifier(name) || !defines_function(source, name) {
                findings.push(LintFinding::new(
                    FindingKind::MissingFunction,
                    format!("no top-level def for verifier {name:?}"),
                    Some(line),
                ));
            }
        }
        if !any {
            findings.push(LintFinding::new(
                FindingKind::MissingSpecs,
                "VERIFIER_SPECS declares no verifier names",
                Some(base_line),
            ));
        }
    }
    findings
}

fn imported_modules<'a>(re: &LintRegexes, stmt: &'a str) -> Vec<&'a str> {
    if let Some(caps) = re.from_import.captures(stmt) {
        return vec![caps.get(1).unwrap().as_str()];
    }
    if let Some(caps) = re.import.captures(stmt) {
        return caps
            .get(1)
            .unwrap()
            .as_str()
            .split(',')
            .filter_map(|part| part.split_whitespace().next())
            .map(|m| m.trim_end_matches(|c: char| !(c.is_alphanumeric() || c == '_' || c == '.')))
            .filter(|m| !m.is_empty())
            .collect();
    }
    Vec::new()
}

/// Text of the specs literal: from the assignment to the first line that
/// closes it at column zero.
fn specs_region(from_assignment: &str) -> &str {
    let mut offset = 0;
    for (i, line) in from_assignment.split_inclusive('\n').enumerate() {
        offset += line.len();
        if i > 0 && line.starts_with(']') {
            break;
        }
        if i == 0 && line.trim_end().ends_with(']') {
            break;
        }
    }
    &from_assignment[..offset]
}

fn defines_function(source: &str, name: &str) -> bool {
    let prefix = format!("def {name}");
    source.lines().any(|l| {
        l.strip_prefix(&prefix)
            .map(|rest| rest.trim_start().starts_with('('))
            .unwrap_or(false)
    })
}

pub fn is_identifier(name: &str) -> bool {
    let mut chars = name.chars();
    match chars.next() {
        Some(c) if c == '_' || c.is_ascii_alphabetic() => {}
        _ => return false,
    }
    chars.all(|c| c == '_' || c.is_ascii_alphanumeric())
}

/// Newline normalization applied before hashing: CRLF becomes LF and
/// trailing whitespace is stripped from every line.
pub fn normalize_source(source: &str) -> String {
    source
        .replace("\r\n", "\n")
        .split('\n')
        .map(str::trim_end)
        .collect::<Vec<_>>()
        .join("\n")
}

pub fn bundle_digest(source: &str) -> Digest {
    let normalized = normalize_source(source);
    Digest(hex::encode(Sha256::digest(normalized.as_bytes())))
}

#[cfg(test)]
mod tests {
    use super::*;

    const MINIMAL: &str = r#"VERIFIER_SPECS = [
    {"name": "nonempty", "description": "output is non-empty", "requires": []},
]

def nonempty(x, y, context=None):
    return len(y) > 0

def aggregate(checks, x, y, context=None):
    return all(checks.values())
"#;

    fn kinds(findings: &[LintFinding]) -> Vec<FindingKind> {
        findings.iter().map(|f| f.kind).collect()
    }

    #[test]
    fn two_blocks_in_order() {
        let text = "intro\n```python\nA = 1\n```\nmiddle\n```python\nB = 2\n```\n";
        assert_eq!(parse_bundles(text), vec!["A = 1\n", "B = 2\n"]);
    }

    #[test]
    fn no_blocks() {
        assert!(parse_bundles("just prose, no code").is_empty());
    }

    #[test]
    fn other_tags_and_untagged_ignored() {
        let text = "```json\n{\"a\": 1}\n```\n```\nplain\n```\n```py\nC = 3\n```\n";
        assert_eq!(parse_bundles(text), vec!["C = 3\n"]);
    }

    #[test]
    fn unterminated_block_dropped() {
        let text = "```python\nA = 1\n```\n```python\nB = 2\n";
        assert_eq!(parse_bundles(text), vec!["A = 1\n"]);
    }

    #[test]
    fn minimal_bundle_is_lint_clean() {
        assert_eq!(lint_bundle(MINIMAL), vec![]);
    }

    #[test]
    fn eval_is_forbidden() {
        let src = MINIMAL.replace("len(y) > 0", "eval(y)");
        let findings = lint_bundle(&src);
        assert_eq!(kinds(&findings), vec![FindingKind::ForbiddenIdentifier]);
        assert_eq!(findings[0].detail, "eval");
        assert_eq!(findings[0].line, Some(6));
    }

    #[test]
    fn word_boundaries_respected() {
        let src = MINIMAL.replace("len(y) > 0", "len('evaluate opener') > 0");
        assert_eq!(lint_bundle(&src), vec![]);
    }

    #[test]
    fn numpy_import_disallowed() {
        let src = format!("import numpy\n{MINIMAL}");
        let findings = lint_bundle(&src);
        assert_eq!(kinds(&findings), vec![FindingKind::DisallowedImport]);
        assert_eq!(findings[0].detail, "numpy");
    }

    #[test]
    fn whitelisted_imports_allowed() {
        let src = format!("import re, math as m\nfrom collections import Counter\nfrom os.path import join\n{MINIMAL}");
        let findings = lint_bundle(&src);
        assert_eq!(kinds(&findings), vec![FindingKind::DisallowedImport]);
        assert_eq!(findings[0].detail, "os.path");
    }

    #[test]
    fn nested_import_in_body() {
        let src = MINIMAL.replace("    return len(y) > 0", "    import subprocess\n    return len(y) > 0");
        assert_eq!(kinds(&lint_bundle(&src)), vec![FindingKind::DisallowedImport]);
    }

    #[test]
    fn dunder_attribute_flagged() {
        let src = MINIMAL.replace("len(y) > 0", "y.__class__ is str");
        assert_eq!(kinds(&lint_bundle(&src)), vec![FindingKind::ForbiddenIdentifier]);
    }

    #[test]
    fn missing_pieces() {
        let no_agg = MINIMAL.replace("def aggregate", "def combine");
        assert_eq!(kinds(&lint_bundle(&no_agg)), vec![FindingKind::MissingAggregate]);
        let no_specs = MINIMAL.replace("VERIFIER_SPECS = [", "SPECS = [");
        assert_eq!(kinds(&lint_bundle(&no_specs)), vec![FindingKind::MissingSpecs]);
        let mismatch = MINIMAL.replace("def nonempty(", "def non_empty(");
        assert_eq!(kinds(&lint_bundle(&mismatch)), vec![FindingKind::MissingFunction]);
    }

    #[test]
    fn digest_properties() {
        assert_eq!(bundle_digest(MINIMAL), bundle_digest(MINIMAL));
        assert_eq!(bundle_digest(MINIMAL), bundle_digest(&MINIMAL.replace('\n', "\r\n")));
        assert_eq!(bundle_digest("a = 1\n"), bundle_digest("a = 1   \n"));
        assert_ne!(bundle_digest("s = 'ab'\n"), bundle_digest("s = 'ac'\n"));
        assert_eq!(bundle_digest("").as_str().len(), 64);
    }

    #[test]
    fn bundle_size_matches_specs() {
        let specs = vec![
            VerifierSpec { name: "a".into(), description: String::new(), requires: vec![] },
            VerifierSpec { name: "b".into(), description: String::new(), requires: vec![] },
        ];
        let b = VerifierBundle::new("x", specs);
        assert_eq!(b.size(), 2);
        assert_eq!(b.verifier_names().collect::<Vec<_>>(), ["a", "b"]);
    }
}
