//! Prompt templates, stored verbatim under `templates/`.
//!
//! Placeholders are `{name}` where `name` is an identifier that may contain
//! `.` and `-`. Substitution is single-pass, so braces inside bound values
//! (verifier source, JSON) are never re-expanded. A `{` that does not start a
//! well-formed placeholder is literal text.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub const INSTRUCTION_PLACEHOLDER: &str = "VERIFIER-INSTRUCTION";

#[derive(Debug, Error, PartialEq, Eq)]
pub enum TemplateError {
    #[error("missing binding for placeholder {0:?}")]
    MissingBinding(String),
    #[error("unknown template {0:?}")]
    UnknownTemplate(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TemplateId {
    VerifierInstruction,
    Seed,
    Critic,
    Modifier,
    Context,
    ToolSystem,
}

impl TemplateId {
    pub const ALL: [TemplateId; 6] = [
        TemplateId::VerifierInstruction,
        TemplateId::Seed,
        TemplateId::Critic,
        TemplateId::Modifier,
        TemplateId::Context,
        TemplateId::ToolSystem,
    ];

    pub fn name(self) -> &'static str {
        match self {
            TemplateId::VerifierInstruction => "verifier_instruction",
            TemplateId::Seed => "seed",
            TemplateId::Critic => "critic",
            TemplateId::Modifier => "modifier",
            TemplateId::Context => "context",
            TemplateId::ToolSystem => "tool_system",
        }
    }

    /// Template text with trailing whitespace at the very end removed.
    pub fn text(self) -> &'static str {
        let raw = match self {
            TemplateId::VerifierInstruction => include_str!("../../templates/verifier_instruction.txt"),
            TemplateId::Seed => include_str!("../../templates/seed.txt"),
            TemplateId::Critic => include_str!("../../templates/critic.txt"),
            TemplateId::Modifier => include_str!("../../templates/modifier.txt"),
            TemplateId::Context => include_str!("../../templates/context.txt"),
            TemplateId::ToolSystem => include_str!("../../templates/tool_system.txt"),
        };
        raw.trim_end()
    }

    pub fn placeholders(self) -> Vec<&'static str> {
        let mut out = Vec::new();
        for seg in segments(self.text()) {
            if let Segment::Placeholder(name) = seg {
                if !out.contains(&name) {
                    out.push(name);
                }
            }
        }
        out
    }
}

impl fmt::Display for TemplateId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for TemplateId {
    type Err = TemplateError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        TemplateId::ALL
            .into_iter()
            .find(|t| t.name() == s)
            .ok_or_else(|| TemplateError::UnknownTemplate(s.to_string()))
    }
}

enum Segment<'a> {
    Text(&'a str),
    Placeholder(&'a str),
}

fn is_name_char(c: char) -> bool {
    c.is_ascii_alphanumeric() || matches!(c, '_' | '.' | '-')
}

fn segments(text: &str) -> Vec<Segment<'_>> {
    let mut out = Vec::new();
    let mut literal_start = 0;
    let mut i = 0;
    let bytes = text.as_bytes();
    while i < bytes.len() {
        if bytes[i] == b'{' {
            let rest = &text[i + 1..];
            if let Some(close) = rest.find('}') {
                let name = &rest[..close];
                let first_ok = name
                    .chars()
                    .next()
                    .map(|c| c.is_ascii_alphabetic() || c == '_')
                    .unwrap_or(false);
                if first_ok && name.chars().all(is_name_char) {
                    if literal_start < i {
                        out.push(Segment::Text(&text[literal_start..i]));
                    }
                    out.push(Segment::Placeholder(name));
                    i += close + 2;
                    literal_start = i;
                    continue;
                }
            }
        }
        i += 1;
    }
    if literal_start < text.len() {
        out.push(Segment::Text(&text[literal_start..]));
    }
    out
}

/// Substitutes `bindings` into the template. `VERIFIER-INSTRUCTION` is bound
/// to the verifier instruction template unless the caller overrides it.
pub fn render_prompt(id: TemplateId, bindings: &BTreeMap<String, String>) -> Result<String, TemplateError> {
    let mut out = String::with_capacity(id.text().len() + 256);
    for seg in segments(id.text()) {
        match seg {
            Segment::Text(t) => out.push_str(t),
            Segment::Placeholder(name) => match bindings.get(name) {
                Some(v) => out.push_str(v),
                None if name == INSTRUCTION_PLACEHOLDER => {
                    out.push_str(TemplateId::VerifierInstruction.text())
                }
                None => return Err(TemplateError::MissingBinding(name.to_string())),
            },
        }
    }
    Ok(out)
}

/// Convenience builder for binding maps.
#[derive(Debug, Default, Clone)]
pub struct Bindings(BTreeMap<String, String>);

impl Bindings {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn set(mut self, name: &str, value: impl ToString) -> Self {
        self.0.insert(name.to_string(), value.to_string());
        self
    }

    pub fn render(&self, id: TemplateId) -> Result<String, TemplateError> {
        render_prompt(id, &self.0)
    }

    pub fn as_map(&self) -> &BTreeMap<String, String> {
        &self.0
    }
}
