//! Labeled development sets.
//!
//! A dataset file is UTF-8 NDJSON with one object per line carrying the keys
//! `id`, `x`, `y` and `label`. Unknown keys are kept so a load/dump cycle is
//! field-exact, but nothing downstream reads them.

use std::collections::HashSet;
use std::fmt;
use std::path::Path;

use serde_json::{Map, Value};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum DatasetError {
    #[error("io error reading {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error("line {line}: duplicate id {id:?}")]
    DuplicateId { line: usize, id: String },
    #[error("line {line}: label {value} is not one of 0, 1, true, false")]
    BadLabel { line: usize, value: String },
    #[error("dataset has {0} examples, at least 2 are required")]
    TooFewExamples(usize),
}

/// Binary objective label.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Label {
    Negative = 0,
    Positive = 1,
}

impl Label {
    pub fn from_bit(bit: u8) -> Option<Self> {
        match bit {
            0 => Some(Label::Negative),
            1 => Some(Label::Positive),
            _ => None,
        }
    }

    pub fn bit(self) -> u8 {
        self as u8
    }

    pub fn is_positive(self) -> bool {
        self == Label::Positive
    }

    fn coerce(value: &Value) -> Option<Self> {
        match value {
            Value::Bool(true) => Some(Label::Positive),
            Value::Bool(false) => Some(Label::Negative),
            Value::Number(n) => match n.as_u64() {
                Some(0) => Some(Label::Negative),
                Some(1) => Some(Label::Positive),
                _ => None,
            },
            _ => None,
        }
    }
}

impl serde::Serialize for Label {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_u8(self.bit())
    }
}

impl<'de> serde::Deserialize<'de> for Label {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let bit = u8::deserialize(d)?;
        Label::from_bit(bit).ok_or_else(|| serde::de::Error::custom(format!("label {bit} is not 0 or 1")))
    }
}

impl fmt::Display for Label {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.bit())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DevExample {
    pub id: String,
    pub x: String,
    pub y: String,
    pub label: Label,
    /// Keys other than id/x/y/label, in file order.
    pub extra: Map<String, Value>,
}

impl DevExample {
    pub fn new(id: impl Into<String>, x: impl Into<String>, y: impl Into<String>, label: Label) -> Self {
        Self {
            id: id.into(),
            x: x.into(),
            y: y.into(),
            label,
            extra: Map::new(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DevSet {
    pub task_description: String,
    pub examples: Vec<DevExample>,
    pub source_path: String,
}

/// Label composition of a set.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LabelBalance {
    Balanced,
    AllPositive,
    AllNegative,
}

impl DevSet {
    pub fn new(task_description: impl Into<String>, examples: Vec<DevExample>) -> Self {
        Self {
            task_description: task_description.into(),
            examples,
            source_path: String::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.examples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.examples.is_empty()
    }

    pub fn labels(&self) -> Vec<Label> {
        self.examples.iter().map(|e| e.label).collect()
    }

    pub fn get(&self, id: &str) -> Option<&DevExample> {
        self.examples.iter().find(|e| e.id == id)
    }
}

pub fn load_dev_set(path: impl AsRef<Path>, task_description: &str) -> Result<DevSet, DatasetError> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|source| DatasetError::Io {
        path: path.display().to_string(),
        source,
    })?;
    let mut set = parse_dev_set(&text, task_description)?;
    set.source_path = path.display().to_string();
    Ok(set)
}

/// Parses NDJSON text into a set. Blank lines are skipped; line numbers in
/// errors are 1-based physical lines.
pub fn parse_dev_set(text: &str, task_description: &str) -> Result<DevSet, DatasetError> {
    let mut examples = Vec::new();
    let mut seen = HashSet::new();
    for (idx, raw) in text.lines().enumerate() {
        let line = idx + 1;
        if raw.trim().is_empty() {
            continue;
        }
        let example = parse_line(raw, line)?;
        if !seen.insert(example.id.clone()) {
            return Err(DatasetError::DuplicateId { line, id: example.id });
        }
        examples.push(example);
    }
    if examples.len() < 2 {
        return Err(DatasetError::TooFewExamples(examples.len()));
    }
    Ok(DevSet {
        task_description: task_description.to_string(),
        examples,
        source_path: String::new(),
    })
}

fn parse_line(raw: &str, line: usize) -> Result<DevExample, DatasetError> {
    let parse_err = |message: String| DatasetError::Parse { line, message };
    let value: Value = serde_json::from_str(raw).map_err(|e| parse_err(e.to_string()))?;
    let Value::Object(mut obj) = value else {
        return Err(parse_err("expected a JSON object".into()));
    };
    let mut take_str = |key: &str| -> Result<String, DatasetError> {
        match obj.shift_remove(key) {
            Some(Value::String(s)) => Ok(s),
            Some(_) => Err(parse_err(format!("key {key:?} must be a string"))),
            None => Err(parse_err(format!("missing key {key:?}"))),
        }
    };
    let id = take_str("id")?;
    let x = take_str("x")?;
    let y = take_str("y")?;
    if id.is_empty() {
        return Err(parse_err("id must be non-empty".into()));
    }
    let label_value = obj
        .shift_remove("label")
        .ok_or_else(|| parse_err("missing key \"label\"".into()))?;
    let label = Label::coerce(&label_value).ok_or_else(|| DatasetError::BadLabel {
        line,
        value: label_value.to_string(),
    })?;
    Ok(DevExample {
        id,
        x,
        y,
        label,
        extra: obj,
    })
}

/// Serializes a set back to NDJSON: `id`, `x`, `y`, `label` first, then any
/// preserved extra keys.
pub fn dump_dev_set(set: &DevSet) -> String {
    let mut out = String::new();
    for e in &set.examples {
        let mut obj = Map::new();
        obj.insert("id".into(), Value::String(e.id.clone()));
        obj.insert("x".into(), Value::String(e.x.clone()));
        obj.insert("y".into(), Value::String(e.y.clone()));
        obj.insert("label".into(), Value::from(e.label.bit()));
        for (k, v) in &e.extra {
            obj.insert(k.clone(), v.clone());
        }
        out.push_str(&Value::Object(obj).to_string());
        out.push('\n');
    }
    out
}

pub fn single_label_check(set: &DevSet) -> LabelBalance {
    let positives = set.examples.iter().filter(|e| e.label.is_positive()).count();
    if positives == set.examples.len() {
        LabelBalance::AllPositive
    } else if positives == 0 {
        LabelBalance::AllNegative
    } else {
        LabelBalance::Balanced
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn set_with(labels: &[u8]) -> DevSet {
        let examples = labels
            .iter()
            .enumerate()
            .map(|(i, &b)| DevExample::new(format!("e{i}"), "q", "r", Label::from_bit(b).unwrap()))
            .collect();
        DevSet::new("t", examples)
    }

    #[test]
    fn loads_in_file_order() {
        let text = "{\"id\":\"b\",\"x\":\"q1\",\"y\":\"r1\",\"label\":1}\n{\"id\":\"a\",\"x\":\"q2\",\"y\":\"r2\",\"label\":0}\n";
        let set = parse_dev_set(text, "task").unwrap();
        let ids: Vec<_> = set.examples.iter().map(|e| e.id.as_str()).collect();
        assert_eq!(ids, ["b", "a"]);
        assert_eq!(set.examples[0].label, Label::Positive);
        assert_eq!(set.task_description, "task");
    }

    #[test]
    fn label_two_is_rejected_with_line_number() {
        let text = "{\"id\":\"a\",\"x\":\"q\",\"y\":\"r\",\"label\":2}\n{\"id\":\"b\",\"x\":\"q\",\"y\":\"r\",\"label\":0}\n";
        match parse_dev_set(text, "") {
            Err(DatasetError::BadLabel { line, .. }) => assert_eq!(line, 1),
            other => panic!("expected BadLabel, got {other:?}"),
        }
    }

    #[test]
    fn boolean_labels_are_coerced() {
        let text = "{\"id\":\"a\",\"x\":\"\",\"y\":\"\",\"label\":true}\n{\"id\":\"b\",\"x\":\"\",\"y\":\"\",\"label\":false}\n";
        let set = parse_dev_set(text, "").unwrap();
        assert_eq!(set.labels(), vec![Label::Positive, Label::Negative]);
    }

    #[test]
    fn string_and_float_labels_are_rejected() {
        for bad in ["\"1\"", "1.0", "null", "-1"] {
            let text = format!(
                "{{\"id\":\"a\",\"x\":\"\",\"y\":\"\",\"label\":{bad}}}\n{{\"id\":\"b\",\"x\":\"\",\"y\":\"\",\"label\":0}}\n"
            );
            assert!(matches!(parse_dev_set(&text, ""), Err(DatasetError::BadLabel { line: 1, .. })), "{bad}");
        }
    }

    #[test]
    fn duplicate_ids_rejected() {
        let text = "{\"id\":\"a\",\"x\":\"\",\"y\":\"\",\"label\":1}\n{\"id\":\"a\",\"x\":\"\",\"y\":\"\",\"label\":0}\n";
        assert!(matches!(
            parse_dev_set(text, ""),
            Err(DatasetError::DuplicateId { line: 2, .. })
        ));
    }

    #[test]
    fn malformed_line_reports_line() {
        let text = "{\"id\":\"a\",\"x\":\"\",\"y\":\"\",\"label\":1}\n\n{not json\n";
        assert!(matches!(parse_dev_set(text, ""), Err(DatasetError::Parse { line: 3, .. })));
    }

    #[test]
    fn missing_key_and_empty_id() {
        let text = "{\"id\":\"a\",\"y\":\"\",\"label\":1}\n";
        assert!(matches!(parse_dev_set(text, ""), Err(DatasetError::Parse { line: 1, .. })));
        let text = "{\"id\":\"\",\"x\":\"\",\"y\":\"\",\"label\":1}\n";
        assert!(matches!(parse_dev_set(text, ""), Err(DatasetError::Parse { line: 1, .. })));
    }

    #[test]
    fn too_few_examples() {
        let text = "{\"id\":\"a\",\"x\":\"\",\"y\":\"\",\"label\":1}\n";
        assert!(matches!(parse_dev_set(text, ""), Err(DatasetError::TooFewExamples(1))));
    }

    #[test]
    fn unknown_keys_survive_dump() {
        let text = "{\"id\":\"a\",\"x\":\"q\",\"y\":\"r\",\"label\":1,\"source\":\"gpt\"}\n{\"id\":\"b\",\"x\":\"q\",\"y\":\"r\",\"label\":0}\n";
        let set = parse_dev_set(text, "").unwrap();
        assert_eq!(set.examples[0].extra.get("source"), Some(&Value::String("gpt".into())));
        assert_eq!(dump_dev_set(&set), text);
    }

    #[test]
    fn label_composition() {
        assert_eq!(single_label_check(&set_with(&[1, 0, 1])), LabelBalance::Balanced);
        assert_eq!(single_label_check(&set_with(&[1, 1])), LabelBalance::AllPositive);
        assert_eq!(single_label_check(&set_with(&[0, 0, 0])), LabelBalance::AllNegative);
    }
}
