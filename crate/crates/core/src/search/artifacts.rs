use std::fmt;
use std::fs;
use std::io;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::bundle::VerifierSpec;
use crate::scoring::NodeStats;

use super::dag::{NodeId, Provenance};
use super::SearchResult;

pub const ARTIFACT_DAG: &str = "dag.json";
pub const ARTIFACT_EVENTS: &str = "events.ndjson";
pub const ARTIFACT_BUNDLE: &str = "best_bundle.py";
pub const ARTIFACT_MANIFEST: &str = "manifest.json";
pub const ARTIFACT_CONFIG: &str = "config.json";

/// Manual verifier taxonomy tag.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Category {
    FormatStructure,
    SurfaceLexical,
    EntityContentPresence,
    InternalConsistency,
    SemanticLogicalProxy,
    SymbolicExecutionNumeric,
    AntiCheatingLeakage,
    #[default]
    Untagged,
}

impl Category {
    pub const ALL: [Category; 8] = [
        Category::FormatStructure,
        Category::SurfaceLexical,
        Category::EntityContentPresence,
        Category::InternalConsistency,
        Category::SemanticLogicalProxy,
        Category::SymbolicExecutionNumeric,
        Category::AntiCheatingLeakage,
        Category::Untagged,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Category::FormatStructure => "format_structure",
            Category::SurfaceLexical => "surface_lexical",
            Category::EntityContentPresence => "entity_content_presence",
            Category::InternalConsistency => "internal_consistency",
            Category::SemanticLogicalProxy => "semantic_logical_proxy",
            Category::SymbolicExecutionNumeric => "symbolic_execution_numeric",
            Category::AntiCheatingLeakage => "anti_cheating_leakage",
            Category::Untagged => "untagged",
        }
    }
}

impl fmt::Display for Category {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Category {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Category::ALL
            .into_iter()
            .find(|c| c.name() == s)
            .ok_or_else(|| format!("unknown category {s:?}"))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestProvenance {
    pub run_id: String,
    pub node_id: NodeId,
    pub origin: Provenance,
}

/// Sidecar describing an exported bundle.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestFile {
    pub digest: String,
    pub size: usize,
    pub specs: Vec<VerifierSpec>,
    pub category: Category,
    pub provenance: ManifestProvenance,
    pub stats: NodeStats,
}

impl ManifestFile {
    pub fn from_result(result: &SearchResult) -> Self {
        let node = result.dag.node(result.best).expect("best node exists");
        Self {
            digest: result.bundle.digest.to_string(),
            size: result.bundle.size(),
            specs: result.bundle.specs.clone(),
            category: Category::Untagged,
            provenance: ManifestProvenance {
                run_id: result.run_id.clone(),
                node_id: result.best,
                origin: node.provenance.clone(),
            },
            stats: result.stats,
        }
    }
}

pub fn read_manifest(path: &Path) -> io::Result<ManifestFile> {
    let text = fs::read_to_string(path)?;
    serde_json::from_str(&text).map_err(|e| io::Error::new(io::ErrorKind::InvalidData, e))
}

fn pretty<T: Serialize>(value: &T) -> String {
    let mut s = serde_json::to_string_pretty(value).expect("artifact serializes");
    s.push('\n');
    s
}

/// Writes the five run artifacts into `dir`, creating it if needed.
pub fn write_artifacts(dir: &Path, result: &SearchResult, resolved_config: &impl Serialize) -> io::Result<()> {
    fs::create_dir_all(dir)?;
    fs::write(dir.join(ARTIFACT_DAG), pretty(&result.dag))?;
    fs::write(dir.join(ARTIFACT_EVENTS), result.events_ndjson())?;
    fs::write(dir.join(ARTIFACT_BUNDLE), &result.bundle.source)?;
    fs::write(dir.join(ARTIFACT_MANIFEST), pretty(&ManifestFile::from_result(result)))?;
    fs::write(dir.join(ARTIFACT_CONFIG), pretty(resolved_config))?;
    Ok(())
}
