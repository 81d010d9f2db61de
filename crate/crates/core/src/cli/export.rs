use std::fs;
use std::path::{Path, PathBuf};

use crate::bundle::bundle_digest;
use crate::search::{read_manifest, Category, ARTIFACT_BUNDLE, ARTIFACT_MANIFEST};

use super::CliError;

#[derive(Debug, Clone, PartialEq)]
pub struct Exported {
    pub bundle: PathBuf,
    pub manifest: PathBuf,
    pub digest: String,
}

/// Copies the best bundle and its manifest from a run directory, optionally
/// retagging the manifest category.
pub fn export(run_dir: &Path, dest: &Path, category: Option<Category>) -> Result<Exported, CliError> {
    let bundle_src = run_dir.join(ARTIFACT_BUNDLE);
    let manifest_src = run_dir.join(ARTIFACT_MANIFEST);
    for p in [&bundle_src, &manifest_src] {
        if !p.is_file() {
            return Err(CliError::MissingArtifact(p.display().to_string()));
        }
    }
    let source = fs::read_to_string(&bundle_src)?;
    let mut manifest = read_manifest(&manifest_src)?;
    let digest = bundle_digest(&source);
    if digest.as_str() != manifest.digest {
        return Err(CliError::Usage(format!(
            "{} does not match its manifest digest",
            bundle_src.display()
        )));
    }
    if let Some(c) = category {
        manifest.category = c;
    }
    fs::create_dir_all(dest)?;
    let bundle = dest.join(ARTIFACT_BUNDLE);
    let manifest_path = dest.join(ARTIFACT_MANIFEST);
    fs::write(&bundle, &source)?;
    fs::write(&manifest_path, serde_json::to_string_pretty(&manifest).expect("manifest serializes") + "\n")?;
    Ok(Exported {
        bundle,
        manifest: manifest_path,
        digest: manifest.digest,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_run_dir_is_missing_artifact() {
        let dir = tempfile::tempdir().unwrap();
        let err = export(dir.path(), &dir.path().join("out"), None).unwrap_err();
        assert!(matches!(err, CliError::MissingArtifact(_)));
    }
}
