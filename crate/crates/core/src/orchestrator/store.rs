use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::sync::Mutex;

use serde::{Deserialize, Serialize};

use super::plan::hash_bytes;
use super::OrchestratorError;

pub const MANIFEST_FILE: &str = "manifest.json";

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct ManifestEntry {
    /// Hash of the inputs that produced the artifacts.
    pub input_hash: String,
    /// Store-relative path to SHA-256 of the file contents.
    pub artifacts: BTreeMap<String, String>,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub entries: BTreeMap<String, ManifestEntry>,
}

/// On-disk results keyed by stage, plus a manifest of content hashes.
///
/// A stage is complete when its manifest entry has the expected input hash
/// and every listed artifact still hashes to the recorded value.
#[derive(Debug)]
pub struct RunStore {
    root: PathBuf,
    manifest: Mutex<Manifest>,
}

impl RunStore {
    pub fn open(root: &Path) -> Result<Self, OrchestratorError> {
        fs::create_dir_all(root)?;
        let path = root.join(MANIFEST_FILE);
        let manifest = if path.exists() {
            serde_json::from_str(&fs::read_to_string(&path)?)?
        } else {
            Manifest::default()
        };
        Ok(RunStore {
            root: root.to_path_buf(),
            manifest: Mutex::new(manifest),
        })
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn path(&self, rel: &str) -> PathBuf {
        self.root.join(rel)
    }

    pub fn manifest(&self) -> Manifest {
        self.manifest.lock().expect("manifest lock").clone()
    }

    pub fn entry(&self, key: &str) -> Option<ManifestEntry> {
        self.manifest.lock().expect("manifest lock").entries.get(key).cloned()
    }

    pub fn is_complete(&self, key: &str, input_hash: &str) -> bool {
        let Some(entry) = self.entry(key) else {
            return false;
        };
        entry.input_hash == input_hash
            && entry
                .artifacts
                .iter()
                .all(|(rel, h)| fs::read(self.path(rel)).map(|b| hash_bytes(&b) == *h).unwrap_or(false))
    }

    /// Writes `contents` under `rel` only if the bytes differ from what is on disk.
    pub fn write(&self, rel: &str, contents: &[u8]) -> Result<(), OrchestratorError> {
        let path = self.path(rel);
        if fs::read(&path).map(|b| b == contents).unwrap_or(false) {
            return Ok(());
        }
        if let Some(parent) = path.parent() {
            fs::create_dir_all(parent)?;
        }
        fs::write(path, contents)?;
        Ok(())
    }

    pub fn read_string(&self, rel: &str) -> Result<String, OrchestratorError> {
        Ok(fs::read_to_string(self.path(rel))?)
    }

    /// Records a completed stage and persists the manifest.
    pub fn record(&self, key: &str, input_hash: &str, artifacts: &[String]) -> Result<(), OrchestratorError> {
        let mut hashes = BTreeMap::new();
        for rel in artifacts {
            hashes.insert(rel.clone(), hash_bytes(&fs::read(self.path(rel))?));
        }
        let mut manifest = self.manifest.lock().expect("manifest lock");
        let entry = ManifestEntry {
            input_hash: input_hash.to_string(),
            artifacts: hashes,
        };
        if manifest.entries.get(key) == Some(&entry) {
            return Ok(());
        }
        manifest.entries.insert(key.to_string(), entry);
        let text = serde_json::to_string_pretty(&*manifest)? + "\n";
        let tmp = self.root.join(format!("{MANIFEST_FILE}.tmp"));
        fs::write(&tmp, text)?;
        fs::rename(tmp, self.root.join(MANIFEST_FILE))?;
        Ok(())
    }
}
