//! Content-addressed stage caches.
//!
//! Each stage writes into `<cache root>/<stage>-<key>/`, where the key is a
//! SHA-256 over the stage name, the stage's own settings and the digests of
//! its inputs. A `manifest.json` written last marks the directory complete.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

pub const MANIFEST: &str = "manifest.json";

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

pub fn file_digest(path: &Path) -> Result<String> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    Ok(sha256_hex(&bytes))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageManifest {
    pub stage: String,
    pub key: String,
    pub config_hash: String,
    pub settings: serde_json::Value,
    pub inputs: BTreeMap<String, String>,
    pub outputs: BTreeMap<String, String>,
}

impl StageManifest {
    /// Digest standing for all outputs together; downstream stages key on it.
    pub fn output_digest(&self) -> String {
        let joined: Vec<String> = self.outputs.iter().map(|(k, v)| format!("{k}={v}")).collect();
        sha256_hex(joined.join("\n").as_bytes())
    }
}

pub fn stage_key(stage: &str, settings: &serde_json::Value, inputs: &BTreeMap<String, String>) -> String {
    let doc = serde_json::json!({ "stage": stage, "settings": settings, "inputs": inputs });
    sha256_hex(doc.to_string().as_bytes())
}

/// A stage's cache directory.
#[derive(Debug, Clone)]
pub struct StageDir {
    pub stage: String,
    pub key: String,
    pub path: PathBuf,
}

impl StageDir {
    pub fn new(root: &Path, stage: &str, key: &str) -> Self {
        StageDir {
            stage: stage.to_string(),
            key: key.to_string(),
            path: root.join(format!("{stage}-{}", &key[..16])),
        }
    }

    pub fn file(&self, name: &str) -> PathBuf {
        self.path.join(name)
    }

    /// The manifest if the directory is complete and its outputs intact.
    pub fn load(&self) -> Option<StageManifest> {
        let bytes = fs::read(self.file(MANIFEST)).ok()?;
        let m: StageManifest = serde_json::from_slice(&bytes).ok()?;
        if m.key != self.key {
            return None;
        }
        for (name, digest) in &m.outputs {
            if file_digest(&self.file(name)).ok()? != *digest {
                return None;
            }
        }
        Some(m)
    }

    pub fn prepare(&self) -> Result<()> {
        let _ = fs::remove_file(self.file(MANIFEST));
        fs::create_dir_all(&self.path).map_err(|e| Error::io(&self.path, e))
    }

    pub fn write(&self, name: &str, bytes: &[u8]) -> Result<()> {
        let p = self.file(name);
        fs::write(&p, bytes).map_err(|e| Error::io(p, e))
    }

    pub fn read(&self, name: &str) -> Result<Vec<u8>> {
        let p = self.file(name);
        fs::read(&p).map_err(|e| Error::io(p, e))
    }

    /// Records the manifest over every file written so far.
    pub fn finish(
        &self,
        config_hash: &str,
        settings: serde_json::Value,
        inputs: BTreeMap<String, String>,
    ) -> Result<StageManifest> {
        let mut outputs = BTreeMap::new();
        let entries = fs::read_dir(&self.path).map_err(|e| Error::io(&self.path, e))?;
        for entry in entries {
            let entry = entry.map_err(|e| Error::io(&self.path, e))?;
            let name = entry.file_name().to_string_lossy().into_owned();
            if name != MANIFEST {
                outputs.insert(name, file_digest(&entry.path())?);
            }
        }
        let m = StageManifest {
            stage: self.stage.clone(),
            key: self.key.clone(),
            config_hash: config_hash.to_string(),
            settings,
            inputs,
            outputs,
        };
        self.write(MANIFEST, &serde_json::to_vec_pretty(&m)?)?;
        Ok(m)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn manifest_marks_completion() {
        let root = tempfile::tempdir().unwrap();
        let settings = serde_json::json!({"a": 1});
        let key = stage_key("demo", &settings, &BTreeMap::new());
        let dir = StageDir::new(root.path(), "demo", &key);
        assert!(dir.load().is_none());
        dir.prepare().unwrap();
        dir.write("x.txt", b"hello").unwrap();
        assert!(dir.load().is_none());
        let m = dir.finish("cfg", settings, BTreeMap::new()).unwrap();
        assert_eq!(dir.load(), Some(m.clone()));
        assert_eq!(m.outputs["x.txt"], sha256_hex(b"hello"));
        dir.write("x.txt", b"tampered").unwrap();
        assert!(dir.load().is_none());
    }

    #[test]
    fn keys_depend_on_settings_and_inputs() {
        let a = stage_key("s", &serde_json::json!({"v": 1}), &BTreeMap::new());
        let b = stage_key("s", &serde_json::json!({"v": 2}), &BTreeMap::new());
        let mut inputs = BTreeMap::new();
        inputs.insert("in".to_string(), "abc".to_string());
        let c = stage_key("s", &serde_json::json!({"v": 1}), &inputs);
        assert!(a != b && a != c);
        assert_eq!(sha256_hex(b"abc"), "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad");
    }
}
