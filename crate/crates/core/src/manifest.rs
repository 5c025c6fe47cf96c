//! Per-stage manifests: config hash plus SHA-256 of every input and output.
//! Keys are logical names or work-dir-relative paths, never absolute paths,
//! and nothing time-dependent is recorded.

use std::collections::BTreeMap;
use std::io::Read;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::jsonl;

pub const MANIFEST_DIR: &str = "manifests";

pub fn sha256_file(path: &Path) -> Result<String> {
    let mut file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut hasher = Sha256::new();
    let mut buf = [0u8; 64 * 1024];
    loop {
        let n = file.read(&mut buf).map_err(|e| Error::io(path, e))?;
        if n == 0 {
            break;
        }
        hasher.update(&buf[..n]);
    }
    Ok(hex::encode(hasher.finalize()))
}

pub fn sha256_json<T: Serialize>(value: &T) -> String {
    let text = serde_json::to_string(value).expect("value serializes");
    hex::encode(Sha256::digest(text.as_bytes()))
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct StageManifest {
    pub stage: String,
    pub format_version: u32,
    /// Hash of the config fields this stage reads.
    pub config_hash: String,
    pub inputs: BTreeMap<String, String>,
    pub outputs: BTreeMap<String, String>,
}

impl StageManifest {
    pub fn path(work_dir: &Path, stage: &str) -> PathBuf {
        work_dir.join(MANIFEST_DIR).join(format!("{stage}.json"))
    }

    pub fn load(work_dir: &Path, stage: &str) -> Result<Option<Self>> {
        let path = Self::path(work_dir, stage);
        if !path.exists() {
            return Ok(None);
        }
        jsonl::read_json(&path).map(Some)
    }

    pub fn save(&self, work_dir: &Path) -> Result<()> {
        let path = Self::path(work_dir, &self.stage);
        if let Some(dir) = path.parent() {
            std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        }
        jsonl::write_json(&path, self)
    }

    /// True when config and inputs match and every recorded output is still
    /// on disk with its recorded digest.
    pub fn is_current(&self, config_hash: &str, inputs: &BTreeMap<String, String>, work_dir: &Path) -> bool {
        if self.config_hash != config_hash || &self.inputs != inputs {
            return false;
        }
        self.outputs.iter().all(|(rel, digest)| {
            let p = work_dir.join(rel);
            p.exists() && sha256_file(&p).is_ok_and(|d| &d == digest)
        })
    }
}

/// Digests outputs given as work-dir-relative paths.
pub fn digest_outputs(work_dir: &Path, outputs: &[String]) -> Result<BTreeMap<String, String>> {
    outputs
        .iter()
        .map(|rel| Ok((rel.clone(), sha256_file(&work_dir.join(rel))?)))
        .collect()
}
