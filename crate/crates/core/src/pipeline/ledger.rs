use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

pub const LEDGER_FILE: &str = "stages.json";

pub(crate) fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

pub fn file_sha256(path: &Path) -> Result<String> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    Ok(sha256_hex(&bytes))
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct StageRecord {
    pub fingerprint: String,
    /// Output path relative to the run directory, to its SHA-256.
    pub outputs: BTreeMap<PathBuf, String>,
}

impl StageRecord {
    pub fn hash_outputs(root: &Path, fingerprint: String, outputs: &[PathBuf]) -> Result<Self> {
        let mut map = BTreeMap::new();
        for rel in outputs {
            map.insert(rel.clone(), file_sha256(&root.join(rel))?);
        }
        Ok(Self {
            fingerprint,
            outputs: map,
        })
    }

    /// Every output exists and still has its recorded hash.
    pub fn intact(&self, root: &Path) -> bool {
        self.outputs
            .iter()
            .all(|(rel, hash)| file_sha256(&root.join(rel)).is_ok_and(|h| &h == hash))
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct StageLedger {
    pub stages: BTreeMap<String, StageRecord>,
}

impl StageLedger {
    /// A missing or unreadable ledger means nothing is complete.
    pub fn load_or_default(path: &Path) -> Self {
        std::fs::read_to_string(path)
            .ok()
            .and_then(|t| serde_json::from_str(&t).ok())
            .unwrap_or_default()
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let text = serde_json::to_string_pretty(self).expect("ledger serializes");
        std::fs::write(path, text).map_err(|e| Error::io(path, e))
    }

    pub fn is_fresh(&self, root: &Path, stage: &str, fingerprint: &str) -> bool {
        self.stages
            .get(stage)
            .is_some_and(|r| r.fingerprint == fingerprint && r.intact(root))
    }

    pub fn insert(&mut self, stage: &str, record: StageRecord) {
        self.stages.insert(stage.to_string(), record);
    }

    pub fn remove(&mut self, stage: &str) {
        self.stages.remove(stage);
    }
}
