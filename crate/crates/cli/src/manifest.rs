//! Content-hash bookkeeping for stage artifacts. Every stage records a
//! fingerprint of its configuration (chained through its upstream stages)
//! and the digest of each file it wrote; later stages use those records to
//! refuse stale inputs and to skip work that is already done.

use std::collections::BTreeMap;
use std::path::Path;

use ansat_core::{Error, Result};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

pub const MANIFEST_FILE: &str = "manifest.json";

pub fn sha256_bytes(bytes: &[u8]) -> String {
    let mut hasher = Sha256::new();
    hasher.update(bytes);
    format!("{:x}", hasher.finalize())
}

pub fn sha256_file(path: &Path) -> Result<String> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    Ok(sha256_bytes(&bytes))
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct StageRecord {
    /// Hash of the stage's configuration slice chained with its parents'
    /// fingerprints; any upstream config change propagates down.
    pub fingerprint: String,
    /// Output file digests, keyed by path relative to the output directory.
    pub outputs: BTreeMap<String, String>,
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct Manifest {
    pub stages: BTreeMap<String, StageRecord>,
}

impl Manifest {
    pub fn load(dir: &Path) -> Result<Self> {
        let path = dir.join(MANIFEST_FILE);
        if !path.exists() {
            return Ok(Manifest::default());
        }
        let file = std::fs::File::open(&path).map_err(|e| Error::io(&path, e))?;
        serde_json::from_reader(std::io::BufReader::new(file)).map_err(|e| Error::Json {
            path,
            source: e,
        })
    }

    pub fn save(&self, dir: &Path) -> Result<()> {
        let path = dir.join(MANIFEST_FILE);
        let text = serde_json::to_string_pretty(self).map_err(|e| Error::Json {
            path: path.clone(),
            source: e,
        })?;
        std::fs::write(&path, text + "\n").map_err(|e| Error::io(&path, e))
    }

    /// Fingerprint of a stage's own config slice chained with its parents.
    pub fn fingerprint(&self, stage_config_json: &str, parents: &[&str]) -> Result<String> {
        let mut material = stage_config_json.to_string();
        for parent in parents {
            let record = self.stages.get(*parent).ok_or_else(|| {
                Error::Incomplete(format!("stage '{parent}' has not run yet"))
            })?;
            material.push('\n');
            material.push_str(&record.fingerprint);
        }
        Ok(sha256_bytes(material.as_bytes()))
    }

    /// Verifies that every artifact a parent stage recorded is still on disk
    /// with the recorded content.
    pub fn check_upstream(&self, dir: &Path, parents: &[&str]) -> Result<()> {
        for parent in parents {
            let record = self.stages.get(*parent).ok_or_else(|| {
                Error::Incomplete(format!("stage '{parent}' has not run yet"))
            })?;
            for (rel, recorded) in &record.outputs {
                let path = dir.join(rel);
                if !path.exists() {
                    return Err(Error::Incomplete(format!(
                        "artifact {rel} from stage '{parent}' is missing; rerun that stage"
                    )));
                }
                let current = sha256_file(&path)?;
                if current != *recorded {
                    return Err(Error::validation(format!(
                        "artifact {rel} changed since stage '{parent}' ran; rerun that stage"
                    )));
                }
            }
        }
        Ok(())
    }

    /// True when the stage already ran with this fingerprint and all its
    /// outputs are still intact, so rerunning would be a no-op.
    pub fn is_current(&self, dir: &Path, stage: &str, fingerprint: &str) -> bool {
        let Some(record) = self.stages.get(stage) else {
            return false;
        };
        if record.fingerprint != fingerprint {
            return false;
        }
        record.outputs.iter().all(|(rel, digest)| {
            let path = dir.join(rel);
            path.exists() && sha256_file(&path).is_ok_and(|d| d == *digest)
        })
    }

    /// Records a finished stage, hashing each listed output file.
    pub fn record(
        &mut self,
        dir: &Path,
        stage: &str,
        fingerprint: String,
        outputs: &[String],
    ) -> Result<()> {
        let mut hashed = BTreeMap::new();
        for rel in outputs {
            hashed.insert(rel.clone(), sha256_file(&dir.join(rel))?);
        }
        self.stages.insert(
            stage.to_string(),
            StageRecord {
                fingerprint,
                outputs: hashed,
            },
        );
        Ok(())
    }
}
