//! Machine-readable run log: config hash, tool version and per-stage
//! input/output digests.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufReader, Read};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::Result;
use rs_bench_core::Error;

pub const RUN_LOG_FILE: &str = "run_log.json";

pub fn sha256_bytes(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

pub fn sha256_file(path: &Path) -> Result<String> {
    let file = File::open(path).map_err(|e| Error::Io {
        path: path.to_path_buf(),
        source: e,
    })?;
    let mut reader = BufReader::new(file);
    let mut hasher = Sha256::new();
    let mut buf = [0u8; 64 * 1024];
    loop {
        let n = reader.read(&mut buf).map_err(|e| Error::Io {
            path: path.to_path_buf(),
            source: e,
        })?;
        if n == 0 {
            break;
        }
        hasher.update(&buf[..n]);
    }
    Ok(hex::encode(hasher.finalize()))
}

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct StageRecord {
    pub inputs: BTreeMap<String, String>,
    pub outputs: BTreeMap<String, String>,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct RunLog {
    pub tool: String,
    pub version: String,
    pub config_hash: String,
    pub stages: BTreeMap<String, StageRecord>,
}

impl RunLog {
    pub fn new(config_hash: String) -> Self {
        RunLog {
            tool: env!("CARGO_PKG_NAME").to_owned(),
            version: env!("CARGO_PKG_VERSION").to_owned(),
            config_hash,
            stages: BTreeMap::new(),
        }
    }

    /// Loads the log in `out_dir`, starting over when the config changed.
    pub fn open(out_dir: &Path, config_hash: &str) -> Result<Self> {
        let path = out_dir.join(RUN_LOG_FILE);
        if path.exists() {
            let text = std::fs::read_to_string(&path).map_err(|e| Error::Io {
                path: path.clone(),
                source: e,
            })?;
            let log: RunLog = serde_json::from_str(&text).map_err(Error::from)?;
            if log.config_hash == config_hash {
                return Ok(log);
            }
            log::info!("config changed; starting a new run log");
        }
        Ok(RunLog::new(config_hash.to_owned()))
    }

    pub fn save(&self, out_dir: &Path) -> Result<()> {
        rs_bench_core::jsonl::write_json(&out_dir.join(RUN_LOG_FILE), self)?;
        Ok(())
    }

    /// Every output path recorded by any stage, keyed as in the log.
    pub fn all_outputs(&self) -> BTreeMap<&str, &str> {
        self.stages
            .values()
            .flat_map(|s| s.outputs.iter().map(|(k, v)| (k.as_str(), v.as_str())))
            .collect()
    }
}

/// Collects digests for one stage. Paths under the run directory are
/// recorded relative to it.
pub struct StageDigests {
    root: PathBuf,
    record: StageRecord,
}

impl StageDigests {
    pub fn new(root: &Path) -> Self {
        StageDigests {
            root: root.to_path_buf(),
            record: StageRecord::default(),
        }
    }

    pub fn key(&self, path: &Path) -> String {
        path.strip_prefix(&self.root)
            .unwrap_or(path)
            .to_string_lossy()
            .replace('\\', "/")
    }

    pub fn input(&mut self, path: &Path) -> Result<()> {
        let digest = sha256_file(path)?;
        self.record.inputs.insert(self.key(path), digest);
        Ok(())
    }

    pub fn output(&mut self, path: &Path) -> Result<()> {
        let digest = sha256_file(path)?;
        self.record.outputs.insert(self.key(path), digest);
        Ok(())
    }

    pub fn finish(self) -> StageRecord {
        self.record
    }
}
