//! Provenance record written next to every command's output.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

pub const TOOL_VERSION: &str = env!("CARGO_PKG_VERSION");

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

pub fn sha256_file(path: &Path) -> Result<String> {
    let bytes = fs::read(path).map_err(|source| Error::Io {
        path: path.display().to_string(),
        source,
    })?;
    Ok(sha256_hex(&bytes))
}

#[derive(Debug, Clone, Serialize)]
pub struct RunManifest {
    pub command: String,
    pub config_digest: Option<String>,
    pub input_digests: BTreeMap<String, String>,
    pub master_seed: Option<u64>,
    pub tool_version: String,
    pub threads: usize,
    pub started: String,
    pub finished: Option<String>,
    pub outputs: Vec<String>,
    pub warnings: Vec<String>,
}

impl RunManifest {
    pub fn start(command: &str, threads: usize) -> Self {
        RunManifest {
            command: command.to_string(),
            config_digest: None,
            input_digests: BTreeMap::new(),
            master_seed: None,
            tool_version: TOOL_VERSION.to_string(),
            threads,
            started: now(),
            finished: None,
            outputs: Vec::new(),
            warnings: Vec::new(),
        }
    }

    pub fn add_input(&mut self, path: &Path) -> Result<()> {
        let digest = sha256_file(path)?;
        self.input_digests.insert(path.display().to_string(), digest);
        Ok(())
    }

    pub fn finish(&mut self) {
        self.finished = Some(now());
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        let text = serde_json::to_string_pretty(self).expect("manifest serializes");
        fs::write(path, text + "\n").map_err(|source| Error::Io {
            path: path.display().to_string(),
            source,
        })
    }
}

fn now() -> String {
    chrono::Utc::now().to_rfc3339_opts(chrono::SecondsFormat::Millis, true)
}
