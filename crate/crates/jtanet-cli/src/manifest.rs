//! Per-command run manifests: the resolved configuration, SHA-256 hashes of
//! the file inputs, the produced artifacts, and the wall time. One manifest
//! per command, named `manifest_<command>.json` so commands sharing a run
//! directory do not clobber each other.

use jtanet::error::Result;
use serde::Serialize;
use sha2::{Digest, Sha256};
use std::collections::BTreeMap;
use std::path::Path;

#[derive(Serialize)]
pub struct RunManifest {
    pub command: String,
    /// Resolved argument values, defaults included.
    pub config: serde_json::Value,
    /// SHA-256 of every file input, keyed by path.
    pub inputs: BTreeMap<String, String>,
    pub outputs: Vec<String>,
    pub checkpoint: Option<String>,
    pub seed: Option<u64>,
    pub wall_seconds: f64,
}

impl RunManifest {
    pub fn new(command: &str, config: serde_json::Value) -> RunManifest {
        RunManifest {
            command: command.to_string(),
            config,
            inputs: BTreeMap::new(),
            outputs: Vec::new(),
            checkpoint: None,
            seed: None,
            wall_seconds: 0.0,
        }
    }

    pub fn add_input(&mut self, path: &Path) -> Result<()> {
        self.inputs.insert(path.display().to_string(), file_sha256(path)?);
        Ok(())
    }

    pub fn add_output(&mut self, path: &Path) {
        self.outputs.push(path.display().to_string());
    }

    /// Writes `<dir>/manifest_<command>.json`.
    pub fn write(&self, dir: &Path) -> Result<()> {
        let path = dir.join(format!("manifest_{}.json", self.command));
        std::fs::write(&path, serde_json::to_string_pretty(self)?)?;
        Ok(())
    }
}

pub fn file_sha256(path: &Path) -> Result<String> {
    let bytes = std::fs::read(path)?;
    let digest = Sha256::digest(&bytes);
    let mut out = String::with_capacity(64);
    for b in digest {
        out.push_str(&format!("{b:02x}"));
    }
    Ok(out)
}
