use std::path::Path;
use std::time::{SystemTime, UNIX_EPOCH};

use anyhow::Result;
use serde::{Deserialize, Serialize};

use crate::common::sha256_hex;

/// Provenance of one invocation, written as `manifest.json` next to the
/// results. Timestamps live only here so result files stay bit-stable.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub command: String,
    pub version: String,
    pub config_path: Option<String>,
    pub seed: u64,
    pub out_dir: String,
    /// SHA-256 over the command, its arguments, the effective scenario and
    /// any parameter file read.
    pub input_hash: String,
    pub args: serde_json::Value,
    pub outputs: Vec<String>,
    pub started_unix: f64,
    pub finished_unix: f64,
}

pub fn now_unix() -> f64 {
    SystemTime::now().duration_since(UNIX_EPOCH).map(|d| d.as_secs_f64()).unwrap_or(0.0)
}

pub struct ManifestBuilder {
    command: String,
    config_path: Option<String>,
    seed: u64,
    args: serde_json::Value,
    hash_input: Vec<u8>,
    started: f64,
}

impl ManifestBuilder {
    pub fn new(command: &str, common: &crate::args::Common, args: &impl Serialize) -> Result<Self> {
        let args = serde_json::to_value(args)?;
        let mut hash_input = command.as_bytes().to_vec();
        hash_input.extend(serde_json::to_vec(&args)?);
        Ok(Self {
            command: command.to_string(),
            config_path: common.config.as_ref().map(|p| p.display().to_string()),
            seed: common.seed,
            args,
            hash_input,
            started: now_unix(),
        })
    }

    pub fn hash_bytes(&mut self, bytes: &[u8]) {
        self.hash_input.extend_from_slice(bytes);
    }

    pub fn write(self, out_dir: &Path, outputs: Vec<String>) -> Result<RunManifest> {
        let manifest = RunManifest {
            command: self.command,
            version: env!("CARGO_PKG_VERSION").to_string(),
            config_path: self.config_path,
            seed: self.seed,
            out_dir: out_dir.display().to_string(),
            input_hash: sha256_hex(&self.hash_input),
            args: self.args,
            outputs,
            started_unix: self.started,
            finished_unix: now_unix(),
        };
        let mut text = serde_json::to_string_pretty(&manifest)?;
        text.push('\n');
        std::fs::write(out_dir.join("manifest.json"), text)?;
        Ok(manifest)
    }
}
