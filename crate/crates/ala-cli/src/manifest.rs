//! Run manifests: every command that produces an artifact writes one next
//! to it, recording the command, inputs, effective configuration hash,
//! seed, tool version, and timestamps. Identical inputs and seed hash
//! identically, so reruns are auditable.

use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use chrono::{DateTime, Utc};
use serde::Serialize;
use sha2::{Digest, Sha256};

#[derive(Debug, Serialize)]
pub struct RunManifest {
    pub command: String,
    pub inputs: Vec<String>,
    pub outputs: Vec<String>,
    pub seed: Option<u64>,
    pub config_hash: String,
    pub tool_version: String,
    pub started: String,
    pub finished: String,
}

pub struct ManifestBuilder {
    command: String,
    inputs: Vec<String>,
    seed: Option<u64>,
    config_hash: String,
    started: DateTime<Utc>,
}

impl ManifestBuilder {
    /// Start a manifest; `params` is the command's effective configuration
    /// (flags, seed) serialized for hashing.
    pub fn new<P: Serialize>(
        command: &str,
        inputs: &[&Path],
        params: &P,
        seed: Option<u64>,
    ) -> Result<Self> {
        let canonical = serde_json::to_vec(params).context("cannot hash command parameters")?;
        let mut hasher = Sha256::new();
        hasher.update(command.as_bytes());
        hasher.update(&canonical);
        Ok(ManifestBuilder {
            command: command.to_string(),
            inputs: inputs.iter().map(|p| p.display().to_string()).collect(),
            seed,
            config_hash: hex::encode(hasher.finalize()),
            started: Utc::now(),
        })
    }

    /// Finish the run and write the manifest to `path`.
    pub fn write(self, outputs: &[&Path], path: &Path) -> Result<()> {
        let manifest = RunManifest {
            command: self.command,
            inputs: self.inputs,
            outputs: outputs.iter().map(|p| p.display().to_string()).collect(),
            seed: self.seed,
            config_hash: self.config_hash,
            tool_version: env!("CARGO_PKG_VERSION").to_string(),
            started: self.started.to_rfc3339(),
            finished: Utc::now().to_rfc3339(),
        };
        let body = serde_json::to_string_pretty(&manifest)?;
        std::fs::write(path, body)
            .with_context(|| format!("cannot write manifest {}", path.display()))?;
        Ok(())
    }
}

/// Manifest path for a single-file artifact: `<artifact>.manifest.json`.
pub fn sibling_manifest_path(artifact: &Path) -> PathBuf {
    let mut name = artifact
        .file_name()
        .map(|n| n.to_string_lossy().into_owned())
        .unwrap_or_else(|| "artifact".to_string());
    name.push_str(".manifest.json");
    artifact.with_file_name(name)
}
