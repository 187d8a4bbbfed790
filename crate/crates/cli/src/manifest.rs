//! Deterministic run manifests.
//!
//! Every subcommand writes a manifest next to its primary output listing
//! the command, config digest, input digests, seeds, tool version, output
//! digests, and wall time. Identical inputs reproduce identical output
//! digests.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use tightlab::Result;

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunManifest {
    pub command: String,
    pub tool_version: String,
    pub config_digest: Option<String>,
    pub inputs: BTreeMap<String, String>,
    pub seeds: Vec<u64>,
    pub outputs: BTreeMap<String, String>,
    pub wall_time_ms: u128,
}

pub struct ManifestBuilder {
    command: String,
    config_digest: Option<String>,
    inputs: BTreeMap<String, String>,
    seeds: Vec<u64>,
    outputs: Vec<PathBuf>,
    started: Instant,
}

impl ManifestBuilder {
    pub fn new(command: &str) -> Self {
        ManifestBuilder {
            command: command.to_string(),
            config_digest: None,
            inputs: BTreeMap::new(),
            seeds: Vec::new(),
            outputs: Vec::new(),
            started: Instant::now(),
        }
    }

    pub fn config(&mut self, path: Option<&Path>) -> Result<&mut Self> {
        if let Some(p) = path {
            self.config_digest = Some(file_digest(p)?);
        }
        Ok(self)
    }

    pub fn input(&mut self, path: &Path) -> Result<&mut Self> {
        self.inputs.insert(path.display().to_string(), file_digest(path)?);
        Ok(self)
    }

    pub fn input_opt(&mut self, path: Option<&Path>) -> Result<&mut Self> {
        if let Some(p) = path {
            self.input(p)?;
        }
        Ok(self)
    }

    pub fn seed(&mut self, seed: u64) -> &mut Self {
        self.seeds.push(seed);
        self
    }

    /// Registers an output file (digested at finish time).
    pub fn output(&mut self, path: &Path) -> &mut Self {
        self.outputs.push(path.to_path_buf());
        self
    }

    /// Digests outputs and writes the manifest to `path`.
    pub fn finish(self, path: &Path) -> Result<RunManifest> {
        let mut outputs = BTreeMap::new();
        for p in &self.outputs {
            outputs.insert(p.display().to_string(), file_digest(p)?);
        }
        let manifest = RunManifest {
            command: self.command,
            tool_version: env!("CARGO_PKG_VERSION").to_string(),
            config_digest: self.config_digest,
            inputs: self.inputs,
            seeds: self.seeds,
            outputs,
            wall_time_ms: self.started.elapsed().as_millis(),
        };
        let file = std::fs::File::create(path)?;
        serde_json::to_writer_pretty(std::io::BufWriter::new(file), &manifest)?;
        Ok(manifest)
    }
}

pub fn file_digest(path: &Path) -> Result<String> {
    let bytes = std::fs::read(path)?;
    let mut hasher = Sha256::new();
    hasher.update(&bytes);
    Ok(hex::encode(hasher.finalize()))
}

/// Manifest path next to an output file: `result.json` ->
/// `result.manifest.json`; directories get `manifest.json` inside.
pub fn manifest_path_for(out: &Path) -> PathBuf {
    if out.is_dir() {
        return out.join("manifest.json");
    }
    let stem = out.file_stem().and_then(|s| s.to_str()).unwrap_or("run");
    out.with_file_name(format!("{stem}.manifest.json"))
}
