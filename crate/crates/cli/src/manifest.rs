//! Run manifests: what ran, on which inputs, producing what.

use std::path::{Path, PathBuf};
use std::time::Instant;

use anyhow::Context;
use serde::Serialize;
use sha2::{Digest, Sha256};

#[derive(Debug, Serialize)]
pub struct InputHash {
    pub path: String,
    pub sha256: String,
    pub bytes: u64,
}

#[derive(Debug, Serialize)]
pub struct RunManifest {
    pub command: String,
    pub version: String,
    pub config: serde_json::Value,
    pub inputs: Vec<InputHash>,
    pub outputs: Vec<String>,
    pub wall_time_ms: f64,
    #[serde(skip_serializing_if = "serde_json::Map::is_empty")]
    pub info: serde_json::Map<String, serde_json::Value>,
}

pub fn sha256_file(path: &Path) -> anyhow::Result<InputHash> {
    let bytes = std::fs::read(path).with_context(|| format!("reading {}", path.display()))?;
    let digest = Sha256::digest(&bytes);
    Ok(InputHash {
        path: path.display().to_string(),
        sha256: digest.iter().map(|b| format!("{b:02x}")).collect(),
        bytes: bytes.len() as u64,
    })
}

/// Collects inputs and outputs over a run; `finish` writes the manifest.
pub struct Recorder {
    command: String,
    config: serde_json::Value,
    started: Instant,
    inputs: Vec<InputHash>,
    outputs: Vec<String>,
    info: serde_json::Map<String, serde_json::Value>,
}

impl Recorder {
    pub fn start<C: Serialize>(command: &str, config: &C) -> anyhow::Result<Self> {
        Ok(Self {
            command: command.into(),
            config: serde_json::to_value(config)?,
            started: Instant::now(),
            inputs: Vec::new(),
            outputs: Vec::new(),
            info: serde_json::Map::new(),
        })
    }

    pub fn input(&mut self, path: &Path) -> anyhow::Result<()> {
        self.inputs.push(sha256_file(path)?);
        Ok(())
    }

    pub fn output(&mut self, path: &Path) {
        self.outputs.push(path.display().to_string());
    }

    pub fn info(&mut self, key: &str, value: impl Serialize) -> anyhow::Result<()> {
        self.info.insert(key.into(), serde_json::to_value(value)?);
        Ok(())
    }

    pub fn finish(self, path: &Path) -> anyhow::Result<PathBuf> {
        let manifest = RunManifest {
            command: self.command,
            version: env!("CARGO_PKG_VERSION").into(),
            config: self.config,
            inputs: self.inputs,
            outputs: self.outputs,
            wall_time_ms: self.started.elapsed().as_secs_f64() * 1e3,
            info: self.info,
        };
        let mut bytes = serde_json::to_vec_pretty(&manifest)?;
        bytes.push(b'\n');
        std::fs::write(path, bytes).with_context(|| format!("writing {}", path.display()))?;
        Ok(path.to_path_buf())
    }
}

/// Manifest path beside a single output file: `out.json` → `out.manifest.json`.
pub fn beside(out: &Path) -> PathBuf {
    let stem = out.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
    out.with_file_name(format!("{stem}.manifest.json"))
}
