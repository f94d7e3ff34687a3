//! Per-command run records: `<command>.manifest.json` and
//! `<command>.config.toml` in the output directory.

use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::config::Resolved;

#[derive(Debug, Serialize)]
struct FileHash {
    path: String,
    sha256: String,
}

#[derive(Debug, Serialize)]
struct Manifest<'a> {
    command: &'a str,
    tool_version: &'a str,
    /// Command-line arguments after the program name, as given.
    args: &'a [String],
    seed: u64,
    config_sha256: String,
    inputs: Vec<FileHash>,
    outputs: Vec<FileHash>,
}

pub fn sha256_file(path: &Path) -> Result<String> {
    let bytes = std::fs::read(path).with_context(|| format!("cannot read {}", path.display()))?;
    Ok(hex::encode(Sha256::digest(&bytes)))
}

fn hashes(paths: &[PathBuf]) -> Result<Vec<FileHash>> {
    paths
        .iter()
        .map(|p| {
            Ok(FileHash {
                path: p.display().to_string(),
                sha256: sha256_file(p)?,
            })
        })
        .collect()
}

/// Collects what a command read and wrote, then records it.
pub struct Run {
    pub command: String,
    pub args: Vec<String>,
    pub out_dir: PathBuf,
    pub inputs: Vec<PathBuf>,
    pub outputs: Vec<PathBuf>,
}

impl Run {
    pub fn new(command: &str, args: Vec<String>, out_dir: PathBuf) -> Self {
        Run {
            command: command.to_string(),
            args,
            out_dir,
            inputs: Vec::new(),
            outputs: Vec::new(),
        }
    }

    pub fn input(&mut self, p: impl Into<PathBuf>) {
        self.inputs.push(p.into());
    }

    pub fn output(&mut self, p: impl Into<PathBuf>) {
        self.outputs.push(p.into());
    }

    /// Path for a side artifact named after the command.
    pub fn side_file(&self, suffix: &str) -> PathBuf {
        self.out_dir.join(format!("{}.{suffix}", self.command))
    }

    pub fn finish(self, resolved: &Resolved) -> Result<()> {
        std::fs::create_dir_all(&self.out_dir)
            .with_context(|| format!("cannot create output directory {}", self.out_dir.display()))?;
        let config = toml::to_string(resolved)?;
        let config_path = self.side_file("config.toml");
        std::fs::write(&config_path, &config).with_context(|| format!("cannot write {}", config_path.display()))?;
        let manifest = Manifest {
            command: &self.command,
            tool_version: env!("CARGO_PKG_VERSION"),
            args: &self.args,
            seed: resolved.seed,
            config_sha256: hex::encode(Sha256::digest(config.as_bytes())),
            inputs: hashes(&self.inputs)?,
            outputs: hashes(&self.outputs)?,
        };
        let path = self.side_file("manifest.json");
        let mut json = serde_json::to_string_pretty(&manifest)?;
        json.push('\n');
        std::fs::write(&path, json).with_context(|| format!("cannot write {}", path.display()))
    }
}
