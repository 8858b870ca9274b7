//! Output directory handling and the run manifest.

use crate::error::{CliError, CliResult};
use serde::Serialize;
use sha2::{Digest, Sha256};
use std::fs;
use std::path::{Path, PathBuf};

pub fn sha256_hex(bytes: &[u8]) -> String {
    format!("{:x}", Sha256::digest(bytes))
}

#[derive(Debug, Serialize)]
struct FileEntry {
    name: String,
    sha256: String,
}

#[derive(Debug, Serialize)]
struct Manifest<'a> {
    command: &'a str,
    status: &'a str,
    seed: u64,
    config_sha256: &'a str,
    config: &'a serde_json::Value,
    betamap_version: &'a str,
    beta_transport_version: &'a str,
    files: &'a [FileEntry],
}

/// Collects every file a command writes so the manifest can hash them.
pub struct RunDir {
    dir: PathBuf,
    command: String,
    seed: u64,
    config: serde_json::Value,
    config_sha256: String,
    files: Vec<FileEntry>,
}

impl RunDir {
    pub fn create(dir: &Path, command: &str, seed: u64, config: &impl Serialize) -> CliResult<Self> {
        fs::create_dir_all(dir).map_err(CliError::io(dir))?;
        let config = serde_json::to_value(config).map_err(|e| CliError::Config(e.to_string()))?;
        let canonical = serde_json::to_vec(&config).map_err(|e| CliError::Config(e.to_string()))?;
        Ok(Self {
            dir: dir.to_path_buf(),
            command: command.to_string(),
            seed,
            config_sha256: sha256_hex(&canonical),
            config,
            files: Vec::new(),
        })
    }

    pub fn path(&self, name: &str) -> PathBuf {
        self.dir.join(name)
    }

    pub fn write_bytes(&mut self, name: &str, bytes: &[u8]) -> CliResult<()> {
        let path = self.path(name);
        fs::write(&path, bytes).map_err(CliError::io(&path))?;
        self.files.push(FileEntry {
            name: name.to_string(),
            sha256: sha256_hex(bytes),
        });
        log::info!("wrote {}", path.display());
        Ok(())
    }

    pub fn write_json(&mut self, name: &str, value: &impl Serialize) -> CliResult<()> {
        let mut text = serde_json::to_string_pretty(value).map_err(|e| CliError::Config(e.to_string()))?;
        text.push('\n');
        self.write_bytes(name, text.as_bytes())
    }

    /// Writes a CSV built row by row in memory.
    pub fn write_csv(
        &mut self,
        name: &str,
        fill: impl FnOnce(&mut csv::Writer<Vec<u8>>) -> CliResult<()>,
    ) -> CliResult<()> {
        let mut w = csv::Writer::from_writer(Vec::new());
        fill(&mut w)?;
        let bytes = w.into_inner().map_err(|e| CliError::Io {
            path: self.path(name),
            source: e.into_error(),
        })?;
        self.write_bytes(name, &bytes)
    }

    /// Writes `manifest.json`; called on success and on failure alike.
    pub fn finish(self, status: &str) -> CliResult<()> {
        let manifest = Manifest {
            command: &self.command,
            status,
            seed: self.seed,
            config_sha256: &self.config_sha256,
            config: &self.config,
            betamap_version: env!("CARGO_PKG_VERSION"),
            beta_transport_version: beta_transport::VERSION,
            files: &self.files,
        };
        let mut text = serde_json::to_string_pretty(&manifest).map_err(|e| CliError::Config(e.to_string()))?;
        text.push('\n');
        let path = self.path("manifest.json");
        fs::write(&path, text).map_err(CliError::io(&path))
    }
}
