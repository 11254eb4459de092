//! Per-run manifest listing every emitted file.

use crate::error::CliError;
use serde::Serialize;
use serde_json::Value;
use sha2::{Digest, Sha256};
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

pub const MANIFEST_NAME: &str = "manifest.json";

#[derive(Debug, Clone, Serialize)]
pub struct RunManifest {
    pub schema: &'static str,
    pub command: String,
    /// First 64 bits of SHA-256 over the canonical config JSON.
    pub config_hash: String,
    pub tool_version: &'static str,
    pub seeds: Vec<u64>,
    pub threads: usize,
    pub started_unix: f64,
    pub finished_unix: f64,
    pub config: Value,
    pub files: Vec<String>,
}

/// Keys are sorted (serde_json maps are ordered), so the digest ignores the
/// field order of the source file.
pub fn config_hash(canonical: &Value) -> String {
    let digest = Sha256::digest(canonical.to_string().as_bytes());
    digest[..8].iter().map(|b| format!("{b:02x}")).collect()
}

fn now() -> f64 {
    SystemTime::now().duration_since(UNIX_EPOCH).map_or(0.0, |d| d.as_secs_f64())
}

/// Collects outputs for one command and writes them plus the manifest.
pub struct OutputDir {
    dir: PathBuf,
    files: Vec<String>,
    started: f64,
}

impl OutputDir {
    pub fn create(dir: &Path) -> Result<Self, CliError> {
        std::fs::create_dir_all(dir).map_err(|e| CliError::config(format!("{}: {e}", dir.display())))?;
        Ok(Self {
            dir: dir.to_path_buf(),
            files: Vec::new(),
            started: now(),
        })
    }

    pub fn path(&self, name: &str) -> PathBuf {
        self.dir.join(name)
    }

    /// Lists a file written directly through [`OutputDir::path`].
    pub fn record(&mut self, name: &str) {
        self.files.push(name.to_string());
    }

    pub fn write(&mut self, name: &str, bytes: &[u8]) -> Result<(), CliError> {
        specclip::io::write_bytes(&self.path(name), bytes)?;
        self.record(name);
        Ok(())
    }

    pub fn write_json<T: Serialize>(&mut self, name: &str, value: &T) -> Result<(), CliError> {
        let mut text = serde_json::to_string_pretty(value).map_err(|e| CliError::numerical(e.to_string()))?;
        text.push('\n');
        self.write(name, text.as_bytes())
    }

    pub fn finish(self, command: &str, canonical: Value, seeds: Vec<u64>) -> Result<PathBuf, CliError> {
        let manifest = RunManifest {
            schema: crate::config::SCHEMA,
            command: command.to_string(),
            config_hash: config_hash(&canonical),
            tool_version: env!("CARGO_PKG_VERSION"),
            seeds,
            threads: rayon::current_num_threads(),
            started_unix: self.started,
            finished_unix: now(),
            config: canonical,
            files: self.files,
        };
        let path = self.dir.join(MANIFEST_NAME);
        let mut text = serde_json::to_string_pretty(&manifest).map_err(|e| CliError::numerical(e.to_string()))?;
        text.push('\n');
        specclip::io::write_bytes(&path, text.as_bytes())?;
        Ok(path)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn hash_ignores_field_order() {
        let a: Value = serde_json::from_str(r#"{"x":1,"y":{"b":2,"a":3}}"#).unwrap();
        let b: Value = serde_json::from_str(r#"{"y":{"a":3,"b":2},"x":1}"#).unwrap();
        assert_eq!(config_hash(&a), config_hash(&b));
        assert_eq!(config_hash(&a).len(), 16);
        let c: Value = serde_json::from_str(r#"{"x":2,"y":{"a":3,"b":2}}"#).unwrap();
        assert_ne!(config_hash(&a), config_hash(&c));
    }
}
