use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use relctl::output::sha256_hex;
use serde::Serialize;

#[derive(Debug, Clone, Serialize)]
pub struct OutputFile {
    pub file: String,
    pub sha256: String,
    pub bytes: usize,
}

/// Provenance record written next to every dataset as `manifest.json`.
#[derive(Debug, Clone, Serialize)]
pub struct RunManifest {
    pub command: String,
    pub version: String,
    pub config_hash: String,
    pub config_path: Option<PathBuf>,
    pub wall_time_s: f64,
    pub threads: Option<usize>,
    /// Accepted for interface stability; the pipeline is deterministic.
    pub seed: Option<u64>,
    /// Requested and achieved tolerances; non-finite values serialise as null.
    pub tolerances: BTreeMap<String, f64>,
    pub warnings: usize,
    pub outputs: Vec<OutputFile>,
}

impl RunManifest {
    pub fn new(command: &str, config_hash: String) -> Self {
        RunManifest {
            command: command.to_string(),
            version: env!("CARGO_PKG_VERSION").to_string(),
            config_hash,
            config_path: None,
            wall_time_s: 0.0,
            threads: None,
            seed: None,
            tolerances: BTreeMap::new(),
            warnings: 0,
            outputs: Vec::new(),
        }
    }

    /// Writes `bytes` to `dir/name` and records it.
    pub fn emit(&mut self, dir: &Path, name: &str, bytes: &[u8]) -> std::io::Result<()> {
        fs::write(dir.join(name), bytes)?;
        self.outputs.push(OutputFile {
            file: name.to_string(),
            sha256: sha256_hex(bytes),
            bytes: bytes.len(),
        });
        Ok(())
    }

    pub fn write(&self, dir: &Path) -> std::io::Result<()> {
        let mut text = serde_json::to_string_pretty(self).expect("manifest serialises");
        text.push('\n');
        fs::write(dir.join("manifest.json"), text)
    }
}
