use std::collections::BTreeMap;
use std::fs::File;
use std::io::Read;
use std::path::Path;

use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::analytics::Exclusion;
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct InputFile {
    pub path: String,
    pub sha256: String,
}

/// Reproducibility record written next to every set of outputs. Contains no
/// wall-clock time so that reruns are byte-identical.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Manifest {
    pub tool: &'static str,
    pub version: &'static str,
    pub command: String,
    pub seeds: Vec<u64>,
    pub config_hash: String,
    pub config: serde_json::Value,
    pub inputs: Vec<InputFile>,
    pub outputs: Vec<String>,
    pub row_counts: BTreeMap<String, usize>,
    pub exclusions: Vec<Exclusion>,
    pub notes: Vec<String>,
}

impl Manifest {
    /// `config` is any serializable view of the effective settings.
    pub fn new<C: Serialize>(command: &str, seeds: Vec<u64>, config: &C) -> Result<Self> {
        let config = serde_json::to_value(config)?;
        Ok(Self {
            tool: "ratelab",
            version: env!("CARGO_PKG_VERSION"),
            command: command.to_string(),
            seeds,
            config_hash: sha256_hex(serde_json::to_string(&config)?.as_bytes()),
            config,
            inputs: Vec::new(),
            outputs: Vec::new(),
            row_counts: BTreeMap::new(),
            exclusions: Vec::new(),
            notes: Vec::new(),
        })
    }

    pub fn add_input(&mut self, path: &Path) -> Result<()> {
        self.inputs.push(InputFile {
            path: path.display().to_string(),
            sha256: sha256_file(path)?,
        });
        Ok(())
    }

    /// Output paths are stored by file name only, sorted.
    pub fn add_output(&mut self, path: &Path) {
        let name = path.file_name().map_or_else(
            || path.display().to_string(),
            |n| n.to_string_lossy().into_owned(),
        );
        self.outputs.push(name);
        self.outputs.sort();
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        let mut text = serde_json::to_string_pretty(self)?;
        text.push('\n');
        std::fs::write(path, text).map_err(|e| Error::io(path, e))
    }
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

pub fn sha256_file(path: &Path) -> Result<String> {
    let mut f = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut h = Sha256::new();
    let mut buf = [0u8; 1 << 16];
    loop {
        let n = f.read(&mut buf).map_err(|e| Error::io(path, e))?;
        if n == 0 {
            break;
        }
        h.update(&buf[..n]);
    }
    Ok(hex::encode(h.finalize()))
}
