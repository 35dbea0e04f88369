//! Run manifests.

use std::collections::BTreeMap;
use std::io::Read;
use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::CliError;

/// Where the run's seed came from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum SeedSource {
    Flag,
    Generated,
    None,
}

#[derive(Debug, Clone, Serialize)]
pub struct Manifest {
    pub tool: &'static str,
    pub version: &'static str,
    pub command: &'static str,
    pub seed: Option<u64>,
    pub seed_source: SeedSource,
    pub workers: usize,
    pub parameters: serde_json::Value,
    /// SHA-256 of every input file, keyed by path.
    pub inputs: BTreeMap<String, String>,
    pub outputs: Vec<String>,
    pub wall_time_seconds: f64,
}

pub struct Recorder {
    manifest: Manifest,
    start: Instant,
}

pub fn sha256_file(path: &Path) -> Result<String, CliError> {
    let mut f = std::fs::File::open(path).map_err(|e| CliError::input(format!("{}: {e}", path.display())))?;
    let mut h = Sha256::new();
    let mut buf = [0u8; 1 << 16];
    loop {
        let n = f.read(&mut buf).map_err(|e| CliError::input(format!("{}: {e}", path.display())))?;
        if n == 0 {
            break;
        }
        h.update(&buf[..n]);
    }
    Ok(h.finalize().iter().map(|b| format!("{b:02x}")).collect())
}

impl Recorder {
    pub fn new(command: &'static str, seed: Option<u64>, seed_source: SeedSource, workers: usize, parameters: serde_json::Value) -> Self {
        Self {
            manifest: Manifest {
                tool: "gscan",
                version: env!("CARGO_PKG_VERSION"),
                command,
                seed,
                seed_source,
                workers,
                parameters,
                inputs: BTreeMap::new(),
                outputs: Vec::new(),
                wall_time_seconds: 0.0,
            },
            start: Instant::now(),
        }
    }

    pub fn input(&mut self, path: &Path) -> Result<(), CliError> {
        let digest = sha256_file(path)?;
        self.manifest.inputs.insert(path.display().to_string(), digest);
        Ok(())
    }

    pub fn output(&mut self, path: &Path) {
        self.manifest.outputs.push(path.display().to_string());
    }

    /// Writes `<dir>/<command>.manifest.json`.
    pub fn finish(mut self, dir: &Path) -> Result<PathBuf, CliError> {
        self.manifest.wall_time_seconds = self.start.elapsed().as_secs_f64();
        let path = dir.join(format!("{}.manifest.json", self.manifest.command));
        let mut text = serde_json::to_string_pretty(&self.manifest).map_err(|e| CliError::input(e.to_string()))?;
        text.push('\n');
        std::fs::write(&path, text).map_err(|e| CliError::input(format!("{}: {e}", path.display())))?;
        Ok(path)
    }
}
