//! Run manifests and artifact file handling.

use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::Serialize;
use serde_json::Value;
use sha2::{Digest, Sha256};

use crate::CliError;

#[derive(Debug, Serialize)]
pub struct FileDigest {
    pub path: String,
    pub sha256: String,
}

/// Written as `<artifact>.manifest.json` beside the primary output.
#[derive(Debug, Serialize)]
pub struct RunManifest {
    pub tool: &'static str,
    pub version: &'static str,
    pub subcommand: &'static str,
    pub config: Value,
    pub seed: Option<u64>,
    pub inputs: Vec<FileDigest>,
    pub outputs: Vec<FileDigest>,
    pub summary: Value,
    pub duration_secs: f64,
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().map(|b| format!("{b:02x}")).collect()
}

fn digest(path: &Path) -> Result<FileDigest, CliError> {
    let bytes = fs::read(path).map_err(|e| CliError::io(path, e))?;
    Ok(FileDigest {
        path: path.display().to_string(),
        sha256: sha256_hex(&bytes),
    })
}

/// Tracks one command's inputs and outputs, then writes its manifest.
pub struct Run {
    subcommand: &'static str,
    started: Instant,
    inputs: Vec<PathBuf>,
    outputs: Vec<PathBuf>,
}

impl Run {
    pub fn new(subcommand: &'static str) -> Self {
        Self {
            subcommand,
            started: Instant::now(),
            inputs: Vec::new(),
            outputs: Vec::new(),
        }
    }

    pub fn read(&mut self, path: &Path) -> Result<Vec<u8>, CliError> {
        let bytes = fs::read(path).map_err(|e| CliError::io(path, e))?;
        self.inputs.push(path.to_path_buf());
        Ok(bytes)
    }

    /// Write via a temporary sibling and rename, refusing to touch inputs.
    pub fn write(&mut self, path: &Path, bytes: &[u8]) -> Result<(), CliError> {
        for input in &self.inputs {
            if same_file(input, path) {
                return Err(CliError::Usage(format!(
                    "output {} would overwrite input {}",
                    path.display(),
                    input.display()
                )));
            }
        }
        let mut tmp = path.as_os_str().to_owned();
        tmp.push(".partial");
        let tmp = PathBuf::from(tmp);
        fs::write(&tmp, bytes).map_err(|e| CliError::io(&tmp, e))?;
        fs::rename(&tmp, path).map_err(|e| CliError::io(path, e))?;
        self.outputs.push(path.to_path_buf());
        Ok(())
    }

    pub fn finish(self, beside: &Path, config: Value, seed: Option<u64>, summary: Value) -> Result<(), CliError> {
        let manifest = RunManifest {
            tool: "eagernet",
            version: env!("CARGO_PKG_VERSION"),
            subcommand: self.subcommand,
            config,
            seed,
            inputs: self.inputs.iter().map(|p| digest(p)).collect::<Result<_, _>>()?,
            outputs: self.outputs.iter().map(|p| digest(p)).collect::<Result<_, _>>()?,
            summary,
            duration_secs: self.started.elapsed().as_secs_f64(),
        };
        let mut path = beside.as_os_str().to_owned();
        path.push(".manifest.json");
        let path = PathBuf::from(path);
        let mut text = serde_json::to_string_pretty(&manifest).map_err(|e| CliError::Data(e.to_string()))?;
        text.push('\n');
        fs::write(&path, text).map_err(|e| CliError::io(&path, e))
    }
}

fn same_file(a: &Path, b: &Path) -> bool {
    match (fs::canonicalize(a), fs::canonicalize(b)) {
        (Ok(x), Ok(y)) => x == y,
        _ => false,
    }
}
