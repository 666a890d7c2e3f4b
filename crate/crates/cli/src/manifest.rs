use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::{CliError, Result};

#[derive(Debug, Serialize)]
pub struct FileRecord {
    pub path: PathBuf,
    pub sha256: String,
}

/// Everything needed to rerun a command: the argument vector, the merged
/// effective settings and hashes of every file read or written.
#[derive(Debug, Serialize)]
pub struct Manifest {
    pub tool: &'static str,
    pub version: &'static str,
    pub verb: &'static str,
    pub args: Vec<String>,
    pub seed: u64,
    pub threads: usize,
    pub effective: serde_json::Value,
    pub inputs: BTreeMap<String, FileRecord>,
    pub outputs: Vec<FileRecord>,
}

pub fn sha256_file(path: &Path) -> Result<String> {
    let bytes = std::fs::read(path).map_err(|source| CliError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    Ok(hex::encode(Sha256::digest(&bytes)))
}

impl Manifest {
    pub fn new(verb: &'static str, args: Vec<String>, seed: u64, threads: usize) -> Self {
        Manifest {
            tool: "saint",
            version: env!("CARGO_PKG_VERSION"),
            verb,
            args,
            seed,
            threads,
            effective: serde_json::Value::Null,
            inputs: BTreeMap::new(),
            outputs: Vec::new(),
        }
    }

    pub fn input(&mut self, role: &str, path: &Path) -> Result<()> {
        let sha256 = sha256_file(path)?;
        self.inputs.insert(
            role.to_string(),
            FileRecord {
                path: path.to_path_buf(),
                sha256,
            },
        );
        Ok(())
    }

    pub fn output(&mut self, path: &Path) -> Result<()> {
        let sha256 = sha256_file(path)?;
        self.outputs.push(FileRecord {
            path: path.to_path_buf(),
            sha256,
        });
        Ok(())
    }

    /// `<dir>/manifest.json` for directory outputs, `<file>.manifest.json`
    /// otherwise.
    pub fn write_beside(&self, out: &Path) -> Result<()> {
        let path = if out.is_dir() {
            out.join("manifest.json")
        } else {
            let mut name = out.file_name().unwrap_or_default().to_os_string();
            name.push(".manifest.json");
            out.with_file_name(name)
        };
        let text = serde_json::to_string_pretty(self).expect("manifest serializes");
        std::fs::write(&path, text + "\n").map_err(|source| CliError::Io { path, source })
    }
}
