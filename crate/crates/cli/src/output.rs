//! Atomic file output and run manifests.

use std::io::Write;
use std::path::{Path, PathBuf};

use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::CliError;

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

/// Writes `bytes` to a temporary file next to `path` and renames it into place.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<(), CliError> {
    let dir = path.parent().filter(|p| !p.as_os_str().is_empty()).unwrap_or(Path::new("."));
    let mut tmp = tempfile::NamedTempFile::new_in(dir)
        .map_err(|e| CliError::new(format!("cannot create file in {}: {e}", dir.display())))?;
    tmp.write_all(bytes).map_err(|e| CliError::new(format!("write {}: {e}", path.display())))?;
    tmp.as_file().sync_all().map_err(|e| CliError::new(format!("sync {}: {e}", path.display())))?;
    tmp.persist(path).map_err(|e| CliError::new(format!("rename into {}: {e}", path.display())))?;
    Ok(())
}

#[derive(Debug, Serialize)]
pub struct OutputEntry {
    pub file: String,
    pub sha256: String,
}

#[derive(Debug, Serialize)]
pub struct InputEntry {
    pub role: String,
    pub path: String,
    pub sha256: String,
}

#[derive(Debug, Serialize)]
pub struct Manifest {
    pub tool: &'static str,
    pub version: &'static str,
    pub command: String,
    pub arguments: Vec<String>,
    pub seed: u64,
    pub threads: Option<usize>,
    pub overrides: Vec<String>,
    pub inputs: Vec<InputEntry>,
    pub effective_config_sha256: String,
    pub effective_config: String,
    pub outputs: Vec<OutputEntry>,
}

/// Collects output files for one run and writes them plus `manifest.json`.
pub struct Run {
    dir: PathBuf,
    outputs: Vec<OutputEntry>,
    inputs: Vec<InputEntry>,
}

impl Run {
    pub fn new(dir: &Path) -> Result<Self, CliError> {
        std::fs::create_dir_all(dir)
            .map_err(|e| CliError::new(format!("cannot create output directory {}: {e}", dir.display())))?;
        Ok(Self { dir: dir.to_path_buf(), outputs: Vec::new(), inputs: Vec::new() })
    }

    pub fn input(&mut self, role: &str, path: &Path, bytes: &[u8]) {
        self.inputs.push(InputEntry { role: role.into(), path: path.display().to_string(), sha256: sha256_hex(bytes) });
    }

    pub fn write(&mut self, name: &str, contents: &str) -> Result<(), CliError> {
        write_atomic(&self.dir.join(name), contents.as_bytes())?;
        self.outputs.push(OutputEntry { file: name.into(), sha256: sha256_hex(contents.as_bytes()) });
        Ok(())
    }

    pub fn finish(self, mut manifest: Manifest) -> Result<Vec<String>, CliError> {
        manifest.outputs = self.outputs;
        manifest.inputs.extend(self.inputs);
        let text = serde_json::to_string_pretty(&manifest).map_err(|e| CliError::new(e.to_string()))? + "\n";
        write_atomic(&self.dir.join("manifest.json"), text.as_bytes())?;
        let mut files: Vec<String> = manifest.outputs.iter().map(|o| o.file.clone()).collect();
        files.push("manifest.json".into());
        Ok(files)
    }
}
