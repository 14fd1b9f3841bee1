//! Per-stage run manifests and the content hash that makes reruns no-ops.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{CliError, CliResult};

pub const MANIFEST_FILE: &str = "manifest.json";

/// Written once per output directory. Paths are relative to the run root.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub command: String,
    pub config_hash: String,
    pub seed: u64,
    pub inputs: Vec<String>,
    pub outputs: Vec<String>,
    pub tool_version: String,
    pub wall_clock_seconds: f64,
}

impl RunManifest {
    pub fn read(dir: &Path) -> Option<Self> {
        let text = fs::read_to_string(dir.join(MANIFEST_FILE)).ok()?;
        serde_json::from_str(&text).ok()
    }

    pub fn write(&self, dir: &Path) -> CliResult<()> {
        let mut text = serde_json::to_string_pretty(self)?;
        text.push('\n');
        evdistill::io::write_atomic(&dir.join(MANIFEST_FILE), text.as_bytes())?;
        Ok(())
    }

    /// Same hash and every recorded output still present.
    pub fn is_current(&self, root: &Path, hash: &str) -> bool {
        self.config_hash == hash && self.outputs.iter().all(|o| root.join(o).is_file())
    }
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

pub fn file_sha256(path: &Path) -> CliResult<String> {
    let bytes = fs::read(path).map_err(|e| CliError::data(format!("cannot read {}: {e}", path.display())))?;
    Ok(sha256_hex(&bytes))
}

/// Hash of the command, its config section, the seed, and the content of
/// every input file.
pub fn stage_hash<S: Serialize>(
    command: &str,
    section: &S,
    seed: u64,
    root: &Path,
    inputs: &[String],
) -> CliResult<String> {
    let files = inputs
        .iter()
        .map(|rel| Ok((rel.clone(), file_sha256(&root.join(rel))?)))
        .collect::<CliResult<Vec<_>>>()?;
    let doc = serde_json::json!({
        "command": command,
        "section": section,
        "seed": seed,
        "inputs": files,
        "tool_version": env!("CARGO_PKG_VERSION"),
    });
    Ok(sha256_hex(serde_json::to_string(&doc)?.as_bytes()))
}
