//! Run manifests: what a command read, what it wrote and with which
//! configuration, so that a rerun can be compared byte for byte.

use std::path::Path;
use std::time::{Instant, SystemTime, UNIX_EPOCH};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::io::write_json;

pub const TOOL_VERSION: &str = env!("CARGO_PKG_VERSION");

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

pub fn file_digest(path: impl AsRef<Path>) -> Result<String> {
    let path = path.as_ref();
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    Ok(sha256_hex(&bytes))
}

/// Digest of a value's JSON form. Objects serialize with sorted keys, so
/// equal configurations digest equally.
pub fn digest_json<T: Serialize>(value: &T) -> String {
    let canonical = serde_json::to_value(value).expect("config values serialize");
    sha256_hex(canonical.to_string().as_bytes())
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FileDigest {
    pub path: String,
    pub sha256: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub command: String,
    pub tool_version: String,
    pub config: serde_json::Value,
    pub config_digest: String,
    pub seed: Option<u64>,
    pub inputs: Vec<FileDigest>,
    pub outputs: Vec<FileDigest>,
    pub started_unix: u64,
    pub elapsed_ms: u64,
    #[serde(skip)]
    clock: Option<Instant>,
}

impl RunManifest {
    pub fn start(command: &str, config: &impl Serialize, seed: Option<u64>) -> Self {
        let config = serde_json::to_value(config).expect("config values serialize");
        RunManifest {
            command: command.to_string(),
            tool_version: TOOL_VERSION.to_string(),
            config_digest: sha256_hex(config.to_string().as_bytes()),
            config,
            seed,
            inputs: Vec::new(),
            outputs: Vec::new(),
            started_unix: SystemTime::now()
                .duration_since(UNIX_EPOCH)
                .map(|d| d.as_secs())
                .unwrap_or(0),
            elapsed_ms: 0,
            clock: Some(Instant::now()),
        }
    }

    pub fn add_input(&mut self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        self.inputs.push(FileDigest {
            path: path.display().to_string(),
            sha256: file_digest(path)?,
        });
        Ok(())
    }

    /// Records an already-written output file.
    pub fn add_output(&mut self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        self.outputs.push(FileDigest {
            path: path.display().to_string(),
            sha256: file_digest(path)?,
        });
        Ok(())
    }

    pub fn finish(&mut self) {
        if let Some(t) = self.clock {
            self.elapsed_ms = t.elapsed().as_millis() as u64;
        }
    }

    pub fn write(&mut self, path: impl AsRef<Path>) -> Result<()> {
        self.finish();
        write_json(path.as_ref(), self)
    }

    /// The manifest path that accompanies an output file.
    pub fn path_for(output: &Path) -> std::path::PathBuf {
        let mut name = output.file_name().unwrap_or_default().to_os_string();
        name.push(".manifest.json");
        output.with_file_name(name)
    }
}
