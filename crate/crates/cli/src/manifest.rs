//! Run manifests: the resolved configuration plus content hashes of every
//! input and output, written next to each primary output.

use std::ffi::OsString;
use std::fs::File;
use std::io::{BufReader, Read};
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::config::RunConfig;

pub const MANIFEST_SCHEMA: &str = "manifest.v1";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FileDigest {
    pub role: String,
    pub path: PathBuf,
    pub sha256: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub schema: String,
    pub command: String,
    pub version: String,
    pub config: RunConfig,
    pub inputs: Vec<FileDigest>,
    pub outputs: Vec<FileDigest>,
}

pub fn sha256_file(path: &Path) -> Result<String> {
    let mut reader = BufReader::new(File::open(path).with_context(|| format!("hashing {}", path.display()))?);
    let mut hasher = Sha256::new();
    let mut buf = [0u8; 64 * 1024];
    loop {
        let n = reader.read(&mut buf)?;
        if n == 0 {
            break;
        }
        hasher.update(&buf[..n]);
    }
    Ok(hex::encode(hasher.finalize()))
}

/// `{output}.manifest.json`
pub fn manifest_path(output: &Path) -> PathBuf {
    let mut s = OsString::from(output.as_os_str());
    s.push(".manifest.json");
    PathBuf::from(s)
}

pub struct ManifestBuilder {
    manifest: RunManifest,
}

impl ManifestBuilder {
    pub fn new(command: &str, config: &RunConfig) -> Self {
        Self {
            manifest: RunManifest {
                schema: MANIFEST_SCHEMA.into(),
                command: command.into(),
                version: env!("CARGO_PKG_VERSION").into(),
                config: config.clone(),
                inputs: Vec::new(),
                outputs: Vec::new(),
            },
        }
    }

    pub fn input(&mut self, role: &str, path: &Path) -> Result<&mut Self> {
        let sha256 = sha256_file(path)?;
        self.manifest.inputs.push(FileDigest {
            role: role.into(),
            path: path.to_path_buf(),
            sha256,
        });
        Ok(self)
    }

    pub fn output(&mut self, role: &str, path: &Path) -> Result<&mut Self> {
        let sha256 = sha256_file(path)?;
        self.manifest.outputs.push(FileDigest {
            role: role.into(),
            path: path.to_path_buf(),
            sha256,
        });
        Ok(self)
    }

    /// Writes the manifest next to `primary` and returns its path.
    pub fn write(&self, primary: &Path) -> Result<PathBuf> {
        let path = manifest_path(primary);
        let mut text = serde_json::to_string_pretty(&self.manifest)?;
        text.push('\n');
        std::fs::write(&path, text).with_context(|| format!("writing {}", path.display()))?;
        Ok(path)
    }
}
