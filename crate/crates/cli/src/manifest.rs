//! Manifest written next to simulated paths: config echo, per-file SHA-256
//! and an overall digest over the file list.

use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use projlm_core::solvability::Verdict;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::config::{OutputFormat, RunConfig};

pub const MANIFEST_NAME: &str = "manifest.json";
pub const MANIFEST_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FileEntry {
    /// Relative to the manifest's directory.
    pub name: String,
    pub bytes: u64,
    pub sha256: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Manifest {
    pub version: u32,
    pub config: RunConfig,
    pub format: OutputFormat,
    pub existence: Verdict,
    pub files: Vec<FileEntry>,
    pub digest: String,
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

/// SHA-256 over `name NUL sha256 LF` for each file in order.
pub fn overall_digest(files: &[FileEntry]) -> String {
    let mut h = Sha256::new();
    for f in files {
        h.update(f.name.as_bytes());
        h.update([0u8]);
        h.update(f.sha256.as_bytes());
        h.update(b"\n");
    }
    hex::encode(h.finalize())
}

impl Manifest {
    pub fn new(config: RunConfig, format: OutputFormat, existence: Verdict, files: Vec<FileEntry>) -> Self {
        let digest = overall_digest(&files);
        Manifest {
            version: MANIFEST_VERSION,
            config,
            format,
            existence,
            files,
            digest,
        }
    }

    /// Accepts the manifest file itself or the directory holding it.
    pub fn locate(path: &Path) -> PathBuf {
        if path.is_dir() {
            path.join(MANIFEST_NAME)
        } else {
            path.to_path_buf()
        }
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).with_context(|| format!("reading manifest {}", path.display()))?;
        let m: Manifest =
            serde_json::from_str(&text).with_context(|| format!("malformed manifest {}", path.display()))?;
        if m.version != MANIFEST_VERSION {
            bail!("manifest version {} is not supported", m.version);
        }
        Ok(m)
    }

    /// Reads every listed file from `dir`, checks sizes and hashes, and
    /// returns the contents in manifest order.
    pub fn verify(&self, dir: &Path) -> Result<Vec<Vec<u8>>> {
        if overall_digest(&self.files) != self.digest {
            bail!("manifest digest does not match its file list");
        }
        let mut out = Vec::with_capacity(self.files.len());
        for f in &self.files {
            let p = dir.join(&f.name);
            let bytes = std::fs::read(&p).with_context(|| format!("reading path file {}", p.display()))?;
            if bytes.len() as u64 != f.bytes || sha256_hex(&bytes) != f.sha256 {
                bail!(
                    "digest mismatch for {}: the file changed since the manifest was written",
                    p.display()
                );
            }
            out.push(bytes);
        }
        Ok(out)
    }
}

pub fn entry(name: String, bytes: &[u8]) -> FileEntry {
    FileEntry {
        name,
        bytes: bytes.len() as u64,
        sha256: sha256_hex(bytes),
    }
}
