//! Run directories: every artifact is written through [`RunDir`], which
//! records its SHA-256 for the manifest.

use anyhow::Context;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use std::path::{Path, PathBuf};

pub const MANIFEST: &str = "manifest.json";

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub path: String,
    pub sha256: String,
    pub bytes: u64,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Manifest {
    pub tool: String,
    pub version: String,
    pub command: String,
    pub artifacts: Vec<ManifestEntry>,
}

pub struct RunDir {
    root: PathBuf,
    entries: Vec<ManifestEntry>,
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

impl RunDir {
    pub fn create(root: &Path) -> anyhow::Result<Self> {
        std::fs::create_dir_all(root).with_context(|| format!("creating {}", root.display()))?;
        Ok(Self { root: root.to_path_buf(), entries: Vec::new() })
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn write_bytes(&mut self, rel: &str, bytes: &[u8]) -> anyhow::Result<PathBuf> {
        let path = self.root.join(rel);
        if let Some(parent) = path.parent() {
            std::fs::create_dir_all(parent)?;
        }
        std::fs::write(&path, bytes).with_context(|| format!("writing {}", path.display()))?;
        self.entries.retain(|e| e.path != rel);
        self.entries.push(ManifestEntry { path: rel.to_string(), sha256: sha256_hex(bytes), bytes: bytes.len() as u64 });
        Ok(path)
    }

    /// Pretty JSON with a trailing newline. Field order follows the struct
    /// definitions, so equal values give equal bytes.
    pub fn write_json<T: Serialize>(&mut self, rel: &str, value: &T) -> anyhow::Result<PathBuf> {
        let mut text = serde_json::to_string_pretty(value)?;
        text.push('\n');
        self.write_bytes(rel, text.as_bytes())
    }

    pub fn write_text(&mut self, rel: &str, text: &str) -> anyhow::Result<PathBuf> {
        self.write_bytes(rel, text.as_bytes())
    }

    pub fn finish(self, command: &str) -> anyhow::Result<Manifest> {
        let manifest = Manifest {
            tool: env!("CARGO_PKG_NAME").into(),
            version: env!("CARGO_PKG_VERSION").into(),
            command: command.into(),
            artifacts: self.entries,
        };
        let mut text = serde_json::to_string_pretty(&manifest)?;
        text.push('\n');
        std::fs::write(self.root.join(MANIFEST), text)?;
        Ok(manifest)
    }
}

/// Artifacts whose content no longer matches the manifest, or that are
/// missing.
pub fn stale_artifacts(dir: &Path) -> anyhow::Result<Vec<String>> {
    let text = std::fs::read_to_string(dir.join(MANIFEST)).with_context(|| format!("reading manifest in {}", dir.display()))?;
    let manifest: Manifest = serde_json::from_str(&text)?;
    let mut stale = Vec::new();
    for e in &manifest.artifacts {
        match std::fs::read(dir.join(&e.path)) {
            Ok(bytes) if sha256_hex(&bytes) == e.sha256 => {}
            _ => stale.push(e.path.clone()),
        }
    }
    Ok(stale)
}
