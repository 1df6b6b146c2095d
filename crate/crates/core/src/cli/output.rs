//! Collected run outputs and the manifest that indexes them.

use std::path::Path;

use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::error::Result;

/// One emitted file, held in memory until the run completes.
#[derive(Clone, Debug, PartialEq)]
pub struct Artifact {
    /// Path relative to the output directory, `/`-separated.
    pub path: String,
    pub bytes: Vec<u8>,
}

impl Artifact {
    pub fn text(path: impl Into<String>, text: String) -> Self {
        Artifact { path: path.into(), bytes: text.into_bytes() }
    }

    pub fn json<T: Serialize>(path: impl Into<String>, value: &T) -> Result<Self> {
        let mut text = serde_json::to_string_pretty(value)?;
        text.push('\n');
        Ok(Artifact::text(path, text))
    }

    /// One compact JSON document per line.
    pub fn jsonl<T: Serialize>(path: impl Into<String>, values: &[T]) -> Result<Self> {
        let mut text = String::new();
        for v in values {
            text.push_str(&serde_json::to_string(v)?);
            text.push('\n');
        }
        Ok(Artifact::text(path, text))
    }
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct FileDigest {
    pub path: String,
    pub sha256: String,
    pub bytes: u64,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct RunManifest {
    pub tool: String,
    pub tool_version: String,
    pub kind: String,
    pub config_sha256: String,
    pub started_at: String,
    pub finished_at: String,
    pub files: Vec<FileDigest>,
}

pub const MANIFEST_NAME: &str = "manifest.json";

/// Write every artifact in path order, then the manifest.
pub fn write_outputs(
    dir: &Path,
    kind: &str,
    config_bytes: &[u8],
    started_at: String,
    mut artifacts: Vec<Artifact>,
) -> Result<RunManifest> {
    artifacts.sort_by(|a, b| a.path.cmp(&b.path));
    std::fs::create_dir_all(dir)?;
    let mut files = Vec::with_capacity(artifacts.len());
    for a in &artifacts {
        let target = dir.join(&a.path);
        if let Some(parent) = target.parent() {
            std::fs::create_dir_all(parent)?;
        }
        std::fs::write(&target, &a.bytes)?;
        files.push(FileDigest { path: a.path.clone(), sha256: sha256_hex(&a.bytes), bytes: a.bytes.len() as u64 });
    }
    let manifest = RunManifest {
        tool: "bitscale".into(),
        tool_version: env!("CARGO_PKG_VERSION").into(),
        kind: kind.into(),
        config_sha256: sha256_hex(config_bytes),
        started_at,
        finished_at: now(),
        files,
    };
    let m = Artifact::json(MANIFEST_NAME, &manifest)?;
    std::fs::write(dir.join(MANIFEST_NAME), &m.bytes)?;
    Ok(manifest)
}

pub fn now() -> String {
    chrono::Utc::now().to_rfc3339_opts(chrono::SecondsFormat::Millis, true)
}
