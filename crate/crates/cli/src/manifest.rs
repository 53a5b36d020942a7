use std::path::{Path, PathBuf};

use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::CliError;

#[derive(Serialize)]
struct Entry {
    path: String,
    bytes: u64,
    sha256: String,
}

#[derive(Serialize)]
struct Manifest<'a> {
    command: &'a str,
    seed: u64,
    config_sha256: String,
    files: Vec<Entry>,
}

fn digest(path: &Path) -> Result<(u64, String), CliError> {
    let bytes = std::fs::read(path)?;
    let hash = Sha256::digest(&bytes);
    Ok((bytes.len() as u64, hash.iter().map(|b| format!("{b:02x}")).collect()))
}

/// Writes `manifest.json` in `out` listing `files` (relative to `out`).
pub fn write(out: &Path, command: &str, seed: u64, config: &Path, files: &[PathBuf]) -> Result<(), CliError> {
    let (_, config_sha256) = digest(config)?;
    let mut entries = Vec::new();
    let mut sorted: Vec<&PathBuf> = files.iter().collect();
    sorted.sort();
    sorted.dedup();
    for f in sorted {
        let (bytes, sha256) = digest(f)?;
        let rel = f.strip_prefix(out).unwrap_or(f);
        entries.push(Entry { path: rel.to_string_lossy().into_owned(), bytes, sha256 });
    }
    let m = Manifest { command, seed, config_sha256, files: entries };
    let mut text = serde_json::to_string_pretty(&m)?;
    text.push('\n');
    std::fs::write(out.join("manifest.json"), text)?;
    Ok(())
}
