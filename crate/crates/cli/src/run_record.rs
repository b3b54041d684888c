//! `run.json`: the fully resolved configuration of a command.

use std::path::Path;

use anyhow::{Context, Result};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use udor_core::UdorError;

#[derive(Debug, Serialize, Deserialize)]
pub struct RunRecord<T> {
    pub command: String,
    pub version: String,
    /// `git describe` of the working tree, when available.
    pub git: Option<String>,
    pub config: T,
}

fn git_tag() -> Option<String> {
    let out = std::process::Command::new("git")
        .args(["describe", "--always", "--dirty"])
        .current_dir(env!("CARGO_MANIFEST_DIR"))
        .output()
        .ok()?;
    out.status
        .success()
        .then(|| String::from_utf8_lossy(&out.stdout).trim().to_string())
}

pub fn write<T: Serialize>(dir: &Path, command: &str, config: &T) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| UdorError::io(dir, e))?;
    let rec = RunRecord {
        command: command.to_string(),
        version: env!("CARGO_PKG_VERSION").to_string(),
        git: git_tag(),
        config,
    };
    let path = dir.join("run.json");
    std::fs::write(&path, serde_json::to_vec_pretty(&rec)?).map_err(|e| UdorError::io(&path, e))?;
    Ok(())
}

/// Reads a config file: either a bare configuration or a `run.json` wrapper.
pub fn read<T: DeserializeOwned>(path: &Path) -> Result<T> {
    let text = std::fs::read_to_string(path).map_err(|e| UdorError::io(path, e))?;
    let value: serde_json::Value = serde_json::from_str(&text)
        .map_err(|e| UdorError::config(format!("{} line {}: {e}", path.display(), e.line())))?;
    let inner = match value.get("config") {
        Some(c) if value.get("command").is_some() => c.clone(),
        _ => value,
    };
    serde_json::from_value(inner)
        .map_err(|e| UdorError::config(format!("{}: {e}", path.display())))
        .with_context(|| format!("reading config {}", path.display()))
}
