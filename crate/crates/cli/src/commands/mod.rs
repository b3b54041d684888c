pub mod data;
pub mod edit;
pub mod eval;
pub mod sweep;
pub mod train;

use std::path::{Path, PathBuf};

use clap::ValueEnum;
use serde::{Deserialize, Serialize};
use udor_core::synthdata::{SlotLayout, DATA_DIR_ENV};

/// A flag combination clap cannot express; reported with exit code 2.
#[derive(Debug)]
pub struct UsageError(pub String);

impl std::fmt::Display for UsageError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for UsageError {}

pub fn usage(msg: impl Into<String>) -> anyhow::Error {
    UsageError(msg.into()).into()
}

/// Relative paths that do not exist under the working directory are looked up
/// under `$UDOR_DATA_DIR`.
pub fn data_path(p: &Path) -> PathBuf {
    if p.is_absolute() || p.exists() {
        return p.to_path_buf();
    }
    match std::env::var_os(DATA_DIR_ENV) {
        Some(root) => PathBuf::from(root).join(p),
        None => p.to_path_buf(),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum LayoutPreset {
    /// 32x32, top-left / top-right / left-bottom.
    MultiMnist,
    /// 32x32, top-left / top-right, one or two digits.
    OffsetPair,
    /// Four quadrant slots.
    Quadrants,
}

impl LayoutPreset {
    pub fn layout(&self, offset: usize) -> SlotLayout {
        match self {
            LayoutPreset::MultiMnist => SlotLayout::multi_mnist().with_offset(offset),
            LayoutPreset::OffsetPair => SlotLayout::offset_pair(offset),
            LayoutPreset::Quadrants => SlotLayout::quadrants(32).with_offset(offset),
        }
    }

    pub fn for_parts(n: usize) -> Self {
        match n {
            2 => LayoutPreset::OffsetPair,
            4 => LayoutPreset::Quadrants,
            _ => LayoutPreset::MultiMnist,
        }
    }
}

pub fn parse_classes(s: &str) -> Result<Vec<u8>, String> {
    s.split(',')
        .map(|c| {
            c.trim()
                .parse::<u8>()
                .ok()
                .filter(|&d| d <= 9)
                .ok_or_else(|| format!("{c:?} is not a digit class"))
        })
        .collect()
}
