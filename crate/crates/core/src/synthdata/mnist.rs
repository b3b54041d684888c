//! MNIST IDX archive reader and glyph downsampling.

use std::fs::File;
use std::io::{BufReader, Read};
use std::path::{Path, PathBuf};

use flate2::read::GzDecoder;

use super::{Glyph, GlyphBank, GLYPH_SIZE};
use crate::error::{Result, UdorError};

const IMAGES_MAGIC: u32 = 0x0000_0803;
const LABELS_MAGIC: u32 = 0x0000_0801;

pub const IMAGES_FILE: &str = "train-images-idx3-ubyte";
pub const LABELS_FILE: &str = "train-labels-idx1-ubyte";

/// Raw source digits as stored in the archive.
pub struct IdxDigits {
    pub rows: usize,
    pub cols: usize,
    pub pixels: Vec<u8>,
    pub labels: Vec<u8>,
}

impl IdxDigits {
    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn image(&self, i: usize) -> &[u8] {
        let n = self.rows * self.cols;
        &self.pixels[i * n..(i + 1) * n]
    }
}

fn locate(dir: &Path, stem: &str) -> Result<PathBuf> {
    for name in [format!("{stem}.gz"), stem.to_string()] {
        let p = dir.join(name);
        if p.is_file() {
            return Ok(p);
        }
    }
    Err(UdorError::io(
        dir.join(stem),
        std::io::Error::new(std::io::ErrorKind::NotFound, "IDX file not found"),
    ))
}

fn read_all(path: &Path) -> Result<Vec<u8>> {
    let file = File::open(path).map_err(|e| UdorError::io(path, e))?;
    let mut buf = Vec::new();
    let res = if path.extension().is_some_and(|e| e == "gz") {
        GzDecoder::new(BufReader::new(file)).read_to_end(&mut buf)
    } else {
        BufReader::new(file).read_to_end(&mut buf)
    };
    res.map_err(|e| UdorError::io(path, e))?;
    Ok(buf)
}

fn be_u32(buf: &[u8], at: usize) -> Result<u32> {
    buf.get(at..at + 4)
        .map(|b| u32::from_be_bytes(b.try_into().unwrap()))
        .ok_or_else(|| UdorError::Format("truncated IDX header".into()))
}

pub fn read_idx(dir: &Path) -> Result<IdxDigits> {
    let images = read_all(&locate(dir, IMAGES_FILE)?)?;
    let labels = read_all(&locate(dir, LABELS_FILE)?)?;

    if be_u32(&images, 0)? != IMAGES_MAGIC {
        return Err(UdorError::Format("bad IDX image magic".into()));
    }
    if be_u32(&labels, 0)? != LABELS_MAGIC {
        return Err(UdorError::Format("bad IDX label magic".into()));
    }
    let count = be_u32(&images, 4)? as usize;
    let rows = be_u32(&images, 8)? as usize;
    let cols = be_u32(&images, 12)? as usize;
    let label_count = be_u32(&labels, 4)? as usize;
    if count != label_count {
        return Err(UdorError::Format(format!(
            "{count} images but {label_count} labels"
        )));
    }
    let pixels = images
        .get(16..16 + count * rows * cols)
        .ok_or_else(|| UdorError::Format("truncated IDX image data".into()))?
        .to_vec();
    let labels = labels
        .get(8..8 + count)
        .ok_or_else(|| UdorError::Format("truncated IDX label data".into()))?
        .to_vec();
    Ok(IdxDigits {
        rows,
        cols,
        pixels,
        labels,
    })
}

/// Block-average downsampling to `GLYPH_SIZE` (28x28 -> 14x14 uses 2x2 blocks).
pub fn downsample(src: &[u8], rows: usize, cols: usize) -> Result<Vec<u8>> {
    if rows != cols || rows % GLYPH_SIZE != 0 {
        return Err(UdorError::Format(format!(
            "cannot resize {rows}x{cols} digits to {GLYPH_SIZE}x{GLYPH_SIZE}"
        )));
    }
    let f = rows / GLYPH_SIZE;
    let area = (f * f) as u32;
    let mut out = vec![0u8; GLYPH_SIZE * GLYPH_SIZE];
    for r in 0..GLYPH_SIZE {
        for c in 0..GLYPH_SIZE {
            let mut acc = 0u32;
            for dr in 0..f {
                for dc in 0..f {
                    acc += src[(r * f + dr) * cols + c * f + dc] as u32;
                }
            }
            out[r * GLYPH_SIZE + c] = ((acc + area / 2) / area) as u8;
        }
    }
    Ok(out)
}

/// Loads the requested digit classes; category `k` of the returned bank holds
/// glyphs of `classes[k]`.
pub fn load_source_digits(dir: &Path, classes: &[u8]) -> Result<GlyphBank> {
    if classes.is_empty() {
        return Err(UdorError::config("no digit classes requested"));
    }
    let raw = read_idx(dir)?;
    let mut per_category: Vec<Vec<Glyph>> = vec![Vec::new(); classes.len()];
    for i in 0..raw.len() {
        let label = raw.labels[i];
        if let Some(k) = classes.iter().position(|&c| c == label) {
            per_category[k].push(Glyph {
                source_index: i,
                label,
                pixels: downsample(raw.image(i), raw.rows, raw.cols)?,
            });
        }
    }
    for (k, glyphs) in per_category.iter().enumerate() {
        if glyphs.is_empty() {
            return Err(UdorError::config(format!(
                "digit class {} has no samples in {}",
                classes[k],
                dir.display()
            )));
        }
    }
    Ok(GlyphBank {
        classes: classes.to_vec(),
        per_category,
    })
}
