//! On-disk dataset: `images/NNNNNN.png`, `manifest.jsonl`, `dataset.json`.

use std::fs::{self, File};
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::{random_sample, GlyphBank, GrayImage, OccupancyDistribution, SlotLayout};
use crate::error::{Result, UdorError};

pub const DATASET_FORMAT: &str = "udor-dataset/1";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetInfo {
    pub format: String,
    pub layout: SlotLayout,
    pub seed: u64,
    pub n_samples: usize,
    pub occupancy: OccupancyDistribution,
    /// Source digit class held by each slot.
    pub classes: Vec<u8>,
    /// Count of scenes in which each slot is occupied.
    pub slot_counts: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestRecord {
    pub index: usize,
    pub occupancy: Vec<u8>,
    pub glyph_ids: Vec<Option<usize>>,
    pub offsets: Vec<(i32, i32)>,
    pub seed: u64,
}

fn image_path(dir: &Path, index: usize) -> PathBuf {
    dir.join("images").join(format!("{index:06}.png"))
}

/// Writes `n_samples` scenes; scene `i` is drawn from seed `seed + i`, so the
/// output does not depend on generation order.
pub fn generate_dataset(
    out: &Path,
    layout: &SlotLayout,
    bank: &GlyphBank,
    n_samples: usize,
    occupancy: &OccupancyDistribution,
    seed: u64,
) -> Result<DatasetInfo> {
    if n_samples == 0 {
        return Err(UdorError::config("n_samples must be positive"));
    }
    layout.validate()?;
    occupancy.validate(layout.n_slots())?;
    let images = out.join("images");
    fs::create_dir_all(&images).map_err(|e| UdorError::io(&images, e))?;

    let manifest_path = out.join("manifest.jsonl");
    let file = File::create(&manifest_path).map_err(|e| UdorError::io(&manifest_path, e))?;
    let mut manifest = BufWriter::new(file);
    let mut slot_counts = vec![0usize; layout.n_slots()];
    for index in 0..n_samples {
        let sample_seed = seed.wrapping_add(index as u64);
        let sample = random_sample(layout, bank, occupancy, sample_seed)?;
        sample.image.save_png(&image_path(out, index))?;
        for (k, &o) in sample.occupancy.iter().enumerate() {
            if o != 0 {
                slot_counts[k] += 1;
            }
        }
        let record = ManifestRecord {
            index,
            occupancy: sample.occupancy,
            glyph_ids: sample.glyph_ids,
            offsets: sample.offsets_used,
            seed: sample_seed,
        };
        serde_json::to_writer(&mut manifest, &record).expect("manifest record serializes");
        manifest
            .write_all(b"\n")
            .map_err(|e| UdorError::io(&manifest_path, e))?;
    }
    manifest
        .flush()
        .map_err(|e| UdorError::io(&manifest_path, e))?;

    let info = DatasetInfo {
        format: DATASET_FORMAT.to_string(),
        layout: layout.clone(),
        seed,
        n_samples,
        occupancy: occupancy.clone(),
        classes: bank.classes[..layout.n_slots()].to_vec(),
        slot_counts,
    };
    let info_path = out.join("dataset.json");
    let json = serde_json::to_vec_pretty(&info).expect("dataset info serializes");
    fs::write(&info_path, json).map_err(|e| UdorError::io(&info_path, e))?;
    log::info!("wrote {n_samples} scenes to {}", out.display());
    Ok(info)
}

/// A dataset directory opened for reading.
#[derive(Debug, Clone)]
pub struct Dataset {
    pub dir: PathBuf,
    pub info: DatasetInfo,
    pub records: Vec<ManifestRecord>,
}

impl Dataset {
    pub fn open(dir: &Path) -> Result<Self> {
        let info_path = dir.join("dataset.json");
        let raw = fs::read(&info_path).map_err(|e| UdorError::io(&info_path, e))?;
        let info: DatasetInfo = serde_json::from_slice(&raw)
            .map_err(|e| UdorError::Format(format!("{}: {e}", info_path.display())))?;
        if info.format != DATASET_FORMAT {
            return Err(UdorError::Format(format!(
                "dataset format {:?}, expected {DATASET_FORMAT:?}",
                info.format
            )));
        }
        let manifest_path = dir.join("manifest.jsonl");
        let file = File::open(&manifest_path).map_err(|e| UdorError::io(&manifest_path, e))?;
        let mut records = Vec::with_capacity(info.n_samples);
        for (lineno, line) in BufReader::new(file).lines().enumerate() {
            let line = line.map_err(|e| UdorError::io(&manifest_path, e))?;
            if line.trim().is_empty() {
                continue;
            }
            let rec: ManifestRecord = serde_json::from_str(&line).map_err(|e| {
                UdorError::Format(format!("{} line {}: {e}", manifest_path.display(), lineno + 1))
            })?;
            if rec.occupancy.len() != info.layout.n_slots() {
                return Err(UdorError::Format(format!(
                    "{} line {}: occupancy length {}",
                    manifest_path.display(),
                    lineno + 1,
                    rec.occupancy.len()
                )));
            }
            records.push(rec);
        }
        if records.len() != info.n_samples {
            return Err(UdorError::Format(format!(
                "manifest has {} records, dataset.json says {}",
                records.len(),
                info.n_samples
            )));
        }
        Ok(Dataset {
            dir: dir.to_path_buf(),
            info,
            records,
        })
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn load_image(&self, index: usize) -> Result<GrayImage> {
        let img = GrayImage::load_png(&image_path(&self.dir, index))?;
        if img.size() != self.info.layout.canvas_size {
            return Err(UdorError::shape(format!(
                "image {index} is {0}x{0}, layout says {1}",
                img.size(),
                self.info.layout.canvas_size
            )));
        }
        Ok(img)
    }

    pub fn load_images(&self) -> Result<Vec<GrayImage>> {
        (0..self.len()).map(|i| self.load_image(i)).collect()
    }
}
