//! Multi-MNIST style composite scenes.
//!
//! A scene is a black square canvas with a fixed set of 16x16 slots. Slot `k`
//! only ever holds digits of category `k`, so a slot's occupancy is also the
//! presence label of that category. Glyphs are 14x14 and sit one pixel inside
//! their slot box, optionally jittered by an integer offset.

mod dataset;
mod mnist;
mod probe;

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Result, UdorError};

pub use dataset::{generate_dataset, Dataset, DatasetInfo, ManifestRecord, DATASET_FORMAT};
pub use mnist::{downsample, load_source_digits, read_idx, IdxDigits};
pub use probe::{generate_probe_set, ProbeSet};

pub const GLYPH_SIZE: usize = 14;
pub const SLOT_SIZE: usize = 16;

/// Top-left corner of a slot box at zero offset.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Slot {
    pub row: usize,
    pub col: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SlotLayout {
    pub canvas_size: usize,
    pub slots: Vec<Slot>,
    /// Maximum per-axis jitter in pixels.
    pub offset_range: usize,
}

/// A square pixel region, clipped to the canvas.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct PixelBox {
    pub row: usize,
    pub col: usize,
    pub size: usize,
}

impl PixelBox {
    pub fn contains(&self, r: usize, c: usize) -> bool {
        r >= self.row && r < self.row + self.size && c >= self.col && c < self.col + self.size
    }
}

impl SlotLayout {
    /// 32x32 canvas with top-left, top-right and left-bottom slots.
    pub fn multi_mnist() -> Self {
        SlotLayout {
            canvas_size: 32,
            slots: vec![
                Slot { row: 0, col: 0 },
                Slot { row: 0, col: 16 },
                Slot { row: 16, col: 0 },
            ],
            offset_range: 0,
        }
    }

    /// Four quadrant slots on an arbitrary canvas (slots anchored at the
    /// quadrant corners, so larger canvases leave a black margin).
    pub fn quadrants(canvas_size: usize) -> Self {
        let far = canvas_size - SLOT_SIZE;
        SlotLayout {
            canvas_size,
            slots: vec![
                Slot { row: 0, col: 0 },
                Slot { row: 0, col: far },
                Slot { row: far, col: 0 },
                Slot { row: far, col: far },
            ],
            offset_range: 0,
        }
    }

    /// Two-category layout used by the object-position experiments.
    pub fn offset_pair(offset_range: usize) -> Self {
        SlotLayout {
            canvas_size: 32,
            slots: vec![Slot { row: 0, col: 0 }, Slot { row: 0, col: 16 }],
            offset_range,
        }
    }

    pub fn with_offset(mut self, offset_range: usize) -> Self {
        self.offset_range = offset_range;
        self
    }

    pub fn n_slots(&self) -> usize {
        self.slots.len()
    }

    pub fn pixels(&self) -> usize {
        self.canvas_size * self.canvas_size
    }

    pub fn validate(&self) -> Result<()> {
        if self.slots.is_empty() {
            return Err(UdorError::config("layout has no slots"));
        }
        if self.canvas_size < SLOT_SIZE {
            return Err(UdorError::config("canvas smaller than a slot"));
        }
        for (k, s) in self.slots.iter().enumerate() {
            if s.row + SLOT_SIZE > self.canvas_size || s.col + SLOT_SIZE > self.canvas_size {
                return Err(UdorError::config(format!("slot {k} exceeds the canvas")));
            }
        }
        Ok(())
    }

    /// Clamps a requested jitter so the slot box stays on the canvas.
    pub fn clamp_offset(&self, slot: usize, dr: i32, dc: i32) -> (i32, i32) {
        let s = self.slots[slot];
        let max = (self.canvas_size - SLOT_SIZE) as i32;
        let r = (s.row as i32 + dr).clamp(0, max);
        let c = (s.col as i32 + dc).clamp(0, max);
        (r - s.row as i32, c - s.col as i32)
    }

    /// Slot box after applying an (already clamped) offset.
    pub fn slot_box(&self, slot: usize, offset: (i32, i32)) -> PixelBox {
        let s = self.slots[slot];
        PixelBox {
            row: (s.row as i32 + offset.0) as usize,
            col: (s.col as i32 + offset.1) as usize,
            size: SLOT_SIZE,
        }
    }

    /// Uniform integer jitter in `[-offset_range, offset_range]` per axis, clamped.
    pub fn draw_offset<R: Rng>(&self, slot: usize, rng: &mut R) -> (i32, i32) {
        let m = self.offset_range as i32;
        let dr = rng.gen_range(-m..=m);
        let dc = rng.gen_range(-m..=m);
        self.clamp_offset(slot, dr, dc)
    }
}

/// Square 8-bit grayscale image; intensities map to `[0, 1]` as `v / 255`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct GrayImage {
    size: usize,
    pixels: Vec<u8>,
}

impl GrayImage {
    pub fn zeros(size: usize) -> Self {
        GrayImage {
            size,
            pixels: vec![0; size * size],
        }
    }

    pub fn from_raw(size: usize, pixels: Vec<u8>) -> Result<Self> {
        if pixels.len() != size * size {
            return Err(UdorError::shape(format!(
                "{} pixels for a {size}x{size} image",
                pixels.len()
            )));
        }
        Ok(GrayImage { size, pixels })
    }

    /// Quantises `[0, 1]` floats (values outside are clamped).
    pub fn from_unit_floats(size: usize, values: &[f32]) -> Result<Self> {
        let pixels = values
            .iter()
            .map(|v| (v.clamp(0.0, 1.0) * 255.0).round() as u8)
            .collect();
        Self::from_raw(size, pixels)
    }

    pub fn size(&self) -> usize {
        self.size
    }

    pub fn as_bytes(&self) -> &[u8] {
        &self.pixels
    }

    pub fn get(&self, r: usize, c: usize) -> u8 {
        self.pixels[r * self.size + c]
    }

    pub fn to_unit_floats(&self) -> Vec<f32> {
        self.pixels.iter().map(|&v| v as f32 / 255.0).collect()
    }

    pub fn sum(&self) -> u64 {
        self.pixels.iter().map(|&v| v as u64).sum()
    }

    /// Pastes a glyph with its top-left at (row, col), keeping the brighter pixel.
    fn paste_max(&mut self, glyph: &[u8], row: usize, col: usize) {
        for r in 0..GLYPH_SIZE {
            for c in 0..GLYPH_SIZE {
                let dst = &mut self.pixels[(row + r) * self.size + col + c];
                *dst = (*dst).max(glyph[r * GLYPH_SIZE + c]);
            }
        }
    }

    pub fn clear_box(&mut self, b: PixelBox) {
        for r in b.row..(b.row + b.size).min(self.size) {
            for c in b.col..(b.col + b.size).min(self.size) {
                self.pixels[r * self.size + c] = 0;
            }
        }
    }

    /// Mean intensity in `[0, 1]` over the part of the box on the canvas.
    pub fn mean_in_box(&self, b: PixelBox) -> f64 {
        let mut acc = 0u64;
        let mut n = 0u64;
        for r in b.row..(b.row + b.size).min(self.size) {
            for c in b.col..(b.col + b.size).min(self.size) {
                acc += self.pixels[r * self.size + c] as u64;
                n += 1;
            }
        }
        if n == 0 {
            0.0
        } else {
            acc as f64 / (255.0 * n as f64)
        }
    }

    pub fn save_png(&self, path: &std::path::Path) -> Result<()> {
        image::save_buffer(
            path,
            &self.pixels,
            self.size as u32,
            self.size as u32,
            image::ExtendedColorType::L8,
        )
        .map_err(|e| image_err(path, e))
    }

    pub fn load_png(path: &std::path::Path) -> Result<Self> {
        let img = image::open(path).map_err(|e| image_err(path, e))?.into_luma8();
        if img.width() != img.height() {
            return Err(UdorError::shape(format!(
                "{} is {}x{}, expected a square image",
                path.display(),
                img.width(),
                img.height()
            )));
        }
        let size = img.width() as usize;
        Self::from_raw(size, img.into_raw())
    }
}

fn image_err(path: &std::path::Path, e: image::ImageError) -> UdorError {
    match e {
        image::ImageError::IoError(io) => UdorError::io(path, io),
        other => UdorError::io(path, std::io::Error::other(other.to_string())),
    }
}

/// Environment variable naming the default data root.
pub const DATA_DIR_ENV: &str = "UDOR_DATA_DIR";

/// `$UDOR_DATA_DIR/mnist` when the variable is set, else `data/mnist`, else
/// the copy bundled with the source tree.
pub fn default_mnist_dir() -> std::path::PathBuf {
    if let Some(root) = std::env::var_os(DATA_DIR_ENV) {
        return std::path::PathBuf::from(root).join("mnist");
    }
    let local = std::path::PathBuf::from("data/mnist");
    if local.is_dir() {
        return local;
    }
    let bundled = std::path::Path::new(env!("CARGO_MANIFEST_DIR")).join("../../data/mnist");
    if bundled.is_dir() {
        bundled
    } else {
        local
    }
}

/// The all-black background image.
pub fn make_empty_image(layout: &SlotLayout) -> GrayImage {
    GrayImage::zeros(layout.canvas_size)
}

#[derive(Debug, Clone)]
pub struct Glyph {
    /// Index of the digit in the source archive.
    pub source_index: usize,
    pub label: u8,
    pub pixels: Vec<u8>,
}

/// Downsampled source glyphs, grouped by category.
#[derive(Debug, Clone)]
pub struct GlyphBank {
    pub classes: Vec<u8>,
    pub per_category: Vec<Vec<Glyph>>,
}

impl GlyphBank {
    pub fn n_categories(&self) -> usize {
        self.per_category.len()
    }

    /// Deterministic train/test split: every `every`-th glyph of a category
    /// goes to the test bank.
    pub fn split(&self, every: usize) -> (GlyphBank, GlyphBank) {
        let mut train = Vec::new();
        let mut test = Vec::new();
        for glyphs in &self.per_category {
            let (a, b): (Vec<_>, Vec<_>) = glyphs
                .iter()
                .enumerate()
                .partition(|(i, _)| i % every != every - 1);
            train.push(a.into_iter().map(|(_, g)| g.clone()).collect());
            test.push(b.into_iter().map(|(_, g)| g.clone()).collect());
        }
        (
            GlyphBank {
                classes: self.classes.clone(),
                per_category: train,
            },
            GlyphBank {
                classes: self.classes.clone(),
                per_category: test,
            },
        )
    }

    pub fn random_glyph<R: Rng>(&self, category: usize, rng: &mut R) -> &Glyph {
        let pool = &self.per_category[category];
        &pool[rng.gen_range(0..pool.len())]
    }
}

#[derive(Debug, Clone, Copy)]
pub enum SlotChoice<'a> {
    Empty,
    Glyph(&'a Glyph),
}

impl SlotChoice<'_> {
    pub fn is_occupied(&self) -> bool {
        matches!(self, SlotChoice::Glyph(_))
    }
}

/// How slot occupancy is drawn for each scene.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum OccupancyDistribution {
    /// Each slot occupied independently with probability `p`.
    Independent { p: f64 },
    /// Uniform over occupancy patterns whose object count lies in `[min_objects, max_objects]`.
    Patterns {
        min_objects: usize,
        max_objects: usize,
    },
    Fixed { pattern: Vec<bool> },
}

impl Default for OccupancyDistribution {
    fn default() -> Self {
        OccupancyDistribution::Independent { p: 0.75 }
    }
}

impl OccupancyDistribution {
    pub fn validate(&self, n_slots: usize) -> Result<()> {
        match self {
            OccupancyDistribution::Independent { p } if !(0.0..=1.0).contains(p) => {
                Err(UdorError::config(format!("occupancy probability {p} not in [0, 1]")))
            }
            OccupancyDistribution::Patterns {
                min_objects,
                max_objects,
            } if min_objects > max_objects || *max_objects > n_slots => Err(UdorError::config(
                format!("object count range [{min_objects}, {max_objects}] invalid for {n_slots} slots"),
            )),
            OccupancyDistribution::Fixed { pattern } if pattern.len() != n_slots => {
                Err(UdorError::config(format!(
                    "fixed pattern has {} entries for {n_slots} slots",
                    pattern.len()
                )))
            }
            _ => Ok(()),
        }
    }

    pub fn draw<R: Rng>(&self, n_slots: usize, rng: &mut R) -> Vec<bool> {
        match self {
            OccupancyDistribution::Independent { p } => {
                (0..n_slots).map(|_| rng.gen_bool(*p)).collect()
            }
            OccupancyDistribution::Patterns {
                min_objects,
                max_objects,
            } => {
                let patterns: Vec<u32> = (0u32..1 << n_slots)
                    .filter(|m| {
                        let c = m.count_ones() as usize;
                        c >= *min_objects && c <= *max_objects
                    })
                    .collect();
                let m = patterns[rng.gen_range(0..patterns.len())];
                (0..n_slots).map(|k| m & (1 << k) != 0).collect()
            }
            OccupancyDistribution::Fixed { pattern } => pattern.clone(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CompositeSample {
    pub image: GrayImage,
    /// 0 for an empty slot, `k + 1` when slot `k` holds a glyph of category `k`.
    pub occupancy: Vec<u8>,
    pub glyph_ids: Vec<Option<usize>>,
    pub offsets_used: Vec<(i32, i32)>,
}

/// Composes a scene from explicit per-slot offsets (clamped to the canvas).
pub fn compose_with_offsets(
    layout: &SlotLayout,
    choices: &[SlotChoice<'_>],
    offsets: &[(i32, i32)],
) -> Result<CompositeSample> {
    if choices.len() != layout.n_slots() || offsets.len() != layout.n_slots() {
        return Err(UdorError::config(format!(
            "{} choices / {} offsets for {} slots",
            choices.len(),
            offsets.len(),
            layout.n_slots()
        )));
    }
    let mut image = GrayImage::zeros(layout.canvas_size);
    let mut occupancy = Vec::with_capacity(choices.len());
    let mut glyph_ids = Vec::with_capacity(choices.len());
    let mut offsets_used = Vec::with_capacity(choices.len());
    for (k, choice) in choices.iter().enumerate() {
        match choice {
            SlotChoice::Empty => {
                occupancy.push(0);
                glyph_ids.push(None);
                offsets_used.push((0, 0));
            }
            SlotChoice::Glyph(g) => {
                if g.pixels.len() != GLYPH_SIZE * GLYPH_SIZE {
                    return Err(UdorError::shape("glyph is not 14x14"));
                }
                let off = layout.clamp_offset(k, offsets[k].0, offsets[k].1);
                let b = layout.slot_box(k, off);
                image.paste_max(&g.pixels, b.row + 1, b.col + 1);
                occupancy.push(k as u8 + 1);
                glyph_ids.push(Some(g.source_index));
                offsets_used.push(off);
            }
        }
    }
    Ok(CompositeSample {
        image,
        occupancy,
        glyph_ids,
        offsets_used,
    })
}

/// Composes a scene, drawing each slot's jitter from `rng_seed`.
pub fn compose_sample(
    layout: &SlotLayout,
    choices: &[SlotChoice<'_>],
    rng_seed: u64,
) -> Result<CompositeSample> {
    let mut rng = ChaCha8Rng::seed_from_u64(rng_seed);
    // one draw per slot, occupied or not, so a slot's jitter does not depend on
    // the occupancy of the others
    let offsets: Vec<_> = (0..layout.n_slots())
        .map(|k| layout.draw_offset(k, &mut rng))
        .collect();
    compose_with_offsets(layout, choices, &offsets)
}

/// Draws occupancy, glyphs and jitter for one scene from a single seed.
pub fn random_sample(
    layout: &SlotLayout,
    bank: &GlyphBank,
    occupancy: &OccupancyDistribution,
    seed: u64,
) -> Result<CompositeSample> {
    if bank.n_categories() < layout.n_slots() {
        return Err(UdorError::config(format!(
            "{} glyph categories for {} slots",
            bank.n_categories(),
            layout.n_slots()
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let pattern = occupancy.draw(layout.n_slots(), &mut rng);
    let choices: Vec<_> = pattern
        .iter()
        .enumerate()
        .map(|(k, &on)| {
            let g = bank.random_glyph(k, &mut rng);
            if on {
                SlotChoice::Glyph(g)
            } else {
                SlotChoice::Empty
            }
        })
        .collect();
    let offsets: Vec<_> = (0..layout.n_slots())
        .map(|k| layout.draw_offset(k, &mut rng))
        .collect();
    compose_with_offsets(layout, &choices, &offsets)
}

#[cfg(test)]
pub(crate) mod testing {
    use super::*;

    /// A bank of synthetic glyphs: category k glyphs are filled squares of
    /// brightness `40 * (k + 1) + i`.
    pub fn synthetic_bank(categories: usize, per_category: usize) -> GlyphBank {
        let per_category = (0..categories)
            .map(|k| {
                (0..per_category)
                    .map(|i| Glyph {
                        source_index: k * 1000 + i,
                        label: k as u8,
                        pixels: vec![(40 * (k + 1) + i) as u8; GLYPH_SIZE * GLYPH_SIZE],
                    })
                    .collect()
            })
            .collect();
        GlyphBank {
            classes: (0..categories as u8).collect(),
            per_category,
        }
    }
}
