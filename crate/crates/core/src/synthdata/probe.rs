//! Probe sets: groups of scenes that share one fixed object.

use super::{
    compose_with_offsets, CompositeSample, GlyphBank, GrayImage, OccupancyDistribution, PixelBox,
    SlotChoice, SlotLayout,
};
use crate::error::{Result, UdorError};
use crate::seeds;

/// `groups * per_group` scenes stored group-major. Within a group the glyph and
/// position in `fixed_slot` never change; every other slot is resampled.
#[derive(Debug, Clone)]
pub struct ProbeSet {
    pub layout: SlotLayout,
    pub groups: usize,
    pub per_group: usize,
    pub fixed_slot: usize,
    pub samples: Vec<CompositeSample>,
    /// Probe image with the fixed slot's box blacked out.
    pub ground_truth: Vec<GrayImage>,
    /// The (jittered) box of the fixed object in each scene.
    pub fixed_boxes: Vec<PixelBox>,
}

impl ProbeSet {
    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn sample(&self, t: usize, d: usize) -> &CompositeSample {
        &self.samples[t * self.per_group + d]
    }
}

pub fn generate_probe_set(
    layout: &SlotLayout,
    bank: &GlyphBank,
    groups: usize,
    per_group: usize,
    fixed_slot: usize,
    others: &OccupancyDistribution,
    seed: u64,
) -> Result<ProbeSet> {
    if groups == 0 || per_group == 0 {
        return Err(UdorError::config("probe sets need T >= 1 and D >= 1"));
    }
    if fixed_slot >= layout.n_slots() {
        return Err(UdorError::config(format!(
            "fixed slot {fixed_slot} out of range for {} slots",
            layout.n_slots()
        )));
    }
    layout.validate()?;
    others.validate(layout.n_slots())?;
    let n = layout.n_slots();

    let mut samples = Vec::with_capacity(groups * per_group);
    let mut ground_truth = Vec::with_capacity(groups * per_group);
    let mut fixed_boxes = Vec::with_capacity(groups * per_group);
    for t in 0..groups {
        let mut group_rng = seeds::stream(seed, "probe-fixed", t as u64);
        let fixed_glyph = bank.random_glyph(fixed_slot, &mut group_rng);
        let fixed_offset = layout.draw_offset(fixed_slot, &mut group_rng);

        for d in 0..per_group {
            let mut rng = seeds::stream(seed, "probe-sample", (t * per_group + d) as u64);
            let pattern = others.draw(n, &mut rng);
            let mut choices = Vec::with_capacity(n);
            let mut offsets = Vec::with_capacity(n);
            for k in 0..n {
                let g = bank.random_glyph(k, &mut rng);
                let off = layout.draw_offset(k, &mut rng);
                if k == fixed_slot {
                    choices.push(SlotChoice::Glyph(fixed_glyph));
                    offsets.push(fixed_offset);
                } else {
                    choices.push(if pattern[k] {
                        SlotChoice::Glyph(g)
                    } else {
                        SlotChoice::Empty
                    });
                    offsets.push(off);
                }
            }
            let sample = compose_with_offsets(layout, &choices, &offsets)?;
            let b = layout.slot_box(fixed_slot, sample.offsets_used[fixed_slot]);
            let mut truth = sample.image.clone();
            truth.clear_box(b);
            samples.push(sample);
            ground_truth.push(truth);
            fixed_boxes.push(b);
        }
    }
    Ok(ProbeSet {
        layout: layout.clone(),
        groups,
        per_group,
        fixed_slot,
        samples,
        ground_truth,
        fixed_boxes,
    })
}
