//! Scoring a trained model on probe sets.

use ndarray::{Array2, Array3, Axis};
use serde::{Deserialize, Serialize};
use tch::Tensor;

use super::probe::{linear_probe_classify, SvmConfig};
use super::report::MetricReport;
use super::{best_assignment, integrity_score, modularity_score, slot_clearance, variance_ratios};
use crate::error::{Result, UdorError};
use crate::latent::reset_parts_batch;
use crate::networks::ModelBundle;
use crate::seeds;
use crate::synthdata::{
    generate_probe_set, random_sample, GlyphBank, GrayImage, OccupancyDistribution, ProbeSet, SlotLayout,
};

const EVAL_BATCH: usize = 256;

fn to_array2(t: &Tensor) -> Result<Array2<f64>> {
    let s = t.size();
    let flat: Vec<f64> = t.to_kind(tch::Kind::Double).flatten(0, -1).try_into()?;
    Ok(Array2::from_shape_vec((s[0] as usize, flat.len() / s[0].max(1) as usize), flat)
        .expect("tensor data fills its shape"))
}

/// Codes of `images` as `[N, n_parts * part_length]`.
pub fn encode_images(model: &ModelBundle, images: &[&GrayImage]) -> Result<Array2<f64>> {
    let mut out = Array2::zeros((0, model.arch.code_len() as usize));
    for chunk in images.chunks(EVAL_BATCH) {
        let x = model.images_tensor(chunk)?;
        let codes = tch::no_grad(|| model.encode(&x))?;
        out.append(Axis(0), to_array2(&codes)?.view())
            .expect("code widths agree");
    }
    Ok(out)
}

/// Decodes each image's code with part `parts[i]` reset to the empty code;
/// returns `[N, pixels]` in `[0, 1]`.
pub fn removal_reconstructions(model: &ModelBundle, images: &[&GrayImage], parts: &[usize]) -> Result<Array2<f64>> {
    if images.len() != parts.len() {
        return Err(UdorError::shape("one removal index per image"));
    }
    let n = model.arch.n_parts as usize;
    if let Some(&p) = parts.iter().find(|&&p| p >= n) {
        return Err(UdorError::Index { index: p, len: n });
    }
    let px = (model.arch.image_size * model.arch.image_size) as usize;
    let mut out = Array2::zeros((0, px));
    tch::no_grad(|| -> Result<()> {
        let empty = model.encode(&model.empty_image_tensor())?;
        for (imgs, ps) in images.chunks(EVAL_BATCH).zip(parts.chunks(EVAL_BATCH)) {
            let codes = model.encode(&model.images_tensor(imgs)?)?;
            let sets: Vec<Vec<usize>> = ps.iter().map(|&p| vec![p]).collect();
            let recon = model.decode(&reset_parts_batch(&codes, &sets, &empty, n))?;
            out.append(Axis(0), to_array2(&recon)?.view()).expect("pixel counts agree");
        }
        Ok(())
    })?;
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DisassemblyScores {
    pub modularity: f64,
    pub integrity: f64,
    /// Mean intensity of the fixed object's box in the probe images.
    pub clearance_before: f64,
    /// The same after resetting the evaluated part.
    pub clearance_after: f64,
}

fn scores_from_codes(model: &ModelBundle, probe: &ProbeSet, codes: &Array2<f64>, part: usize) -> Result<DisassemblyScores> {
    let n = model.arch.n_parts as usize;
    if part >= n {
        return Err(UdorError::Index { index: part, len: n });
    }
    let len = model.arch.part_length as usize;
    let (t, d) = (probe.groups, probe.per_group);
    let z = codes
        .slice(ndarray::s![.., part * len..(part + 1) * len])
        .to_owned()
        .into_shape_with_order((t, d, len))
        .expect("probe codes are group-major");
    let images: Vec<&GrayImage> = probe.samples.iter().map(|s| &s.image).collect();
    let recon = removal_reconstructions(model, &images, &vec![part; images.len()])?;
    let size = probe.layout.canvas_size;
    let truth: Vec<f64> = probe
        .ground_truth
        .iter()
        .flat_map(|g| g.to_unit_floats().into_iter().map(f64::from))
        .collect();
    let truth = Array3::from_shape_vec((t, d, size * size), truth).expect("ground truth is group-major");
    let recon3 = recon
        .clone()
        .into_shape_with_order((t, d, size * size))
        .expect("reconstructions are group-major");

    let mut before = 0.0;
    let mut after = 0.0;
    for (i, (sample, b)) in probe.samples.iter().zip(&probe.fixed_boxes).enumerate() {
        let orig = ndarray::Array2::from_shape_vec((size, size), sample.image.to_unit_floats()).expect("square image");
        before += slot_clearance(orig.view(), *b);
        let r = recon.row(i).mapv(|v| v as f32).into_shape_with_order((size, size)).expect("square image");
        after += slot_clearance(r.view(), *b);
    }
    let count = probe.samples.len() as f64;
    Ok(DisassemblyScores {
        modularity: modularity_score(z.view())?,
        integrity: integrity_score(recon3.view(), truth.view())?,
        clearance_before: before / count,
        clearance_after: after / count,
    })
}

/// M and V for one probe set, reading the fixed object from `fixed_part`.
pub fn evaluate_disassembly(model: &ModelBundle, probe: &ProbeSet, fixed_part: usize) -> Result<DisassemblyScores> {
    let images: Vec<&GrayImage> = probe.samples.iter().map(|s| &s.image).collect();
    let codes = encode_images(model, &images)?;
    scores_from_codes(model, probe, &codes, fixed_part)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EvalOptions {
    /// `T`: fixed objects per slot.
    pub groups: usize,
    /// `D`: scenes per fixed object.
    pub per_group: usize,
    pub seed: u64,
    /// Scenes used to fit the linear probe (0 skips the probe).
    pub probe_train: usize,
    pub probe_test: usize,
    pub svm: SvmConfig,
}

impl Default for EvalOptions {
    fn default() -> Self {
        EvalOptions {
            groups: 50,
            per_group: 10,
            seed: 0,
            probe_train: 2000,
            probe_test: 1000,
            svm: SvmConfig::default(),
        }
    }
}

impl EvalOptions {
    pub fn validate(&self) -> Result<()> {
        if self.groups == 0 || self.per_group == 0 {
            return Err(UdorError::config("T and D must be >= 1"));
        }
        if self.per_group < 2 {
            return Err(UdorError::config("D must be >= 2 to identify the part of a slot"));
        }
        if (self.probe_train == 0) != (self.probe_test == 0) {
            return Err(UdorError::config("probe_train and probe_test must both be zero or both positive"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SlotScores {
    pub slot: usize,
    /// Part identified for this slot.
    pub part: usize,
    pub learned: DisassemblyScores,
    /// Scores reading part `slot` (part k ↔ category k).
    pub identity: DisassemblyScores,
}

fn labelled_scenes(
    layout: &SlotLayout,
    bank: &GlyphBank,
    count: usize,
    seed: u64,
    label: &str,
) -> Result<(Vec<GrayImage>, Array2<u8>)> {
    let occ = OccupancyDistribution::default();
    let n = layout.n_slots();
    let mut images = Vec::with_capacity(count);
    let mut labels = Array2::zeros((count, n));
    for i in 0..count {
        let s = random_sample(layout, bank, &occ, seeds::derive_seed(seed, label, i as u64))?;
        labels.row_mut(i).assign(&ndarray::ArrayView1::from(&s.occupancy));
        images.push(s.image);
    }
    Ok((images, labels))
}

/// Full evaluation: a probe set per slot, slot↔part identification, M and V
/// under the identified and the identity map, and the linear probe.
///
/// Probe sets and probe test scenes use `test_bank`; the probe classifiers are
/// fitted on scenes from `train_bank`.
pub fn evaluate_model(
    model: &ModelBundle,
    layout: &SlotLayout,
    train_bank: &GlyphBank,
    test_bank: &GlyphBank,
    opts: &EvalOptions,
) -> Result<MetricReport> {
    opts.validate()?;
    let n = layout.n_slots();
    if n != model.arch.n_parts as usize {
        return Err(UdorError::config(format!(
            "layout has {n} slots, model has {} parts",
            model.arch.n_parts
        )));
    }
    if layout.canvas_size as i64 != model.arch.image_size {
        return Err(UdorError::config("layout canvas and model image size differ"));
    }
    let others = OccupancyDistribution::default();
    let mut probes = Vec::with_capacity(n);
    let mut codes = Vec::with_capacity(n);
    for s in 0..n {
        let probe = generate_probe_set(
            layout,
            test_bank,
            opts.groups,
            opts.per_group,
            s,
            &others,
            seeds::derive_seed(opts.seed, "probe-set", s as u64),
        )?;
        let images: Vec<&GrayImage> = probe.samples.iter().map(|x| &x.image).collect();
        codes.push(encode_images(model, &images)?);
        probes.push(probe);
    }
    let width = model.arch.code_len() as usize;
    let views: Vec<Array3<f64>> = codes
        .iter()
        .map(|c| {
            c.clone()
                .into_shape_with_order((opts.groups, opts.per_group, width))
                .expect("probe codes are group-major")
        })
        .collect();
    let view_refs: Vec<_> = views.iter().map(|v| v.view()).collect();
    let ratios = variance_ratios(&view_refs, n)?;
    let greedy = super::argmin_rows(&ratios);
    let mut sorted = greedy.clone();
    sorted.sort_unstable();
    sorted.dedup();
    let degenerate = sorted.len() != greedy.len();
    let mapping = if degenerate { best_assignment(&ratios) } else { greedy };
    if degenerate {
        log::warn!("slot-to-part map collides ({:?}); using the best injective assignment {:?}", super::argmin_rows(&ratios), mapping);
    }

    let mut slots = Vec::with_capacity(n);
    for s in 0..n {
        let learned = scores_from_codes(model, &probes[s], &codes[s], mapping[s])?;
        let identity = if mapping[s] == s {
            learned
        } else {
            scores_from_codes(model, &probes[s], &codes[s], s)?
        };
        slots.push(SlotScores {
            slot: s,
            part: mapping[s],
            learned,
            identity,
        });
    }

    let classification = if opts.probe_train > 0 {
        let (train_imgs, train_labels) = labelled_scenes(layout, train_bank, opts.probe_train, opts.seed, "probe-train")?;
        let (test_imgs, test_labels) = labelled_scenes(layout, test_bank, opts.probe_test, opts.seed, "probe-test")?;
        let train_codes = encode_images(model, &train_imgs.iter().collect::<Vec<_>>())?;
        let test_codes = encode_images(model, &test_imgs.iter().collect::<Vec<_>>())?;
        Some(linear_probe_classify(
            train_codes.view(),
            train_labels.view(),
            test_codes.view(),
            test_labels.view(),
            &mapping,
            &opts.svm,
        )?)
    } else {
        None
    };

    Ok(MetricReport::assemble(
        &model.arch,
        layout,
        opts,
        mapping,
        degenerate,
        ratios.outer_iter().map(|r| r.to_vec()).collect(),
        slots,
        classification,
    ))
}
