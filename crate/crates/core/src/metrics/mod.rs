//! Modularity and integrity scores, slot↔part identification, slot clearance
//! and the linear-probe classification scores.

mod eval;
mod probe;
mod report;

use ndarray::{Array2, ArrayView2, ArrayView3, Axis};

pub use eval::{
    encode_images, evaluate_disassembly, evaluate_model, removal_reconstructions, DisassemblyScores,
    EvalOptions, SlotScores,
};
pub use probe::{linear_probe_classify, multilabel_scores, ClassificationScores, LinearSvm, SvmConfig};
pub use report::{MetricReport, CSV_HEADER};

use crate::error::{Result, UdorError};
use crate::synthdata::PixelBox;

/// `M = 1/(T D) sum_t sum_d sum_i |z[t,d,i] - mean_d z[t,·,i]|` for codes of
/// shape `[T, D, part_length]`.
pub fn modularity_score(codes: ArrayView3<f64>) -> Result<f64> {
    let (t, d, _) = codes.dim();
    if t == 0 || d == 0 {
        return Err(UdorError::config("modularity needs T >= 1 and D >= 1"));
    }
    let mean = codes.mean_axis(Axis(1)).expect("D > 0");
    let dev = &codes - &mean.insert_axis(Axis(1));
    Ok(dev.mapv(f64::abs).sum() / (t * d) as f64)
}

/// `V = 1/(T D W) sum |truth - recon|` for images of shape `[T, D, W]`
/// (`W` pixels per image, flattened).
pub fn integrity_score(recon: ArrayView3<f64>, truth: ArrayView3<f64>) -> Result<f64> {
    if recon.dim() != truth.dim() {
        return Err(UdorError::shape(format!(
            "reconstructions {:?} vs ground truth {:?}",
            recon.dim(),
            truth.dim()
        )));
    }
    let (t, d, w) = recon.dim();
    if t == 0 || d == 0 || w == 0 {
        return Err(UdorError::config("integrity needs T, D >= 1 and non-empty images"));
    }
    Ok((&truth - &recon).mapv(f64::abs).sum() / (t * d * w) as f64)
}

/// Mean pixel intensity of `image` inside `b`.
pub fn slot_clearance(image: ArrayView2<f32>, b: PixelBox) -> f64 {
    let view = image.slice(ndarray::s![b.row..b.row + b.size, b.col..b.col + b.size]);
    view.iter().map(|&v| v as f64).sum::<f64>() / (b.size * b.size) as f64
}

/// Within-group over total variance of every part, per probed slot.
///
/// `codes[s]` holds `[T, D, n_parts * part_length]` codes of the probe set
/// that fixes slot `s`. Entry `(s, p)` is near 0 when part `p` stays constant
/// while slot `s` is fixed and everything else varies.
pub fn variance_ratios(codes: &[ArrayView3<f64>], n_parts: usize) -> Result<Array2<f64>> {
    let mut out = Array2::zeros((codes.len(), n_parts));
    for (s, c) in codes.iter().enumerate() {
        let (t, d, width) = c.dim();
        if t == 0 || d < 2 || width % n_parts != 0 {
            return Err(UdorError::shape(format!(
                "probe codes {:?} for {n_parts} parts (need D >= 2)",
                c.dim()
            )));
        }
        let len = width / n_parts;
        for p in 0..n_parts {
            let part = c.slice(ndarray::s![.., .., p * len..(p + 1) * len]);
            let group_mean = part.mean_axis(Axis(1)).expect("D > 0").insert_axis(Axis(1));
            let within = (&part - &group_mean).mapv(|v| v * v).sum();
            let flat = part.to_shape((t * d, len)).expect("contiguous slice reshapes");
            let total_mean = flat.mean_axis(Axis(0)).expect("T*D > 0");
            let total = (&flat - &total_mean).mapv(|v| v * v).sum();
            out[[s, p]] = if total > 0.0 { within / total } else { 1.0 };
        }
    }
    Ok(out)
}

/// Slot→part map: each slot takes the part with the smallest variance ratio.
/// Two slots choosing the same part is a [`UdorError::Degenerate`].
pub fn which_part_maps_to_slot(codes: &[ArrayView3<f64>], n_parts: usize) -> Result<Vec<usize>> {
    let ratios = variance_ratios(codes, n_parts)?;
    let map = argmin_rows(&ratios);
    for (a, &pa) in map.iter().enumerate() {
        if let Some(b) = map[a + 1..].iter().position(|&pb| pb == pa) {
            return Err(UdorError::Degenerate(format!(
                "slots {a} and {} both map to part {pa}",
                a + 1 + b
            )));
        }
    }
    Ok(map)
}

fn argmin_rows(m: &Array2<f64>) -> Vec<usize> {
    m.rows()
        .into_iter()
        .map(|r| {
            r.iter()
                .enumerate()
                .min_by(|a, b| a.1.total_cmp(b.1))
                .map(|(i, _)| i)
                .expect("non-empty row")
        })
        .collect()
}

/// Injective slot→part map minimising the summed ratios (exhaustive search).
pub fn best_assignment(ratios: &Array2<f64>) -> Vec<usize> {
    let (slots, parts) = ratios.dim();
    assert!(slots <= parts, "more slots than parts");
    fn go(r: &Array2<f64>, s: usize, used: &mut Vec<bool>, cur: &mut Vec<usize>, best: &mut (f64, Vec<usize>), acc: f64) {
        if acc >= best.0 {
            return;
        }
        if s == r.nrows() {
            *best = (acc, cur.clone());
            return;
        }
        for p in 0..r.ncols() {
            if !used[p] {
                used[p] = true;
                cur.push(p);
                go(r, s + 1, used, cur, best, acc + r[[s, p]]);
                cur.pop();
                used[p] = false;
            }
        }
    }
    let mut best = (f64::INFINITY, (0..slots).collect());
    go(ratios, 0, &mut vec![false; parts], &mut Vec::new(), &mut best, 0.0);
    best.1
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::{Array3, Array};

    #[test]
    fn modularity_hand_value() {
        let z = Array3::from_shape_vec((1, 2, 2), vec![0.0, 0.0, 2.0, 2.0]).unwrap();
        assert_eq!(modularity_score(z.view()).unwrap(), 2.0);
        let same = Array3::from_elem((3, 4, 5), 1.5);
        assert_eq!(modularity_score(same.view()).unwrap(), 0.0);
        assert!(modularity_score(Array3::<f64>::zeros((0, 2, 2)).view()).is_err());
    }

    #[test]
    fn integrity_constant_difference() {
        let a = Array3::<f64>::zeros((2, 3, 16));
        let b = Array3::<f64>::ones((2, 3, 16));
        assert_eq!(integrity_score(a.view(), b.view()).unwrap(), 1.0);
        assert_eq!(integrity_score(a.view(), a.view()).unwrap(), 0.0);
        assert!(integrity_score(a.view(), Array3::zeros((2, 3, 15)).view()).is_err());
    }

    #[test]
    fn clearance_of_black_and_white() {
        let mut img = Array::zeros((32, 32));
        let b = PixelBox { row: 16, col: 0, size: 16 };
        assert_eq!(slot_clearance(img.view(), b), 0.0);
        img.slice_mut(ndarray::s![16.., ..16]).fill(1.0f32);
        assert_eq!(slot_clearance(img.view(), b), 1.0);
    }

    #[test]
    fn assignment_prefers_lowest_total() {
        let r = ndarray::arr2(&[[0.1, 0.2, 0.9], [0.05, 0.9, 0.9], [0.9, 0.9, 0.3]]);
        assert_eq!(argmin_rows(&r), vec![0, 0, 2]);
        assert_eq!(best_assignment(&r), vec![1, 0, 2]);
    }
}
