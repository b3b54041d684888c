//! Linear probe: a linear max-margin classifier per latent part, scored as a
//! multi-label problem over the object categories.

use ndarray::{Array1, Array2, ArrayView1, ArrayView2, Axis};
use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::error::{Result, UdorError};
use crate::seeds;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SvmConfig {
    /// Soft-margin penalty.
    pub c: f64,
    pub max_epochs: usize,
    /// Stop when the projected-gradient spread drops below this.
    pub tol: f64,
    pub seed: u64,
}

impl Default for SvmConfig {
    fn default() -> Self {
        SvmConfig {
            c: 1.0,
            max_epochs: 500,
            tol: 1e-3,
            seed: 0,
        }
    }
}

/// Binary hinge-loss SVM trained by dual coordinate descent on standardised
/// features, with the bias folded in as a constant feature.
#[derive(Debug, Clone)]
pub struct LinearSvm {
    mean: Array1<f64>,
    scale: Array1<f64>,
    /// Weights on standardised features; the last entry is the bias.
    w: Array1<f64>,
}

impl LinearSvm {
    pub fn fit(x: ArrayView2<f64>, y: &[bool], cfg: &SvmConfig) -> Result<Self> {
        let (n, dim) = x.dim();
        if n != y.len() || n == 0 {
            return Err(UdorError::shape(format!("{n} rows for {} labels", y.len())));
        }
        let mean = x.mean_axis(Axis(0)).expect("n > 0");
        let scale = x.std_axis(Axis(0), 0.0).mapv(|s| if s > 1e-12 { s } else { 1.0 });
        let mut z = Array2::ones((n, dim + 1));
        z.slice_mut(ndarray::s![.., ..dim]).assign(&((&x - &mean) / &scale));
        let sign: Vec<f64> = y.iter().map(|&p| if p { 1.0 } else { -1.0 }).collect();
        let q: Vec<f64> = z.rows().into_iter().map(|r| r.dot(&r)).collect();

        let mut alpha = vec![0.0; n];
        let mut w = Array1::<f64>::zeros(dim + 1);
        let mut order: Vec<usize> = (0..n).collect();
        let mut rng = seeds::stream(cfg.seed, "svm", 0);
        for _ in 0..cfg.max_epochs {
            order.shuffle(&mut rng);
            let (mut pg_max, mut pg_min) = (f64::NEG_INFINITY, f64::INFINITY);
            for &i in &order {
                let row = z.row(i);
                let g = sign[i] * w.dot(&row) - 1.0;
                let pg = if alpha[i] <= 0.0 {
                    g.min(0.0)
                } else if alpha[i] >= cfg.c {
                    g.max(0.0)
                } else {
                    g
                };
                pg_max = pg_max.max(pg);
                pg_min = pg_min.min(pg);
                if pg.abs() > 1e-12 {
                    let old = alpha[i];
                    alpha[i] = (old - g / q[i]).clamp(0.0, cfg.c);
                    w.scaled_add((alpha[i] - old) * sign[i], &row);
                }
            }
            if pg_max - pg_min < cfg.tol {
                break;
            }
        }
        Ok(LinearSvm { mean, scale, w })
    }

    pub fn decision(&self, x: ArrayView2<f64>) -> Array1<f64> {
        let dim = self.mean.len();
        let z = (&x - &self.mean) / &self.scale;
        z.dot(&self.w.slice(ndarray::s![..dim])) + self.w[dim]
    }
}

/// One-vs-rest over the classes seen in training.
struct OneVsRest {
    classes: Vec<u8>,
    models: Vec<LinearSvm>,
}

impl OneVsRest {
    fn fit(x: ArrayView2<f64>, labels: ArrayView1<u8>, cfg: &SvmConfig) -> Result<Self> {
        let mut classes: Vec<u8> = labels.to_vec();
        classes.sort_unstable();
        classes.dedup();
        if classes.len() < 2 {
            return Err(UdorError::config(format!(
                "linear probe training data has a single class {:?}",
                classes
            )));
        }
        let models = classes
            .iter()
            .map(|&c| {
                let y: Vec<bool> = labels.iter().map(|&l| l == c).collect();
                LinearSvm::fit(x, &y, cfg)
            })
            .collect::<Result<_>>()?;
        Ok(OneVsRest { classes, models })
    }

    fn predict(&self, x: ArrayView2<f64>) -> Vec<u8> {
        let scores: Vec<Array1<f64>> = self.models.iter().map(|m| m.decision(x)).collect();
        (0..x.nrows())
            .map(|i| {
                let best = (0..self.classes.len())
                    .max_by(|&a, &b| scores[a][i].total_cmp(&scores[b][i]))
                    .expect("at least two classes");
                self.classes[best]
            })
            .collect()
    }
}

/// Classification scores in percent.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ClassificationScores {
    pub per_class_precision: f64,
    pub per_class_recall: f64,
    pub overall_precision: f64,
    pub overall_recall: f64,
    pub micro_f1: f64,
    pub macro_f1: f64,
}

fn ratio(num: usize, den: usize) -> f64 {
    if den == 0 {
        0.0
    } else {
        num as f64 / den as f64
    }
}

fn harmonic(a: f64, b: f64) -> f64 {
    if a + b == 0.0 {
        0.0
    } else {
        2.0 * a * b / (a + b)
    }
}

/// Multi-label scores for `[N, categories]` presence matrices. Precision with
/// no predicted positives (or recall with no true positives) counts as 0.
pub fn multilabel_scores(truth: ArrayView2<bool>, pred: ArrayView2<bool>) -> Result<ClassificationScores> {
    if truth.dim() != pred.dim() || truth.ncols() == 0 {
        return Err(UdorError::shape(format!("truth {:?} vs predictions {:?}", truth.dim(), pred.dim())));
    }
    let mut tp_all = 0;
    let mut pp_all = 0;
    let mut ap_all = 0;
    let mut p_sum = 0.0;
    let mut r_sum = 0.0;
    for c in 0..truth.ncols() {
        let (t, p) = (truth.column(c), pred.column(c));
        let tp = t.iter().zip(p).filter(|(&a, &b)| a && b).count();
        let pp = p.iter().filter(|&&b| b).count();
        let ap = t.iter().filter(|&&a| a).count();
        p_sum += ratio(tp, pp);
        r_sum += ratio(tp, ap);
        tp_all += tp;
        pp_all += pp;
        ap_all += ap;
    }
    let k = truth.ncols() as f64;
    let (cp, cr) = (p_sum / k, r_sum / k);
    let (op, or) = (ratio(tp_all, pp_all), ratio(tp_all, ap_all));
    Ok(ClassificationScores {
        per_class_precision: 100.0 * cp,
        per_class_recall: 100.0 * cr,
        overall_precision: 100.0 * op,
        overall_recall: 100.0 * or,
        micro_f1: 100.0 * harmonic(op, or),
        macro_f1: 100.0 * harmonic(cp, cr),
    })
}

/// Trains one classifier per part on frozen codes and scores it on held-out
/// codes.
///
/// Labels are `[N, n]` slot labels (0 empty, `k + 1` for category `k`).
/// The part mapped to slot `s` learns that slot's label; a sample's predicted
/// category set is the union of the parts' non-empty predictions.
pub fn linear_probe_classify(
    train_codes: ArrayView2<f64>,
    train_labels: ArrayView2<u8>,
    test_codes: ArrayView2<f64>,
    test_labels: ArrayView2<u8>,
    slot_to_part: &[usize],
    cfg: &SvmConfig,
) -> Result<ClassificationScores> {
    let n = train_labels.ncols();
    if slot_to_part.len() != n || test_labels.ncols() != n {
        return Err(UdorError::shape("slot map and label widths disagree"));
    }
    if train_codes.nrows() != train_labels.nrows() || test_codes.nrows() != test_labels.nrows() {
        return Err(UdorError::shape("codes and labels have different row counts"));
    }
    if train_codes.ncols() != test_codes.ncols() || train_codes.ncols() % n != 0 {
        return Err(UdorError::shape("code width does not split into the slot count"));
    }
    let len = train_codes.ncols() / n;
    let mut pred = Array2::from_elem((test_codes.nrows(), n), false);
    for (s, &p) in slot_to_part.iter().enumerate() {
        if p >= n {
            return Err(UdorError::Index { index: p, len: n });
        }
        let cols = ndarray::s![.., p * len..(p + 1) * len];
        let model = OneVsRest::fit(
            train_codes.slice(cols),
            train_labels.column(s),
            &SvmConfig {
                seed: seeds::derive_seed(cfg.seed, "probe-part", s as u64),
                ..*cfg
            },
        )?;
        for (i, label) in model.predict(test_codes.slice(cols)).into_iter().enumerate() {
            if label > 0 && (label as usize) <= n {
                pred[[i, label as usize - 1]] = true;
            }
        }
    }
    let truth = test_labels.mapv(|l| l > 0);
    // a label k + 1 in slot s always means category s
    multilabel_scores(truth.view(), pred.view())
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    #[test]
    fn separable_data_is_learned() {
        let mut rng = seeds::stream(1, "t", 0);
        let x = Array2::from_shape_fn((200, 3), |_| rng.gen_range(-1.0..1.0));
        let y: Vec<bool> = x.rows().into_iter().map(|r| r[0] + 0.5 * r[1] > 0.1).collect();
        let svm = LinearSvm::fit(x.view(), &y, &SvmConfig { c: 100.0, ..Default::default() }).unwrap();
        let d = svm.decision(x.view());
        let errors = d.iter().zip(&y).filter(|(&s, &l)| (s > 0.0) != l).count();
        assert!(errors <= 2, "{errors} training errors");
    }

    #[test]
    fn hand_counted_scores() {
        // category 0: tp 1, fp 1, fn 0; category 1: tp 1, fp 0, fn 1
        let truth = ndarray::arr2(&[[true, true], [false, true], [true, false]]);
        let pred = ndarray::arr2(&[[true, true], [true, false], [false, false]]);
        let s = multilabel_scores(truth.view(), pred.view()).unwrap();
        assert!((s.overall_precision - 200.0 / 3.0).abs() < 1e-9);
        assert!((s.overall_recall - 50.0).abs() < 1e-9);
        assert!((s.per_class_precision - 75.0).abs() < 1e-9);
        assert!((s.per_class_recall - 50.0).abs() < 1e-9);
        let micro = 2.0 * (2.0 / 3.0) * 0.5 / (2.0 / 3.0 + 0.5) * 100.0;
        assert!((s.micro_f1 - micro).abs() < 1e-9);
        assert!((s.macro_f1 - 60.0).abs() < 1e-9);
    }

    #[test]
    fn single_class_is_a_config_error() {
        let x = Array2::<f64>::zeros((10, 4));
        let labels = Array2::<u8>::zeros((10, 2));
        let r = linear_probe_classify(x.view(), labels.view(), x.view(), labels.view(), &[0, 1], &SvmConfig::default());
        assert!(matches!(r, Err(UdorError::Config(_))));
    }
}
