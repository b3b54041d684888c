mod common;

use ndarray::{Array2, Array3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use tch::Device;
use udor_core::metrics::{
    evaluate_model, integrity_score, linear_probe_classify, which_part_maps_to_slot, EvalOptions, SvmConfig,
};
use udor_core::networks::ModelBundle;
use udor_core::synthdata::{generate_probe_set, OccupancyDistribution, SlotLayout};

#[test]
fn identity_stub_integrity_is_the_mean_slot_ink() {
    let bank = common::digits(&[0, 1, 2]);
    let layout = SlotLayout::multi_mnist();
    let (t, d) = (6, 5);
    for slot in 0..3 {
        let probe = generate_probe_set(&layout, &bank, t, d, slot, &OccupancyDistribution::default(), 40 + slot as u64).unwrap();
        let w = layout.pixels();
        let flat = |imgs: Vec<Vec<f32>>| {
            Array3::from_shape_vec((t, d, w), imgs.into_iter().flatten().map(f64::from).collect()).unwrap()
        };
        // decode(reset(encode(I))) = I for the stub; pixels pass through f32
        let recon = flat(probe.samples.iter().map(|s| s.image.to_unit_floats()).collect());
        let truth = flat(probe.ground_truth.iter().map(|g| g.to_unit_floats()).collect());
        let v = integrity_score(recon.view(), truth.view()).unwrap();

        let mut ink = 0.0;
        for (s, b) in probe.samples.iter().zip(&probe.fixed_boxes) {
            let mut sum = 0.0;
            for r in b.row..b.row + b.size {
                for c in b.col..b.col + b.size {
                    sum += s.image.get(r, c) as f64 / 255.0;
                }
            }
            ink += sum / w as f64;
        }
        ink /= (t * d) as f64;
        assert!((v - ink).abs() < 1e-6, "slot {slot}: V {v} vs ink {ink}");
        assert!(v > 0.0);
    }
}

#[test]
fn relabelled_parts_permute_the_slot_map() {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    for _ in 0..50 {
        let n = rng.gen_range(2..=5);
        let len = rng.gen_range(1..=4);
        let perm: Vec<usize> = {
            let mut p: Vec<usize> = (0..n).collect();
            for i in (1..n).rev() {
                p.swap(i, rng.gen_range(0..=i));
            }
            p
        };
        let codes = common::criteria::oracle_codes(&mut rng, &(0..n).collect::<Vec<_>>(), n, 3, 4, len);
        let views: Vec<_> = codes.iter().map(|c| c.view()).collect();
        assert_eq!(which_part_maps_to_slot(&views, n).unwrap(), (0..n).collect::<Vec<_>>());
        // move part p to position perm[p]
        let moved: Vec<Array3<f64>> = codes
            .iter()
            .map(|c| {
                let mut out = c.clone();
                for p in 0..n {
                    out.slice_mut(ndarray::s![.., .., perm[p] * len..(perm[p] + 1) * len])
                        .assign(&c.slice(ndarray::s![.., .., p * len..(p + 1) * len]));
                }
                out
            })
            .collect();
        let views: Vec<_> = moved.iter().map(|c| c.view()).collect();
        assert_eq!(which_part_maps_to_slot(&views, n).unwrap(), perm);
    }
}

#[test]
fn untrained_model_scores_are_finite() {
    let arch = common::tiny_arch(3, 5);
    let model = ModelBundle::new(&arch, 1, Device::Cpu).unwrap();
    let (train, test) = common::digits(&[0, 1, 2]).split(5);
    let opts = EvalOptions {
        groups: 3,
        per_group: 4,
        probe_train: 60,
        probe_test: 40,
        ..Default::default()
    };
    let r = evaluate_model(&model, &SlotLayout::multi_mnist(), &train, &test, &opts).unwrap();
    assert!(r.modularity.is_finite() && r.modularity >= 0.0);
    assert!(r.integrity.is_finite() && r.integrity >= 0.0);
    let f1 = r.micro_f1.unwrap();
    assert!((0.0..=100.0).contains(&f1));
    let mut sorted = r.slot_to_part.clone();
    sorted.sort_unstable();
    assert_eq!(sorted, vec![0, 1, 2]);
}

fn labelled_codes(rng: &mut ChaCha8Rng, rows: usize, n: usize, len: usize, p: f64, informative: bool) -> (Array2<f64>, Array2<u8>) {
    let labels = Array2::from_shape_fn((rows, n), |(_, s)| if rng.gen_bool(p) { s as u8 + 1 } else { 0 });
    let codes = Array2::from_shape_fn((rows, n * len), |(i, j)| {
        let noise: f64 = rng.gen_range(-1.0..1.0);
        if informative && j % len == 0 {
            // first coordinate of part s carries slot s's presence
            noise * 0.2 + if labels[[i, j / len]] > 0 { 2.0 } else { -2.0 }
        } else {
            noise
        }
    });
    (codes, labels)
}

#[test]
fn separable_codes_score_100() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let (xa, ya) = labelled_codes(&mut rng, 400, 3, 4, 0.6, true);
    let (xb, yb) = labelled_codes(&mut rng, 300, 3, 4, 0.6, true);
    let s = linear_probe_classify(xa.view(), ya.view(), xb.view(), yb.view(), &[0, 1, 2], &SvmConfig::default()).unwrap();
    for v in [s.per_class_precision, s.per_class_recall, s.overall_precision, s.overall_recall, s.micro_f1, s.macro_f1] {
        assert!((v - 100.0).abs() < 1e-9, "{s:?}");
    }
}

#[test]
fn shuffled_labels_score_at_chance() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let (xa, mut ya) = labelled_codes(&mut rng, 1500, 3, 4, 0.6, true);
    // break the code/label pairing
    for i in (1..ya.nrows()).rev() {
        let j = rng.gen_range(0..=i);
        for c in 0..3 {
            ya.swap([i, c], [j, c]);
        }
    }
    let (xb, yb) = labelled_codes(&mut rng, 3000, 3, 4, 0.6, true);
    let s = linear_probe_classify(xa.view(), ya.view(), xb.view(), yb.view(), &[0, 1, 2], &SvmConfig::default()).unwrap();
    // any predictor independent of the truth has precision equal to the base rate
    let base = 100.0 * yb.iter().filter(|&&l| l > 0).count() as f64 / yb.len() as f64;
    assert!((s.overall_precision - base).abs() < 4.0, "{s:?} vs base rate {base}");
    let q = s.overall_recall / 100.0;
    let chance = 100.0 * 2.0 * (base / 100.0) * q / (base / 100.0 + q);
    assert!((s.micro_f1 - chance).abs() < 4.0, "{s:?} vs chance {chance}");
}
