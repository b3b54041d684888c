//! Checks shared by the integration tests and the acceptance harness. Each
//! returns a one-line summary on success and a description of the first
//! violation otherwise.

use std::path::Path;

use ndarray::{Array2, Array3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use tch::{nn::Module, Device, Kind, Tensor};
use udor_core::latent::{EmptyPartBank, PartitionedLatent};
use udor_core::losses::{
    critic_loss_wgan_gp_with_eps, fuzzy_classification_from_probs, generator_adversarial_term,
    object_removing_loss, reconstruction_loss, total_loss, LossComponents, LossWeights, PenaltySamples,
};
use udor_core::metrics::{integrity_score, modularity_score, which_part_maps_to_slot};
use udor_core::networks::{ArchitectureConfig, Normalization};
use udor_core::synthdata::{generate_dataset, generate_probe_set, OccupancyDistribution, SlotLayout};
use udor_core::training::{Method, TrainConfig, Trainer};
use udor_core::UdorError;

pub type Check = std::result::Result<String, String>;

const F64: (Kind, Device) = (Kind::Double, Device::Cpu);

fn scalar(t: &Tensor) -> f64 {
    t.double_value(&[])
}

// ---------------------------------------------------------------- metrics

/// Literal triple loop over `[T][D][L]`.
pub fn naive_modularity(z: &[Vec<Vec<f64>>]) -> f64 {
    let t = z.len();
    let d = z[0].len();
    let l = z[0][0].len();
    let mut acc = 0.0;
    for group in z {
        for i in 0..l {
            let mut mean = 0.0;
            for row in group {
                mean += row[i];
            }
            mean /= d as f64;
            for row in group {
                acc += (row[i] - mean).abs();
            }
        }
    }
    acc / (t * d) as f64
}

pub fn naive_integrity(recon: &[Vec<Vec<f64>>], truth: &[Vec<Vec<f64>>]) -> f64 {
    let (t, d, w) = (recon.len(), recon[0].len(), recon[0][0].len());
    let mut acc = 0.0;
    for a in 0..t {
        for b in 0..d {
            for p in 0..w {
                acc += (truth[a][b][p] - recon[a][b][p]).abs();
            }
        }
    }
    acc / (t * d * w) as f64
}

fn nested(rng: &mut ChaCha8Rng, t: usize, d: usize, l: usize, scale: f64) -> Vec<Vec<Vec<f64>>> {
    (0..t)
        .map(|_| (0..d).map(|_| (0..l).map(|_| rng.gen_range(-scale..scale)).collect()).collect())
        .collect()
}

fn to_array(v: &[Vec<Vec<f64>>]) -> Array3<f64> {
    let (t, d, l) = (v.len(), v[0].len(), v[0][0].len());
    Array3::from_shape_fn((t, d, l), |(a, b, c)| v[a][b][c])
}

/// Criterion 1: both scores against the loops above on 100 random instances.
pub fn metric_oracles(instances: usize, seed: u64) -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst: f64 = 0.0;
    for case in 0..instances {
        let t = rng.gen_range(1..=20);
        let d = rng.gen_range(1..=20);
        let l = rng.gen_range(1..=16);
        let scale = 10f64.powf(rng.gen_range(-2.0..2.0));
        let z = nested(&mut rng, t, d, l, scale);
        let m = modularity_score(to_array(&z).view()).map_err(|e| format!("case {case}: {e}"))?;
        let err = (m - naive_modularity(&z)).abs();
        worst = worst.max(err);
        if err > 1e-10 {
            return Err(format!("case {case} (T={t}, D={d}, L={l}): M error {err:e}"));
        }
        let w = rng.gen_range(1..=64);
        let r = nested(&mut rng, t, d, w, 1.0);
        let g = nested(&mut rng, t, d, w, 1.0);
        let v = integrity_score(to_array(&r).view(), to_array(&g).view()).map_err(|e| format!("case {case}: {e}"))?;
        let err = (v - naive_integrity(&r, &g)).abs();
        worst = worst.max(err);
        if err > 1e-10 {
            return Err(format!("case {case} (T={t}, D={d}, W={w}): V error {err:e}"));
        }
    }
    Ok(format!("{instances} instances, max abs error {worst:.1e}"))
}

// ---------------------------------------------------------------- losses

struct ConstCritic(f64);

impl std::fmt::Debug for ConstCritic {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "ConstCritic({})", self.0)
    }
}

impl Module for ConstCritic {
    fn forward(&self, xs: &Tensor) -> Tensor {
        xs.flatten(1, -1).sum_dim_intlist([1i64].as_slice(), false, xs.kind()) * 0.0 + self.0
    }
}

#[derive(Debug)]
struct LinearCritic(Tensor);

impl Module for LinearCritic {
    fn forward(&self, xs: &Tensor) -> Tensor {
        xs.flatten(1, -1).matmul(&self.0)
    }
}

fn near(name: &str, got: f64, want: f64, tol: f64) -> Result<(), String> {
    if (got - want).abs() <= tol {
        Ok(())
    } else {
        Err(format!("{name}: got {got}, expected {want}"))
    }
}

/// Criterion 2: the worked values of every loss term, to 1e-6.
pub fn loss_unit_values() -> Check {
    let tol = 1e-6;
    let mut checked = 0;
    let mut ok = |r: Result<(), String>| -> Result<(), String> {
        checked += 1;
        r
    };
    let img = Tensor::rand([2, 1, 8, 8], F64);
    let code = Tensor::randn([2, 6], F64);
    let e = |r: udor_core::Result<Tensor>| r.map(|t| scalar(&t)).map_err(|e| e.to_string());

    // reconstruction
    ok(near("rec identity", e(reconstruction_loss(&img, &img, &code, &code, 3.7))?, 0.0, tol))?;
    let one = img.narrow(0, 0, 1);
    let bumped = &one + delta_with_sq_norm(&one, 4.0);
    let c1 = code.narrow(0, 0, 1);
    ok(near("rec ||d||^2=4", e(reconstruction_loss(&one, &bumped, &c1, &c1, 1.0))?, 4.0, tol))?;

    // fuzzy classification, n = 2 (three classes)
    let eye = |rows: &[usize]| {
        let mut v = vec![0.0f64; rows.len() * 3];
        for (r, &c) in rows.iter().enumerate() {
            v[r * 3 + c] = 1.0;
        }
        Tensor::from_slice(&v).view([rows.len() as i64, 3])
    };
    let empty_ok = eye(&[0, 0]);
    let perfect = eye(&[1, 2]).view([1, 2, 3]);
    ok(near("fuzzy perfect", e(fuzzy_classification_from_probs(&perfect, &empty_ok, 1.0))?, 0.0, tol))?;
    let all_empty = eye(&[0, 0]).view([1, 2, 3]);
    ok(near("fuzzy empty accepted", e(fuzzy_classification_from_probs(&all_empty, &empty_ok, 1.0))?, 0.0, tol))?;
    let uniform = Tensor::full([1, 2, 3], 1.0 / 3.0, F64);
    let per_k = -(5.0f64 / 9.0).ln();
    ok(near("fuzzy uniform per part", e(fuzzy_classification_from_probs(&uniform, &empty_ok, 0.0))? / 2.0, per_k, tol))?;
    ok(near("-log(5/9)", per_k, 0.5878, 1e-4))?;
    // one part uniform, the other predicted empty: only the uniform part counts
    let mixed = Tensor::cat(&[Tensor::full([1, 1, 3], 1.0 / 3.0, F64), eye(&[0]).view([1, 1, 3])], 1);
    ok(near("fuzzy mixed", e(fuzzy_classification_from_probs(&mixed, &empty_ok, 1.0))?, per_k, tol))?;
    let empty_uniform = Tensor::full([2, 3], 1.0 / 3.0, F64);
    ok(near(
        "fuzzy empty term",
        e(fuzzy_classification_from_probs(&perfect, &empty_uniform, 2.0))?,
        2.0 * 3f64.ln(),
        tol,
    ))?;

    // object removal
    let ie = Tensor::zeros([1, 1, 8, 8], F64);
    ok(near("rem identity", e(object_removing_loss(&code, &code, &ie, &ie, 5.0))?, 0.0, tol))?;
    let u = delta_with_sq_norm(&c1, 9.0);
    ok(near("rem ||u||^2=9", e(object_removing_loss(&c1, &(&c1 + &u), &ie, &ie, 2.0))?, 9.0, tol))?;
    let ie2 = &ie + delta_with_sq_norm(&ie, 1.5);
    ok(near("rem omega", e(object_removing_loss(&c1, &c1, &ie, &ie2, 2.0))?, 3.0, tol))?;

    // critic
    let real = Tensor::rand([4, 1, 8, 8], F64);
    let fake = Tensor::rand([4, 1, 8, 8], F64);
    let eps = Tensor::rand([4], F64);
    let (loss, gp) = critic_loss_wgan_gp_with_eps(&ConstCritic(2.5), &real, &fake, 10.0, &eps, PenaltySamples::Interpolates)
        .map_err(|e| e.to_string())?;
    ok(near("constant critic gp", scalar(&gp), 1.0, tol))?;
    ok(near("constant critic loss", scalar(&loss), 10.0, tol))?;
    let w = Tensor::randn([64], F64);
    let w = &w / w.norm();
    let (_, gp) = critic_loss_wgan_gp_with_eps(&LinearCritic(w), &real, &fake, 10.0, &eps, PenaltySamples::Interpolates)
        .map_err(|e| e.to_string())?;
    ok(near("unit linear critic gp", scalar(&gp), 0.0, tol))?;
    ok(near("adv critic 0", scalar(&generator_adversarial_term(&ConstCritic(0.0), &fake)), 0.0, tol))?;
    ok(near("adv critic c", scalar(&generator_adversarial_term(&ConstCritic(1.75), &fake)), -1.75, tol))?;

    // weighted total
    let c = LossComponents {
        rec: 1.0,
        cla: 2.0,
        rem: 3.0,
        adv_generator: 4.0,
        ..Default::default()
    };
    let wts = |a, b, g, h| LossWeights {
        alpha: a,
        beta: b,
        gamma: g,
        eta: h,
        ..Default::default()
    };
    let t = |c, w: LossWeights| total_loss(c, &w).map(|b| b.total).map_err(|e| e.to_string());
    ok(near("total zero", t(LossComponents::default(), wts(1.0, 1.0, 1.0, 1.0))?, 0.0, tol))?;
    ok(near("total unit weights", t(c, wts(1.0, 1.0, 1.0, 1.0))?, 10.0, tol))?;
    ok(near("total weighted", t(c, wts(2.0, 0.5, 1.0, 0.1))?, 6.4, tol))?;
    Ok(format!("{checked} worked values within {tol:e}"))
}

/// A random perturbation shaped like `like` with squared norm `sq`.
fn delta_with_sq_norm(like: &Tensor, sq: f64) -> Tensor {
    let r = Tensor::randn_like(like);
    &r / r.norm() * sq.sqrt()
}

// ---------------------------------------------------------------- gradients

/// `n = 2`, `part_length = 3`, 8x8 images, two stride-2 blocks.
pub fn gradcheck_arch() -> ArchitectureConfig {
    let mut a = ArchitectureConfig::standard(8, 2, 3);
    a.encoder_widths = vec![3, 4];
    a.critic_widths = vec![3, 4];
    a.classifier_hidden = 5;
    a.normalization = Normalization::Group { groups: 2 };
    a
}

fn rel_err(a: &[f64], b: &[f64]) -> f64 {
    let diff: f64 = a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt();
    let na: f64 = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb: f64 = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    let denom = na.max(nb);
    if denom < 1e-12 {
        diff
    } else {
        diff / denom
    }
}

/// Analytic vs central-difference gradient of `f` w.r.t. up to `max_coords`
/// entries of each of `vars`.
fn compare_gradient(
    vars: &[Tensor],
    f: &dyn Fn() -> Tensor,
    max_coords: i64,
    h: f64,
) -> std::result::Result<f64, String> {
    for v in vars {
        let mut g = v.grad();
        if g.defined() {
            let _ = g.zero_();
        }
    }
    let out = f();
    let analytic = Tensor::run_backward(&[out], vars, false, false);
    let mut a_all = Vec::new();
    let mut n_all = Vec::new();
    for (v, g) in vars.iter().zip(&analytic) {
        let flat_g = g.flatten(0, -1);
        let numel = flat_g.size()[0];
        let stride = (numel / max_coords).max(1);
        let mut idx = 0;
        while idx < numel {
            let base = tch::no_grad(|| v.flatten(0, -1).double_value(&[idx]));
            let set = |x: f64| {
                tch::no_grad(|| {
                    let _ = v.view(-1).get(idx).fill_(x);
                })
            };
            set(base + h);
            // the penalty term differentiates internally, so no no_grad here
            let up = scalar(&f());
            set(base - h);
            let down = scalar(&f());
            set(base);
            a_all.push(flat_g.double_value(&[idx]));
            n_all.push((up - down) / (2.0 * h));
            idx += stride;
        }
    }
    Ok(rel_err(&a_all, &n_all))
}

/// Moves every parameter off its initial value. Zero-initialised biases put
/// the empty image exactly on an activation kink, where one-sided and central
/// differences disagree by construction.
fn jitter(model: &udor_core::networks::ModelBundle) {
    tch::no_grad(|| {
        for v in model.generator_vs.trainable_variables().iter().chain(&model.critic_vs.trainable_variables()) {
            let _ = v.shallow_clone().g_add_(&(Tensor::randn_like(v) * 0.05));
        }
    });
}

/// Criterion 3: every loss term (and the assembled generator and critic
/// objectives) against central differences in f64.
pub fn gradient_checks(seed: u64) -> Check {
    tch::manual_seed(seed as i64);
    let tol = 1e-4;
    let h = 1e-6;
    let mut report = Vec::new();
    let mut record = |name: &str, err: f64| -> Result<(), String> {
        report.push(format!("{name} {err:.1e}"));
        if err < tol {
            Ok(())
        } else {
            Err(format!("{name}: relative error {err:e} >= {tol:e}"))
        }
    };

    // terms w.r.t. their direct inputs
    let x = Tensor::rand([3, 1, 8, 8], F64);
    let xr = Tensor::rand([3, 1, 8, 8], F64).set_requires_grad(true);
    let z = Tensor::randn([3, 6], F64);
    let zr = Tensor::randn([3, 6], F64).set_requires_grad(true);
    let f = || reconstruction_loss(&x, &xr, &z, &zr, 0.7).unwrap();
    record("rec", compare_gradient(&[xr.shallow_clone(), zr.shallow_clone()], &f, 64, h)?)?;

    let logits = Tensor::randn([3, 2, 3], F64).set_requires_grad(true);
    let empty_logits = Tensor::randn([2, 3], F64).set_requires_grad(true);
    let f = || {
        fuzzy_classification_from_probs(&logits.softmax(-1, Kind::Double), &empty_logits.softmax(-1, Kind::Double), 0.8)
            .unwrap()
    };
    record("cla", compare_gradient(&[logits.shallow_clone(), empty_logits.shallow_clone()], &f, 64, h)?)?;

    let ie = Tensor::zeros([1, 1, 8, 8], F64);
    let ier = Tensor::rand([1, 1, 8, 8], F64).set_requires_grad(true);
    let f = || object_removing_loss(&z, &zr, &ie, &ier, 1.3).unwrap();
    record("rem", compare_gradient(&[zr.shallow_clone(), ier.shallow_clone()], &f, 64, h)?)?;

    // networks in f64
    let arch = gradcheck_arch();
    let cfg = TrainConfig {
        seed,
        batch_size: 3,
        ..Default::default()
    };
    let mut trainer = Trainer::new(&arch, &cfg, Device::Cpu).map_err(|e| e.to_string())?;
    trainer.model.to_double();
    jitter(&trainer.model);
    let model = &trainer.model;
    let real = Tensor::rand([3, 1, 8, 8], F64);
    let fake = Tensor::rand([3, 1, 8, 8], F64);
    let eps = Tensor::rand([3], F64);
    let critic_vars = model.critic_vs.trainable_variables();
    let f = || {
        critic_loss_wgan_gp_with_eps(&model.critic, &real, &fake, 10.0, &eps, PenaltySamples::Interpolates)
            .unwrap()
            .0
    };
    record("critic+gp (critic params)", compare_gradient(&critic_vars, &f, 6, h)?)?;
    let fake_var = fake.copy().set_requires_grad(true);
    let f = || generator_adversarial_term(&model.critic, &fake_var);
    record("adv (fake images)", compare_gradient(&[fake_var.shallow_clone()], &f, 64, h)?)?;

    let labels = Tensor::from_slice(&[1i64, 0, 0, 2, 1, 2]).view([3, 2]);
    // The removal bank is a detached snapshot of the empty code, so the full
    // objective is compared on the parameters downstream of it; the encoder is
    // covered by the objectives without the bank.
    let no_bank = TrainConfig {
        ablation: udor_core::training::Ablation {
            disable_rem: true,
            disable_gan: true,
        },
        ..cfg.clone()
    };
    let cases: [(&str, TrainConfig, &[&str]); 3] = [
        ("udor total (decoder, classifier)", Method::Udor.configure(&cfg), &["decoder", "classifier"]),
        ("rec+cla (all generator params)", no_bank, &["encoder", "decoder", "classifier"]),
        ("s-ae total (all generator params)", Method::SupervisedAe.configure(&cfg), &["encoder", "decoder", "classifier"]),
    ];
    for (name, config, prefixes) in cases {
        let mut t = Trainer::new(&arch, &config, Device::Cpu).map_err(|e| e.to_string())?;
        t.model.to_double();
        jitter(&t.model);
        let vars: Vec<Tensor> = t
            .model
            .generator_vs
            .variables()
            .into_iter()
            .filter(|(k, _)| prefixes.iter().any(|p| k.starts_with(p)))
            .map(|(_, v)| v)
            .collect();
        let f = || t.generator_loss(&real, &labels, 0).unwrap().0;
        record(name, compare_gradient(&vars, &f, 4, h)?)?;
    }
    // decoder output norm w.r.t. the code
    let code = Tensor::randn([2, 6], F64).set_requires_grad(true);
    let f = || model.decode(&code).unwrap().square().sum(Kind::Double);
    record("||decode(z)||^2 (code)", compare_gradient(&[code.shallow_clone()], &f, 12, h)?)?;
    Ok(report.join(", "))
}

// ---------------------------------------------------------------- data

fn files_under(dir: &Path) -> Vec<std::path::PathBuf> {
    let mut out = Vec::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for e in std::fs::read_dir(&d).unwrap().flatten() {
            let p = e.path();
            if p.is_dir() {
                stack.push(p);
            } else {
                out.push(p);
            }
        }
    }
    out.sort();
    out
}

/// Criterion 4: regeneration is byte-identical; probe fixedness and
/// ground-truth locality on at least `probes` probe scenes.
pub fn dataset_determinism(mnist: &Path, samples: usize, probes: usize) -> Check {
    let bank = udor_core::synthdata::load_source_digits(mnist, &[0, 1, 2]).map_err(|e| e.to_string())?;
    let layout = SlotLayout::multi_mnist();
    let occ = OccupancyDistribution::Patterns {
        min_objects: 0,
        max_objects: 3,
    };
    let tmp = tempfile::tempdir().map_err(|e| e.to_string())?;
    let (a, b) = (tmp.path().join("a"), tmp.path().join("b"));
    for dir in [&a, &b] {
        generate_dataset(dir, &layout, &bank, samples, &occ, 42).map_err(|e| e.to_string())?;
    }
    let fa = files_under(&a);
    let fb = files_under(&b);
    if fa.len() != fb.len() {
        return Err(format!("{} vs {} files", fa.len(), fb.len()));
    }
    for (x, y) in fa.iter().zip(&fb) {
        if x.strip_prefix(&a).ok() != y.strip_prefix(&b).ok() || std::fs::read(x).ok() != std::fs::read(y).ok() {
            return Err(format!("{} differs from {}", x.display(), y.display()));
        }
    }
    let manifest = std::fs::read_to_string(a.join("manifest.jsonl")).map_err(|e| e.to_string())?;
    if manifest.lines().count() != samples {
        return Err(format!("manifest has {} records for {samples} scenes", manifest.lines().count()));
    }

    let mut checked = 0;
    for (slot_case, layout) in [SlotLayout::multi_mnist(), SlotLayout::multi_mnist().with_offset(3)]
        .into_iter()
        .enumerate()
    {
        let n = layout.n_slots();
        let per_slot = probes.div_ceil(2 * n);
        let groups = per_slot.div_ceil(10);
        for s in 0..n {
            let ps = generate_probe_set(&layout, &bank, groups, 10, s, &OccupancyDistribution::default(), 7 + s as u64)
                .map_err(|e| e.to_string())?;
            for t in 0..groups {
                let first = ps.sample(t, 0);
                for d in 0..10 {
                    let i = t * 10 + d;
                    let smp = ps.sample(t, d);
                    let tag = format!("layout {slot_case} slot {s} probe ({t},{d})");
                    if smp.glyph_ids[s] != first.glyph_ids[s]
                        || smp.offsets_used[s] != first.offsets_used[s]
                        || smp.occupancy[s] != s as u8 + 1
                        || ps.fixed_boxes[i] != ps.fixed_boxes[t * 10]
                    {
                        return Err(format!("{tag}: fixed object changed within its group"));
                    }
                    let bx = ps.fixed_boxes[i];
                    let gt = &ps.ground_truth[i];
                    for r in 0..layout.canvas_size {
                        for c in 0..layout.canvas_size {
                            let want = if bx.contains(r, c) { 0 } else { smp.image.get(r, c) };
                            if gt.get(r, c) != want {
                                return Err(format!("{tag}: ground truth wrong at ({r},{c})"));
                            }
                        }
                    }
                    checked += 1;
                }
            }
        }
    }
    if checked < probes {
        return Err(format!("only {checked} probes checked"));
    }
    Ok(format!("{samples} scenes regenerated byte-identically, {checked} probes checked"))
}

// ---------------------------------------------------------------- latent ops

/// Codes `[T, D, n * len]` where slot `s`'s per-group value is copied into
/// part `perm[s]` and every other coordinate is fresh noise.
pub fn oracle_codes(
    rng: &mut ChaCha8Rng,
    perm: &[usize],
    n: usize,
    t: usize,
    d: usize,
    len: usize,
) -> Vec<Array3<f64>> {
    (0..perm.len())
        .map(|s| {
            let fixed = Array2::from_shape_fn((t, len), |_| rng.gen_range(-1.0..1.0));
            let mut codes = Array3::from_shape_fn((t, d, n * len), |_| rng.gen_range(-1.0..1.0));
            for a in 0..t {
                for b in 0..d {
                    for i in 0..len {
                        codes[[a, b, perm[s] * len + i]] = fixed[[a, i]];
                    }
                }
            }
            codes
        })
        .collect()
}

fn random_latent(rng: &mut ChaCha8Rng, n: usize, len: usize) -> PartitionedLatent {
    let v: Vec<f32> = (0..n * len).map(|_| rng.gen_range(-3.0..3.0)).collect();
    PartitionedLatent::split(&v, n).expect("valid split")
}

fn shuffled(rng: &mut ChaCha8Rng, n: usize) -> Vec<usize> {
    let mut p: Vec<usize> = (0..n).collect();
    for i in (1..n).rev() {
        p.swap(i, rng.gen_range(0..=i));
    }
    p
}

/// Criterion 10: randomized latent-operation properties.
pub fn latent_properties(cases: usize, seed: u64) -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for case in 0..cases {
        let n = rng.gen_range(1..=6);
        let len = rng.gen_range(1..=8);
        let fail = |what: &str| Err(format!("case {case} (n={n}, len={len}): {what}"));
        let r = random_latent(&mut rng, n, len);
        let other = random_latent(&mut rng, n, len);
        let bank = EmptyPartBank::new(random_latent(&mut rng, n, len));
        let k = rng.gen_range(0..n);

        // split / concat
        let flat = r.concat();
        if PartitionedLatent::split(&flat, n).ok().as_ref() != Some(&r) || flat.len() != n * len {
            return fail("split/concat round trip");
        }
        if flat.len() > 1 {
            let bad = flat.len() + 1;
            let v = vec![0.0; bad];
            if n > 1 && bad % n != 0 && !matches!(PartitionedLatent::split(&v, n), Err(UdorError::Shape(_))) {
                return fail("indivisible length accepted");
            }
        }

        // reset: purity and idempotence
        let once = r.reset_part(k, &bank).map_err(|e| e.to_string())?;
        let twice = once.reset_part(k, &bank).map_err(|e| e.to_string())?;
        if once != twice || once.part(k) != bank.part(k) {
            return fail("reset idempotence / bank read-back");
        }
        if (0..n).any(|j| j != k && once.part(j).iter().zip(r.part(j)).any(|(a, b)| a.to_bits() != b.to_bits())) {
            return fail("reset touched another part");
        }
        if !matches!(r.reset_part(n, &bank), Err(UdorError::Index { .. })) {
            return fail("out-of-range reset accepted");
        }

        // swap: self identity, restore, purity
        if r.swap_part(&r, k).ok().as_ref() != Some(&r) {
            return fail("self swap changed the code");
        }
        let swapped = r.swap_part(&other, k).map_err(|e| e.to_string())?;
        if swapped.part(k) != other.part(k) || (0..n).any(|j| j != k && swapped.part(j) != r.part(j)) {
            return fail("swap content");
        }
        if swapped.swap_part(&r, k).ok().as_ref() != Some(&r) {
            return fail("swap back did not restore");
        }
        let wrong = random_latent(&mut rng, n, len + 1);
        if !matches!(r.swap_part(&wrong, k), Err(UdorError::Shape(_))) {
            return fail("mismatched swap accepted");
        }

        // slot -> part identification on oracle codes
        if n >= 2 {
            let slots = rng.gen_range(2..=n);
            let parts = shuffled(&mut rng, n);
            let perm = &parts[..slots];
            let (t, d) = (rng.gen_range(2..=4), rng.gen_range(2..=4));
            let codes = oracle_codes(&mut rng, perm, n, t, d, len);
            let views: Vec<_> = codes.iter().map(|c| c.view()).collect();
            match which_part_maps_to_slot(&views, n) {
                Ok(map) if map == perm => {}
                other => return fail(&format!("expected map {perm:?}, got {other:?}")),
            }
        }
    }
    Ok(format!("{cases} randomized cases, 0 failures"))
}
