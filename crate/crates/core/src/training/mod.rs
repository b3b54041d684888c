//! Alternating optimisation of the generator side (encoder, decoder,
//! classifier) and the critic.
//!
//! One schedule step runs `critic_steps` critic updates followed by one
//! generator update. Every random draw of step `s` (batch order, removed
//! parts, penalty interpolation) comes from a stream derived from the base
//! seed and `s`, so a run resumed from a checkpoint replays the same sequence.

mod checkpoint;
mod config;
mod trainlog;

use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::Rng;
use sha2::{Digest, Sha256};
use tch::{Device, Kind, Tensor};

pub use checkpoint::{
    checkpoint_bytes, load_checkpoint, load_checkpoint_for, parse_checkpoint, read_checkpoint_header,
    save_checkpoint, CheckpointHeader, RngState, TensorEntry, CHECKPOINT_FORMAT, CHECKPOINT_MAGIC,
};
pub use config::{Ablation, Method, Objective, TrainConfig};
pub use trainlog::{read_log, TrainLog, LOG_HEADER};

use crate::error::{Result, UdorError};
use crate::latent::{parts_view, reset_parts_batch, sample_removal_indices};
use crate::losses::{
    critic_loss_wgan_gp, fuzzy_classification_loss, generator_adversarial_term, object_removing_loss,
    reconstruction_loss, supervised_part_loss, LossBreakdown, LossComponents,
};
use crate::networks::{images_to_tensor, ArchitectureConfig, ModelBundle};
use crate::optim::Adam;
use crate::seeds;
use crate::synthdata::{CompositeSample, Dataset, SlotLayout};

/// Images and per-slot labels held in memory.
pub struct TrainingData {
    /// `[N, 1, S, S]`, float in `[0, 1]`.
    pub images: Tensor,
    /// `[N, n]`: 0 for an empty slot, `k + 1` for category `k`.
    pub labels: Tensor,
    pub layout: SlotLayout,
}

impl TrainingData {
    pub fn from_dataset(ds: &Dataset) -> Result<Self> {
        let images = ds.load_images()?;
        let refs: Vec<_> = images.iter().collect();
        let occupancy: Vec<Vec<u8>> = ds.records.iter().map(|r| r.occupancy.clone()).collect();
        Self::build(&refs, &occupancy, ds.info.layout.clone())
    }

    pub fn from_samples(samples: &[CompositeSample], layout: &SlotLayout) -> Result<Self> {
        let refs: Vec<_> = samples.iter().map(|s| &s.image).collect();
        let occupancy: Vec<Vec<u8>> = samples.iter().map(|s| s.occupancy.clone()).collect();
        Self::build(&refs, &occupancy, layout.clone())
    }

    fn build(images: &[&crate::synthdata::GrayImage], occupancy: &[Vec<u8>], layout: SlotLayout) -> Result<Self> {
        let n = layout.n_slots();
        let flat: Vec<i64> = occupancy
            .iter()
            .flat_map(|o| o.iter().map(|&v| v as i64))
            .collect();
        if flat.len() != images.len() * n {
            return Err(UdorError::shape("occupancy rows do not match the layout"));
        }
        Ok(TrainingData {
            images: images_to_tensor(images)?,
            labels: Tensor::from_slice(&flat).view([images.len() as i64, n as i64]),
            layout,
        })
    }

    pub fn len(&self) -> usize {
        self.images.size()[0] as usize
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn batch(&self, indices: &[i64], kind: Kind, device: Device) -> (Tensor, Tensor) {
        let idx = Tensor::from_slice(indices);
        (
            self.images.index_select(0, &idx).to_kind(kind).to_device(device),
            self.labels.index_select(0, &idx).to_device(device),
        )
    }
}

/// Generator batch for `step`: epochs are independent seeded permutations and
/// the trailing partial batch of each epoch is dropped.
pub fn batch_indices(seed: u64, step: u64, n_samples: usize, batch_size: usize) -> Vec<i64> {
    let per_epoch = (n_samples / batch_size).max(1) as u64;
    let epoch = step / per_epoch;
    let pos = (step % per_epoch) as usize;
    let mut order: Vec<i64> = (0..n_samples as i64).collect();
    order.shuffle(&mut seeds::stream(seed, "epoch", epoch));
    (0..batch_size)
        .map(|i| order[(pos * batch_size + i) % n_samples])
        .collect()
}

fn random_indices<R: Rng>(rng: &mut R, n_samples: usize, batch_size: usize) -> Vec<i64> {
    (0..batch_size)
        .map(|_| rng.gen_range(0..n_samples) as i64)
        .collect()
}

/// Digest of the generator batch order over the first `steps` steps.
pub fn data_order_digest(seed: u64, steps: u64, n_samples: usize, batch_size: usize) -> String {
    let mut h = Sha256::new();
    for s in 0..steps {
        for i in batch_indices(seed, s, n_samples, batch_size) {
            h.update(i.to_le_bytes());
        }
    }
    h.finalize().iter().map(|b| format!("{b:02x}")).collect()
}

fn scalar(t: &Tensor) -> f64 {
    t.double_value(&[])
}

fn zero(kind: Kind, device: Device) -> Tensor {
    Tensor::zeros([], (kind, device))
}

pub struct Trainer {
    pub model: ModelBundle,
    pub config: TrainConfig,
    /// Completed schedule steps.
    pub step: u64,
    pub generator_opt: Adam,
    pub critic_opt: Adam,
    /// Exponential moving averages of the logged components.
    pub running: LossBreakdown,
}

impl Trainer {
    pub fn new(arch: &ArchitectureConfig, config: &TrainConfig, device: Device) -> Result<Self> {
        config.validate()?;
        if config.threads > 0 {
            tch::set_num_threads(config.threads as i32);
        }
        let model = ModelBundle::new(arch, seeds::derive_seed(config.seed, "init", 0), device)?;
        Ok(Self::from_parts(model, config.clone(), 0))
    }

    pub(crate) fn from_parts(model: ModelBundle, config: TrainConfig, step: u64) -> Self {
        let generator_opt = Adam::new(&model.generator_vs, config.generator_optimizer);
        let critic_opt = Adam::new(&model.critic_vs, config.critic_optimizer);
        Trainer {
            model,
            config,
            step,
            generator_opt,
            critic_opt,
            running: LossBreakdown::default(),
        }
    }

    fn n_parts(&self) -> usize {
        self.model.arch.n_parts as usize
    }

    fn removal_draws(&self, label: &str, index: u64, batch: usize) -> Vec<Vec<usize>> {
        let mut rng = seeds::stream(self.config.seed, label, index);
        (0..batch)
            .map(|_| sample_removal_indices(self.n_parts(), &mut rng, self.config.removal))
            .collect()
    }

    /// Object-removed images for the critic, built without gradient.
    fn removed_fakes(&self, source: &Tensor, draw_index: u64) -> Result<Tensor> {
        tch::no_grad(|| {
            let codes = self.model.encode(source)?;
            let empty = self.model.encode(&self.model.empty_image_tensor())?;
            let parts = self.removal_draws("critic-removal", draw_index, source.size()[0] as usize);
            self.model.decode(&reset_parts_batch(&codes, &parts, &empty, self.n_parts()))
        })
    }

    /// One critic update. `real` are data images, `source` the images whose
    /// object-removed reconstructions act as fakes. Returns `(loss, gp)`.
    pub fn critic_step(&mut self, real: &Tensor, source: &Tensor, index: u64) -> Result<(f64, f64)> {
        if !self.config.gan_enabled() {
            return Err(UdorError::config("critic_step called with the adversarial term disabled"));
        }
        let fake = self.removed_fakes(source, index)?;
        let mut rng = seeds::stream(self.config.seed, "gp", index);
        let (loss, gp) = critic_loss_wgan_gp(
            &self.model.critic,
            real,
            &fake,
            self.config.weights.lambda_gp,
            &mut rng,
            self.config.penalty_samples,
        )?;
        let (l, g) = (scalar(&loss), scalar(&gp));
        if !l.is_finite() {
            return Err(UdorError::numeric("adv_c"));
        }
        if !g.is_finite() {
            return Err(UdorError::numeric("gp"));
        }
        self.critic_opt.backward_step(&loss);
        Ok((l, g))
    }

    /// Generator-side loss for one batch (no update). `labels` are only read
    /// by the supervised baseline.
    pub fn generator_loss(&self, images: &Tensor, labels: &Tensor, draw_index: u64) -> Result<(Tensor, LossBreakdown)> {
        let w = &self.config.weights;
        let n = self.n_parts();
        let (kind, device) = (images.kind(), images.device());
        let model = &self.model;

        let code = model.encode(images)?;
        let image_rec = model.decode(&code)?;
        let code_rec = model.encode(&image_rec)?;
        let rec = reconstruction_loss(images, &image_rec, &code, &code_rec, w.rho)?;

        let (cla, rem, adv) = match self.config.objective {
            config::Objective::SupervisedAe => {
                let cla = supervised_part_loss(&parts_view(&code, n), &model.classifier, labels)?;
                (cla, zero(kind, device), zero(kind, device))
            }
            config::Objective::Udor => {
                let empty_image = model.empty_image_tensor();
                let empty_code = model.encode(&empty_image)?;
                let cla = fuzzy_classification_loss(
                    &parts_view(&code, n),
                    &model.classifier,
                    &empty_code.view([n as i64, -1]),
                    w.tau,
                )?;
                let needs_removal = self.config.rem_enabled() || self.config.gan_enabled();
                let (rem, adv) = if needs_removal {
                    let parts = self.removal_draws("removal", draw_index, images.size()[0] as usize);
                    let code_removed = reset_parts_batch(&code, &parts, &empty_code.detach(), n);
                    let image_removed = model.decode(&code_removed)?;
                    let rem = if self.config.rem_enabled() {
                        let code_removed_rec = model.encode(&image_removed)?;
                        let empty_rec = model.decode(&empty_code)?;
                        object_removing_loss(&code_removed, &code_removed_rec, &empty_image, &empty_rec, w.omega)?
                    } else {
                        zero(kind, device)
                    };
                    let adv = if self.config.gan_enabled() {
                        generator_adversarial_term(&model.critic, &image_removed)
                    } else {
                        zero(kind, device)
                    };
                    (rem, adv)
                } else {
                    (zero(kind, device), zero(kind, device))
                };
                (cla, rem, adv)
            }
        };

        let total = &rec * w.alpha + &cla * w.beta + &rem * w.gamma + &adv * w.eta;
        let breakdown = crate::losses::total_loss(
            LossComponents {
                rec: scalar(&rec),
                cla: scalar(&cla),
                rem: scalar(&rem),
                adv_generator: scalar(&adv),
                ..Default::default()
            },
            w,
        )?;
        Ok((total, breakdown))
    }

    /// One generator-side update; the critic parameters are not touched.
    pub fn generator_step(&mut self, images: &Tensor, labels: &Tensor, draw_index: u64) -> Result<LossBreakdown> {
        self.model.critic_vs.freeze();
        let result = self.generator_loss(images, labels, draw_index);
        let outcome = result.map(|(total, breakdown)| {
            self.generator_opt.backward_step(&total);
            breakdown
        });
        self.model.critic_vs.unfreeze();
        outcome
    }

    /// Runs schedule step `self.step`: critic updates then one generator update.
    pub fn train_step(&mut self, data: &TrainingData) -> Result<LossBreakdown> {
        let (kind, device) = (self.model.kind(), self.model.device());
        let s = self.step;
        let b = self.config.batch_size;
        let mut adv_c = 0.0;
        let mut gp = 0.0;
        if self.config.gan_enabled() {
            for j in 0..self.config.critic_steps as u64 {
                let index = s * self.config.critic_steps as u64 + j;
                let mut rng = seeds::stream(self.config.seed, "critic-batch", index);
                let real_idx = random_indices(&mut rng, data.len(), b);
                let source_idx = random_indices(&mut rng, data.len(), b);
                let (real, _) = data.batch(&real_idx, kind, device);
                let (source, _) = data.batch(&source_idx, kind, device);
                (adv_c, gp) = self.critic_step(&real, &source, index)?;
            }
        }
        let idx = batch_indices(self.config.seed, s, data.len(), b);
        let (images, labels) = data.batch(&idx, kind, device);
        let mut breakdown = self.generator_step(&images, &labels, s)?;
        breakdown.adv_critic = adv_c;
        breakdown.gp = gp;
        self.update_running(&breakdown);
        self.step += 1;
        Ok(breakdown)
    }

    fn update_running(&mut self, b: &LossBreakdown) {
        const DECAY: f64 = 0.98;
        let r = &mut self.running;
        if self.step == 0 {
            *r = *b;
            return;
        }
        for (acc, v) in [
            (&mut r.rec, b.rec),
            (&mut r.cla, b.cla),
            (&mut r.rem, b.rem),
            (&mut r.adv_generator, b.adv_generator),
            (&mut r.adv_critic, b.adv_critic),
            (&mut r.gp, b.gp),
            (&mut r.total, b.total),
        ] {
            *acc = DECAY * *acc + (1.0 - DECAY) * v;
        }
    }

    pub fn checkpoint_path(dir: &Path, step: u64) -> PathBuf {
        dir.join(format!("ckpt_{step}.bin"))
    }

    /// Trains until `config.steps`, appending to `out/train_log.csv` and
    /// writing checkpoints into `out`. On a numeric failure the state of the
    /// last completed step is checkpointed before the error is returned.
    pub fn train(&mut self, data: &TrainingData, out: &Path) -> Result<TrainOutcome> {
        if data.layout.n_slots() != self.n_parts() {
            return Err(UdorError::config(format!(
                "model has {} parts but the data has {} slots",
                self.n_parts(),
                data.layout.n_slots()
            )));
        }
        if data.len() < self.config.batch_size {
            return Err(UdorError::config(format!(
                "{} samples cannot fill a batch of {}",
                data.len(),
                self.config.batch_size
            )));
        }
        std::fs::create_dir_all(out).map_err(|e| UdorError::io(out, e))?;
        let mut log = TrainLog::open(&out.join("train_log.csv"), self.step)?;
        let mut history = Vec::with_capacity((self.config.steps.saturating_sub(self.step)) as usize);
        let mut checkpoints = Vec::new();
        while self.step < self.config.steps {
            let breakdown = match self.train_step(data) {
                Ok(b) => b,
                Err(e @ UdorError::Numeric { .. }) => {
                    let path = Self::checkpoint_path(out, self.step);
                    save_checkpoint(self, &path)?;
                    ::log::warn!("numeric failure at step {}, kept {}", self.step + 1, path.display());
                    return Err(e);
                }
                Err(e) => return Err(e),
            };
            log.append(self.step, &breakdown)?;
            history.push(breakdown);
            if self.step % 500 == 0 {
                ::log::info!(
                    "step {} rec {:.3} cla {:.3} rem {:.3} adv_g {:.3} adv_c {:.3} gp {:.3}",
                    self.step,
                    breakdown.rec,
                    breakdown.cla,
                    breakdown.rem,
                    breakdown.adv_generator,
                    breakdown.adv_critic,
                    breakdown.gp
                );
            }
            let every = self.config.checkpoint_every;
            if every > 0 && self.step % every == 0 && self.step < self.config.steps {
                let path = Self::checkpoint_path(out, self.step);
                save_checkpoint(self, &path)?;
                checkpoints.push(path);
            }
        }
        log.flush()?;
        let final_checkpoint = Self::checkpoint_path(out, self.step);
        save_checkpoint(self, &final_checkpoint)?;
        checkpoints.push(final_checkpoint.clone());
        Ok(TrainOutcome {
            history,
            checkpoints,
            final_checkpoint,
            log_path: out.join("train_log.csv"),
        })
    }
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    /// Breakdown of every step run by this call.
    pub history: Vec<LossBreakdown>,
    pub checkpoints: Vec<PathBuf>,
    pub final_checkpoint: PathBuf,
    pub log_path: PathBuf,
}

/// SHA-256 over the named parameters of a variable store, in name order.
pub fn parameter_digest(vs: &tch::nn::VarStore) -> String {
    let mut vars: Vec<_> = vs.variables().into_iter().collect();
    vars.sort_by(|a, b| a.0.cmp(&b.0));
    let mut h = Sha256::new();
    for (name, t) in vars {
        h.update(name.as_bytes());
        let flat: Vec<f64> = t
            .detach()
            .to_kind(Kind::Double)
            .flatten(0, -1)
            .try_into()
            .expect("parameter converts to f64");
        for v in flat {
            h.update(v.to_le_bytes());
        }
    }
    h.finalize().iter().map(|b| format!("{b:02x}")).collect()
}
