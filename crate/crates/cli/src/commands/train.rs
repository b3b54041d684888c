use std::path::PathBuf;

use anyhow::{Context, Result};
use clap::{Args, ValueEnum};
use serde::{Deserialize, Serialize};
use tch::Device;
use udor_core::experiments::ArchPreset;
use udor_core::latent::RemovalPolicy;
use udor_core::losses::PenaltySamples;
use udor_core::networks::ArchitectureConfig;
use udor_core::synthdata::Dataset;
use udor_core::training::{load_checkpoint, Method, TrainConfig, Trainer, TrainingData};
use udor_core::UdorError;

use super::{data_path, usage};
use crate::run_record;

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Ablate {
    Rem,
    Gan,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Baseline {
    Sae,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum ArchArg {
    Standard,
    Compact,
}

#[derive(Args, Debug)]
pub struct TrainArgs {
    /// JSON config (a previous run.json works); flags override it.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Dataset directory (relative paths also resolve under $UDOR_DATA_DIR).
    #[arg(long)]
    data: Option<PathBuf>,
    /// Output directory for checkpoints and the log.
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    n_parts: Option<i64>,
    #[arg(long)]
    part_length: Option<i64>,
    #[arg(long, value_enum)]
    arch: Option<ArchArg>,
    #[arg(long)]
    steps: Option<u64>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    batch_size: Option<usize>,
    #[arg(long)]
    critic_steps: Option<usize>,
    /// Generator-side learning rate.
    #[arg(long)]
    lr: Option<f64>,
    #[arg(long)]
    critic_lr: Option<f64>,
    #[arg(long)]
    rho: Option<f64>,
    #[arg(long)]
    tau: Option<f64>,
    #[arg(long)]
    omega: Option<f64>,
    #[arg(long)]
    lambda_gp: Option<f64>,
    #[arg(long)]
    alpha: Option<f64>,
    #[arg(long)]
    beta: Option<f64>,
    #[arg(long)]
    gamma: Option<f64>,
    #[arg(long)]
    eta: Option<f64>,
    /// Drop a component: `rem` gives UDOR[-Rem], `gan` gives UDOR[-GAN].
    #[arg(long, value_enum, conflicts_with = "baseline")]
    ablate: Vec<Ablate>,
    /// Supervised autoencoder baseline.
    #[arg(long, value_enum)]
    baseline: Option<Baseline>,
    /// Reset each part with this probability instead of exactly one part.
    #[arg(long)]
    removal_subset: Option<f64>,
    /// Evaluate the gradient penalty at the fakes instead of interpolates.
    #[arg(long)]
    penalty_at_fakes: bool,
    #[arg(long)]
    checkpoint_every: Option<u64>,
    #[arg(long)]
    threads: Option<usize>,
    /// Continue from this checkpoint.
    #[arg(long)]
    resume: Option<PathBuf>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TrainRun {
    pub data: PathBuf,
    pub out: PathBuf,
    pub arch: ArchitectureConfig,
    pub train: TrainConfig,
    #[serde(default)]
    pub resume: Option<PathBuf>,
}

fn resolve(a: TrainArgs) -> Result<(TrainRun, Dataset)> {
    let from_file = match &a.config {
        Some(p) => Some(run_record::read::<TrainRun>(p)?),
        None => None,
    };
    let data = a
        .data
        .clone()
        .or_else(|| from_file.as_ref().map(|r| r.data.clone()))
        .ok_or_else(|| usage("--data is required"))?;
    let data = data_path(&data);
    let dataset = Dataset::open(&data).with_context(|| format!("opening dataset {}", data.display()))?;
    let layout = &dataset.info.layout;

    let mut arch = match (&from_file, a.arch) {
        (Some(r), None) => r.arch.clone(),
        (Some(r), Some(p)) => preset(p).build(r.arch.image_size, r.arch.n_parts, r.arch.part_length),
        (None, p) => preset(p.unwrap_or(ArchArg::Standard)).build(layout.canvas_size as i64, layout.n_slots() as i64, 5),
    };
    if let Some(n) = a.n_parts {
        arch.n_parts = n;
    }
    if let Some(l) = a.part_length {
        arch.part_length = l;
    }
    if arch.n_parts as usize != layout.n_slots() {
        return Err(UdorError::config(format!(
            "--n-parts {} but the dataset has {} slots",
            arch.n_parts,
            layout.n_slots()
        ))
        .into());
    }

    let mut t = from_file.as_ref().map(|r| r.train.clone()).unwrap_or_default();
    macro_rules! set {
        ($($flag:ident => $($field:ident).+;)*) => {
            $(if let Some(v) = a.$flag { t.$($field).+ = v; })*
        };
    }
    set! {
        steps => steps;
        seed => seed;
        batch_size => batch_size;
        critic_steps => critic_steps;
        lr => generator_optimizer.lr;
        critic_lr => critic_optimizer.lr;
        rho => weights.rho;
        tau => weights.tau;
        omega => weights.omega;
        lambda_gp => weights.lambda_gp;
        alpha => weights.alpha;
        beta => weights.beta;
        gamma => weights.gamma;
        eta => weights.eta;
        checkpoint_every => checkpoint_every;
        threads => threads;
    }
    if let Some(p) = a.removal_subset {
        t.removal = RemovalPolicy::Subset { p };
    }
    if a.penalty_at_fakes {
        t.penalty_samples = PenaltySamples::Fakes;
    }
    if a.baseline.is_some() {
        t = Method::SupervisedAe.configure(&t);
    } else if !a.ablate.is_empty() {
        t = Method::Udor.configure(&t);
        t.ablation.disable_rem = a.ablate.contains(&Ablate::Rem);
        t.ablation.disable_gan = a.ablate.contains(&Ablate::Gan);
    }
    let out = a
        .out
        .or_else(|| from_file.as_ref().map(|r| r.out.clone()))
        .unwrap_or_else(|| PathBuf::from(format!("runs/train-s{}", t.seed)));
    let resume = a.resume.or_else(|| from_file.and_then(|r| r.resume));
    Ok((
        TrainRun {
            data,
            out,
            arch,
            train: t,
            resume,
        },
        dataset,
    ))
}

fn preset(a: ArchArg) -> ArchPreset {
    match a {
        ArchArg::Standard => ArchPreset::Standard,
        ArchArg::Compact => ArchPreset::Compact,
    }
}

pub fn run(args: TrainArgs) -> Result<()> {
    let (run, dataset) = resolve(args)?;
    run.arch.validate()?;
    run.train.validate()?;
    run_record::write(&run.out, "train", &run)?;
    let data = TrainingData::from_dataset(&dataset)?;
    let mut trainer = match &run.resume {
        Some(ckpt) => {
            let mut t = load_checkpoint(ckpt, Device::Cpu)?;
            if t.model.arch != run.arch {
                return Err(UdorError::config("the resumed checkpoint has a different architecture").into());
            }
            t.config.steps = run.train.steps;
            t
        }
        None => Trainer::new(&run.arch, &run.train, Device::Cpu)?,
    };
    let outcome = trainer.train(&data, &run.out)?;
    if let Some(last) = outcome.history.last() {
        println!(
            "step {}: rec {:.4} cla {:.4} rem {:.4} adv_g {:.4} adv_c {:.4} gp {:.4}",
            trainer.step, last.rec, last.cla, last.rem, last.adv_generator, last.adv_critic, last.gp
        );
    }
    println!("{}", outcome.final_checkpoint.display());
    Ok(())
}
