use std::path::PathBuf;

use anyhow::Result;
use clap::Args;
use serde::{Deserialize, Serialize};
use tch::Device;
use udor_core::experiments::HOLDOUT_EVERY;
use udor_core::metrics::{evaluate_model, EvalOptions};
use udor_core::synthdata::{default_mnist_dir, load_source_digits, Dataset, SlotLayout};
use udor_core::training::load_checkpoint;

use super::{data_path, parse_classes, usage, LayoutPreset};
use crate::run_record;

#[derive(Args, Debug)]
pub struct EvalArgs {
    /// JSON config (a previous run.json works); flags override it.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long, required_unless_present = "config")]
    ckpt: Option<PathBuf>,
    /// Fixed objects per slot.
    #[arg(long = "T", value_parser = clap::value_parser!(u64).range(1..))]
    t: Option<u64>,
    /// Scenes per fixed object.
    #[arg(long = "D", value_parser = clap::value_parser!(u64).range(2..))]
    d: Option<u64>,
    #[arg(long)]
    seed: Option<u64>,
    /// Scenes for fitting the linear probe (0 skips it).
    #[arg(long)]
    probe_train: Option<usize>,
    #[arg(long)]
    probe_test: Option<usize>,
    /// Dataset whose layout and digit classes the model was trained on.
    #[arg(long)]
    data: Option<PathBuf>,
    /// Layout when no dataset is given (default from the part count).
    #[arg(long, value_enum)]
    preset: Option<LayoutPreset>,
    #[arg(long)]
    offset: Option<usize>,
    #[arg(long, value_parser = parse_classes)]
    classes: Option<Vec<u8>>,
    #[arg(long)]
    mnist: Option<PathBuf>,
    /// Report path (default: report.json beside the checkpoint).
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EvalRun {
    pub ckpt: PathBuf,
    pub out: PathBuf,
    pub layout: SlotLayout,
    pub classes: Vec<u8>,
    pub mnist: PathBuf,
    pub options: EvalOptions,
}

fn resolve(a: EvalArgs, n_parts: impl FnOnce(&PathBuf) -> Result<usize>) -> Result<EvalRun> {
    let file = match &a.config {
        Some(p) => Some(run_record::read::<EvalRun>(p)?),
        None => None,
    };
    let ckpt = a
        .ckpt
        .or_else(|| file.as_ref().map(|f| f.ckpt.clone()))
        .ok_or_else(|| usage("--ckpt is required"))?;
    let mut options = file.as_ref().map(|f| f.options).unwrap_or_default();
    if let Some(t) = a.t {
        options.groups = t as usize;
    }
    if let Some(d) = a.d {
        options.per_group = d as usize;
    }
    if let Some(s) = a.seed {
        options.seed = s;
    }
    if let Some(n) = a.probe_train {
        options.probe_train = n;
    }
    if let Some(n) = a.probe_test {
        options.probe_test = n;
    }
    let (mut layout, mut classes) = match (&a.data, &file) {
        (Some(d), _) => {
            let ds = Dataset::open(&data_path(d))?;
            (ds.info.layout, ds.info.classes)
        }
        (None, Some(f)) if a.preset.is_none() => (f.layout.clone(), f.classes.clone()),
        _ => {
            let n = n_parts(&ckpt)?;
            let layout = a.preset.unwrap_or(LayoutPreset::for_parts(n)).layout(0);
            let classes = (0..layout.n_slots() as u8).collect();
            (layout, classes)
        }
    };
    if let Some(o) = a.offset {
        layout.offset_range = o;
    }
    if let Some(c) = a.classes {
        classes = c;
    }
    let mnist = a
        .mnist
        .or_else(|| file.as_ref().map(|f| f.mnist.clone()))
        .unwrap_or_else(default_mnist_dir);
    let out = a
        .out
        .or_else(|| file.as_ref().map(|f| f.out.clone()))
        .unwrap_or_else(|| ckpt.with_file_name("report.json"));
    Ok(EvalRun {
        ckpt,
        out,
        layout,
        classes,
        mnist,
        options,
    })
}

pub fn run(args: EvalArgs) -> Result<()> {
    let run = resolve(args, |ckpt| {
        Ok(udor_core::training::read_checkpoint_header(ckpt)?.arch.n_parts as usize)
    })?;
    run.options.validate()?;
    let trainer = load_checkpoint(&run.ckpt, Device::Cpu)?;
    let (train_bank, test_bank) = load_source_digits(&data_path(&run.mnist), &run.classes)?.split(HOLDOUT_EVERY);
    let report = evaluate_model(&trainer.model, &run.layout, &train_bank, &test_bank, &run.options)?;
    let dir = run.out.parent().map(|p| p.to_path_buf()).unwrap_or_default();
    let dir = if dir.as_os_str().is_empty() { PathBuf::from(".") } else { dir };
    std::fs::create_dir_all(&dir).map_err(|e| udor_core::UdorError::io(&dir, e))?;
    report.save(&run.out)?;
    run_record::write(&dir, "eval", &run)?;
    println!(
        "M {:.4} V {:.4} (identity map: M {:.4} V {:.4}) map {:?}{}",
        report.modularity,
        report.integrity,
        report.modularity_identity,
        report.integrity_identity,
        report.slot_to_part,
        if report.degenerate { " (collided)" } else { "" }
    );
    println!(
        "clearance {:.4} -> {:.4}",
        report.clearance_before, report.clearance_after
    );
    if let (Some(mi), Some(ma)) = (report.micro_f1, report.macro_f1) {
        println!("micro-F1 {mi:.2} macro-F1 {ma:.2}");
    }
    println!("{}", run.out.display());
    Ok(())
}
