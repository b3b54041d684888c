use std::path::PathBuf;

use anyhow::Result;
use clap::{Args, ValueEnum};
use serde::{Deserialize, Serialize};
use udor_core::experiments::HOLDOUT_EVERY;
use udor_core::synthdata::{default_mnist_dir, generate_dataset, load_source_digits, OccupancyDistribution};

use super::{data_path, parse_classes, usage, LayoutPreset};
use crate::run_record;

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Split {
    /// Four of every five glyphs per class.
    Train,
    /// The remaining fifth.
    Test,
    All,
}

#[derive(Args, Debug)]
pub struct GenerateArgs {
    /// JSON config (a previous run.json works); flags override it.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long, value_enum)]
    preset: Option<LayoutPreset>,
    /// Number of scenes.
    #[arg(long)]
    n: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory.
    #[arg(long, required_unless_present = "config")]
    out: Option<PathBuf>,
    /// Maximum per-axis jitter in pixels.
    #[arg(long)]
    offset: Option<usize>,
    /// Digit class of each slot, e.g. `0,1,2`.
    #[arg(long, value_parser = parse_classes)]
    classes: Option<Vec<u8>>,
    /// Each slot occupied independently with this probability.
    #[arg(long, conflicts_with = "objects")]
    occupancy: Option<f64>,
    /// Uniform object count in MIN:MAX.
    #[arg(long)]
    objects: Option<String>,
    #[arg(long, value_enum)]
    split: Option<Split>,
    /// Directory with the MNIST IDX archives.
    #[arg(long)]
    mnist: Option<PathBuf>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GenerateConfig {
    pub preset: LayoutPreset,
    pub n: usize,
    pub seed: u64,
    pub out: PathBuf,
    pub offset: usize,
    pub classes: Option<Vec<u8>>,
    pub occupancy: Option<OccupancyDistribution>,
    pub split: Split,
    pub mnist: PathBuf,
}

fn parse_objects(s: &str) -> Result<OccupancyDistribution> {
    let (a, b) = s
        .split_once(':')
        .ok_or_else(|| usage(format!("--objects expects MIN:MAX, got {s:?}")))?;
    let parse = |v: &str| v.parse::<usize>().map_err(|_| usage(format!("bad object count {v:?}")));
    Ok(OccupancyDistribution::Patterns {
        min_objects: parse(a)?,
        max_objects: parse(b)?,
    })
}

fn resolve(a: GenerateArgs) -> Result<GenerateConfig> {
    let mut c = match &a.config {
        Some(p) => run_record::read::<GenerateConfig>(p)?,
        None => GenerateConfig {
            preset: LayoutPreset::MultiMnist,
            n: 10_000,
            seed: 0,
            out: PathBuf::new(),
            offset: 0,
            classes: None,
            occupancy: None,
            split: Split::Train,
            mnist: default_mnist_dir(),
        },
    };
    if let Some(v) = a.preset {
        c.preset = v;
    }
    if let Some(v) = a.n {
        c.n = v;
    }
    if let Some(v) = a.seed {
        c.seed = v;
    }
    if let Some(v) = a.out {
        c.out = v;
    }
    if let Some(v) = a.offset {
        c.offset = v;
    }
    if let Some(v) = a.classes {
        c.classes = Some(v);
    }
    if let Some(p) = a.occupancy {
        c.occupancy = Some(OccupancyDistribution::Independent { p });
    }
    if let Some(s) = a.objects {
        c.occupancy = Some(parse_objects(&s)?);
    }
    if let Some(v) = a.split {
        c.split = v;
    }
    if let Some(v) = a.mnist {
        c.mnist = v;
    }
    if c.out.as_os_str().is_empty() {
        return Err(usage("--out is required"));
    }
    Ok(c)
}

pub fn run(args: GenerateArgs) -> Result<()> {
    let c = resolve(args)?;
    let layout = c.preset.layout(c.offset);
    let n_slots = layout.n_slots();
    let classes = c.classes.clone().unwrap_or_else(|| (0..n_slots as u8).collect());
    if classes.len() != n_slots {
        return Err(usage(format!("{} classes for {n_slots} slots", classes.len())));
    }
    let occupancy = c.occupancy.clone().unwrap_or(match c.preset {
        LayoutPreset::OffsetPair => OccupancyDistribution::Patterns {
            min_objects: 1,
            max_objects: 2,
        },
        _ => OccupancyDistribution::default(),
    });
    let bank = load_source_digits(&data_path(&c.mnist), &classes)?;
    let bank = match c.split {
        Split::Train => bank.split(HOLDOUT_EVERY).0,
        Split::Test => bank.split(HOLDOUT_EVERY).1,
        Split::All => bank,
    };
    let info = generate_dataset(&c.out, &layout, &bank, c.n, &occupancy, c.seed)?;
    run_record::write(&c.out, "generate-data", &c)?;
    println!(
        "{}: {} scenes, slot counts {:?}",
        c.out.display(),
        info.n_samples,
        info.slot_counts
    );
    Ok(())
}
