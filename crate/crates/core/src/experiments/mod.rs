//! Part-length and offset sweeps, the ablation suite, edit grids and plots.
//!
//! A sweep is a grid of independent cells `(value, method, seed)`. Each cell
//! trains one model into its own directory and writes `report.json` last, so
//! a rerun skips finished cells and resumes unfinished ones from their newest
//! checkpoint. Cells that share `(value, seed)` share dataset bytes, data
//! order and initialisation.

mod grids;
mod plot;

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use tch::Device;

pub use grids::{emit_edit_grids, edit_grid, removal_image, swap_image};
pub use plot::{line_chart_svg, plot_results, Series};

use crate::error::{Result, UdorError};
use crate::metrics::{evaluate_model, EvalOptions, MetricReport, CSV_HEADER};
use crate::networks::{ArchitectureConfig, ModelBundle};
use crate::seeds;
use crate::synthdata::{generate_dataset, load_source_digits, Dataset, GlyphBank, OccupancyDistribution, SlotLayout};
use crate::training::{
    data_order_digest, load_checkpoint, parameter_digest, Method, TrainConfig, Trainer, TrainingData,
};

pub const PART_LENGTH_PRESET: [usize; 11] = [1, 3, 5, 7, 9, 11, 13, 15, 17, 19, 21];
pub const OFFSET_PRESET: [usize; 12] = [0, 1, 2, 3, 4, 5, 7, 9, 11, 13, 15, 17];
/// Part length of the offset models.
pub const OFFSET_PART_LENGTH: usize = 5;
/// Every `HOLDOUT_EVERY`-th glyph of each class is reserved for evaluation.
pub const HOLDOUT_EVERY: usize = 5;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SweepVariable {
    PartLength,
    Offset,
}

impl SweepVariable {
    pub fn name(&self) -> &'static str {
        match self {
            SweepVariable::PartLength => "part_length",
            SweepVariable::Offset => "offset",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum ArchPreset {
    #[default]
    Standard,
    Compact,
}

impl ArchPreset {
    pub fn build(&self, image_size: i64, n_parts: i64, part_length: i64) -> ArchitectureConfig {
        match self {
            ArchPreset::Standard => ArchitectureConfig::standard(image_size, n_parts, part_length),
            ArchPreset::Compact => ArchitectureConfig::compact(image_size, n_parts, part_length),
        }
    }
}

fn default_mnist() -> PathBuf {
    crate::synthdata::default_mnist_dir()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepSpec {
    pub variable: SweepVariable,
    pub values: Vec<usize>,
    #[serde(default = "all_methods")]
    pub methods: Vec<Method>,
    /// Training seeds; each seed is a full replicate of the grid.
    #[serde(default = "one_seed")]
    pub seeds: Vec<u64>,
    #[serde(default)]
    pub train: TrainConfig,
    #[serde(default)]
    pub arch: ArchPreset,
    #[serde(default)]
    pub eval: EvalOptions,
    #[serde(default = "default_train_samples")]
    pub train_samples: usize,
    #[serde(default)]
    pub data_seed: u64,
    /// Part length for offset sweeps (ignored by part-length sweeps).
    #[serde(default = "default_offset_part_length")]
    pub part_length: usize,
    #[serde(default = "default_mnist")]
    pub mnist: PathBuf,
    pub out: PathBuf,
    /// Edit grids written per cell (offset sweeps only).
    #[serde(default = "default_grids")]
    pub grids: usize,
}

fn all_methods() -> Vec<Method> {
    Method::ALL.to_vec()
}
fn one_seed() -> Vec<u64> {
    vec![0]
}
fn default_train_samples() -> usize {
    10_000
}
fn default_offset_part_length() -> usize {
    OFFSET_PART_LENGTH
}
fn default_grids() -> usize {
    4
}

impl SweepSpec {
    pub fn part_length_preset(out: &Path) -> Self {
        SweepSpec {
            variable: SweepVariable::PartLength,
            values: PART_LENGTH_PRESET.to_vec(),
            methods: all_methods(),
            seeds: one_seed(),
            train: TrainConfig::default(),
            arch: ArchPreset::Standard,
            eval: EvalOptions::default(),
            train_samples: default_train_samples(),
            data_seed: 0,
            part_length: OFFSET_PART_LENGTH,
            mnist: default_mnist(),
            out: out.to_path_buf(),
            grids: default_grids(),
        }
    }

    pub fn offset_preset(out: &Path) -> Self {
        SweepSpec {
            variable: SweepVariable::Offset,
            values: OFFSET_PRESET.to_vec(),
            methods: vec![Method::Udor],
            ..Self::part_length_preset(out)
        }
    }

    /// UDOR and its two ablations at one part length.
    pub fn ablation_preset(out: &Path, part_length: usize) -> Self {
        SweepSpec {
            values: vec![part_length],
            methods: vec![Method::Udor, Method::UdorNoRem, Method::UdorNoGan],
            ..Self::part_length_preset(out)
        }
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let spec: SweepSpec = serde_json::from_str(text).map_err(|e| {
            UdorError::config(format!("sweep spec line {} column {}: {e}", e.line(), e.column()))
        })?;
        spec.validate()?;
        Ok(spec)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| UdorError::io(path, e))?;
        Self::from_json(&text).map_err(|e| match e {
            UdorError::Config(m) => UdorError::config(format!("{}: {m}", path.display())),
            e => e,
        })
    }

    pub fn validate(&self) -> Result<()> {
        if self.values.is_empty() {
            return Err(UdorError::config("sweep values list is empty"));
        }
        if self.methods.is_empty() || self.seeds.is_empty() {
            return Err(UdorError::config("sweep needs at least one method and one seed"));
        }
        if self.train_samples == 0 {
            return Err(UdorError::config("train_samples must be positive"));
        }
        if self.variable == SweepVariable::PartLength && self.values.contains(&0) {
            return Err(UdorError::config("part lengths must be >= 1"));
        }
        if self.variable == SweepVariable::Offset && self.part_length == 0 {
            return Err(UdorError::config("part_length must be >= 1"));
        }
        self.train.validate()?;
        self.eval.validate()
    }

    pub fn layout(&self, value: usize) -> SlotLayout {
        match self.variable {
            SweepVariable::PartLength => SlotLayout::multi_mnist(),
            SweepVariable::Offset => SlotLayout::offset_pair(value),
        }
    }

    pub fn occupancy(&self) -> OccupancyDistribution {
        match self.variable {
            SweepVariable::PartLength => OccupancyDistribution::default(),
            // scenes hold one or two digits
            SweepVariable::Offset => OccupancyDistribution::Patterns {
                min_objects: 1,
                max_objects: 2,
            },
        }
    }

    pub fn part_length_of(&self, value: usize) -> usize {
        match self.variable {
            SweepVariable::PartLength => value,
            SweepVariable::Offset => self.part_length,
        }
    }

    /// Dataset directory shared by every cell with this value.
    pub fn dataset_dir(&self, value: usize) -> PathBuf {
        match self.variable {
            SweepVariable::PartLength => self.out.join("data").join("multi-mnist"),
            SweepVariable::Offset => self.out.join("data").join(format!("offset{value}")),
        }
    }

    pub fn cells(&self) -> Vec<SweepCell> {
        let mut out = Vec::new();
        for &seed in &self.seeds {
            for &value in &self.values {
                for &method in &self.methods {
                    out.push(SweepCell { value, method, seed });
                }
            }
        }
        out
    }

    pub fn cell_dir(&self, cell: &SweepCell) -> PathBuf {
        self.out.join("cells").join(cell.id(self.variable))
    }

    pub fn bank(&self) -> Result<(GlyphBank, GlyphBank)> {
        let n = self.layout(self.values[0]).n_slots();
        let classes: Vec<u8> = (0..n as u8).collect();
        Ok(load_source_digits(&self.mnist, &classes)?.split(HOLDOUT_EVERY))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct SweepCell {
    pub value: usize,
    pub method: Method,
    pub seed: u64,
}

impl SweepCell {
    pub fn id(&self, variable: SweepVariable) -> String {
        let short = match variable {
            SweepVariable::PartLength => "pl",
            SweepVariable::Offset => "off",
        };
        let method = match self.method {
            Method::Udor => "udor",
            Method::UdorNoRem => "udor-no-rem",
            Method::UdorNoGan => "udor-no-gan",
            Method::SupervisedAe => "s-ae",
        };
        format!("{short}{}_{method}_s{}", self.value, self.seed)
    }

    pub fn parse_id(spec: &SweepSpec, id: &str) -> Result<Self> {
        spec.cells()
            .into_iter()
            .find(|c| c.id(spec.variable) == id)
            .ok_or_else(|| UdorError::config(format!("no cell {id:?} in this sweep")))
    }
}

/// Bookkeeping written next to a cell's report.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellRecord {
    pub cell: SweepCell,
    pub id: String,
    pub dataset_digest: String,
    pub data_order_digest: String,
    pub init_digest: String,
    pub steps: u64,
}

/// SHA-256 over `dataset.json`, `manifest.jsonl` and every image, in order.
pub fn dataset_digest(dir: &Path) -> Result<String> {
    let ds = Dataset::open(dir)?;
    let mut h = Sha256::new();
    for name in ["dataset.json", "manifest.jsonl"] {
        let p = dir.join(name);
        h.update(fs::read(&p).map_err(|e| UdorError::io(&p, e))?);
    }
    for i in 0..ds.len() {
        let p = dir.join("images").join(format!("{i:06}.png"));
        h.update(fs::read(&p).map_err(|e| UdorError::io(&p, e))?);
    }
    Ok(h.finalize().iter().map(|b| format!("{b:02x}")).collect())
}

/// Generates every dataset the sweep needs (skipping complete ones).
pub fn prepare_data(spec: &SweepSpec) -> Result<()> {
    let (train_bank, _) = spec.bank()?;
    let mut seen = Vec::new();
    for &value in &spec.values {
        let dir = spec.dataset_dir(value);
        if seen.contains(&dir) {
            continue;
        }
        seen.push(dir.clone());
        if Dataset::open(&dir).is_ok_and(|d| d.len() == spec.train_samples) {
            continue;
        }
        let seed = seeds::derive_seed(spec.data_seed, "sweep-data", value as u64);
        generate_dataset(&dir, &spec.layout(value), &train_bank, spec.train_samples, &spec.occupancy(), seed)?;
    }
    Ok(())
}

fn latest_checkpoint(dir: &Path) -> Option<PathBuf> {
    let entries = fs::read_dir(dir).ok()?;
    entries
        .filter_map(|e| e.ok())
        .filter_map(|e| {
            let name = e.file_name().into_string().ok()?;
            let step: u64 = name.strip_prefix("ckpt_")?.strip_suffix(".bin")?.parse().ok()?;
            Some((step, e.path()))
        })
        .max_by_key(|(s, _)| *s)
        .map(|(_, p)| p)
}

/// Trains (or resumes) and evaluates one cell; `report.json` is written last.
pub fn run_cell(spec: &SweepSpec, cell: &SweepCell) -> Result<MetricReport> {
    let dir = spec.cell_dir(cell);
    let report_path = dir.join("report.json");
    if report_path.exists() {
        return MetricReport::load(&report_path);
    }
    fs::create_dir_all(&dir).map_err(|e| UdorError::io(&dir, e))?;
    let data_dir = spec.dataset_dir(cell.value);
    let dataset = Dataset::open(&data_dir)?;
    let layout = dataset.info.layout.clone();
    let data = TrainingData::from_dataset(&dataset)?;
    let arch = spec.arch.build(
        layout.canvas_size as i64,
        layout.n_slots() as i64,
        spec.part_length_of(cell.value) as i64,
    );
    let mut base = spec.train.clone();
    base.seed = cell.seed;
    if base.checkpoint_every == 0 {
        base.checkpoint_every = 1000;
    }
    let config = cell.method.configure(&base);

    let mut trainer = Trainer::new(&arch, &config, Device::Cpu)?;
    let record = CellRecord {
        cell: *cell,
        id: cell.id(spec.variable),
        dataset_digest: dataset_digest(&data_dir)?,
        data_order_digest: data_order_digest(config.seed, config.steps.min(1000), data.len(), config.batch_size),
        init_digest: parameter_digest(&trainer.model.generator_vs),
        steps: config.steps,
    };
    let record_path = dir.join("cell.json");
    fs::write(&record_path, serde_json::to_vec_pretty(&record).expect("cell record serializes"))
        .map_err(|e| UdorError::io(&record_path, e))?;

    if let Some(ckpt) = latest_checkpoint(&dir) {
        let resumed = load_checkpoint(&ckpt, Device::Cpu)?;
        if resumed.config == config && resumed.model.arch == arch {
            log::info!("{}: resuming from {}", record.id, ckpt.display());
            trainer = resumed;
        }
    }
    if trainer.step < config.steps {
        trainer.train(&data, &dir)?;
    }

    let (train_bank, test_bank) = spec.bank()?;
    let mut eval = spec.eval;
    eval.seed = seeds::derive_seed(spec.data_seed, "sweep-eval", cell.value as u64);
    let mut report = evaluate_model(&trainer.model, &layout, &train_bank, &test_bank, &eval)?;
    report.method = Some(cell.method.name().to_string());
    if spec.variable == SweepVariable::Offset && spec.grids > 0 {
        write_cell_grids(&trainer.model, &layout, &test_bank, spec.grids, eval.seed, &dir.join("grids"))?;
    }
    report.save(&report_path)?;
    Ok(report)
}

fn write_cell_grids(
    model: &ModelBundle,
    layout: &SlotLayout,
    bank: &GlyphBank,
    count: usize,
    seed: u64,
    out: &Path,
) -> Result<Vec<PathBuf>> {
    let occ = OccupancyDistribution::Fixed {
        pattern: vec![true; layout.n_slots()],
    };
    let scene = |label: &str, i: usize| {
        crate::synthdata::random_sample(layout, bank, &occ, seeds::derive_seed(seed, label, i as u64))
            .map(|s| s.image)
    };
    let inputs: Vec<_> = (0..count).map(|i| scene("grid-input", i)).collect::<Result<_>>()?;
    let candidates: Vec<_> = (0..count).map(|i| scene("grid-candidate", i)).collect::<Result<_>>()?;
    emit_edit_grids(model, &inputs, &candidates, out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepFailure {
    pub cell: String,
    pub error: String,
}

#[derive(Debug, Clone, Default)]
pub struct SweepOutcome {
    pub reports: Vec<(SweepCell, MetricReport)>,
    pub failures: Vec<SweepFailure>,
}

/// Collects finished cells into `results.csv` (and failures into
/// `failures.csv`), in cell order.
pub fn collect_results(spec: &SweepSpec, failures: &[SweepFailure]) -> Result<SweepOutcome> {
    let mut reports = Vec::new();
    let mut csv = format!("seed,{CSV_HEADER}\n");
    for cell in spec.cells() {
        let path = spec.cell_dir(&cell).join("report.json");
        if path.exists() {
            let r = MetricReport::load(&path)?;
            csv.push_str(&format!("{},{}\n", cell.seed, r.csv_row()));
            reports.push((cell, r));
        }
    }
    fs::create_dir_all(&spec.out).map_err(|e| UdorError::io(&spec.out, e))?;
    let p = spec.out.join("results.csv");
    fs::write(&p, csv).map_err(|e| UdorError::io(&p, e))?;
    let p = spec.out.join("failures.csv");
    if failures.is_empty() {
        let _ = fs::remove_file(&p);
    } else {
        let mut text = String::from("cell,error\n");
        for f in failures {
            text.push_str(&format!("{},\"{}\"\n", f.cell, f.error.replace('"', "'")));
        }
        fs::write(&p, text).map_err(|e| UdorError::io(&p, e))?;
    }
    Ok(SweepOutcome {
        reports,
        failures: failures.to_vec(),
    })
}

/// Runs every cell in this process. A failing cell is recorded and the sweep
/// continues.
pub fn run_sweep(spec: &SweepSpec) -> Result<SweepOutcome> {
    spec.validate()?;
    prepare_data(spec)?;
    let mut failures = Vec::new();
    for cell in spec.cells() {
        let id = cell.id(spec.variable);
        if let Err(e) = run_cell(spec, &cell) {
            log::warn!("cell {id} failed: {e}");
            failures.push(SweepFailure {
                cell: id,
                error: e.to_string(),
            });
        }
    }
    let outcome = collect_results(spec, &failures)?;
    plot_results(&spec.out.join("results.csv"), &spec.out)?;
    Ok(outcome)
}

pub fn run_part_length_sweep(spec: &SweepSpec) -> Result<SweepOutcome> {
    if spec.variable != SweepVariable::PartLength {
        return Err(UdorError::config("not a part-length sweep"));
    }
    run_sweep(spec)
}

pub fn run_offset_sweep(spec: &SweepSpec) -> Result<SweepOutcome> {
    if spec.variable != SweepVariable::Offset {
        return Err(UdorError::config("not an offset sweep"));
    }
    run_sweep(spec)
}

/// UDOR, UDOR[-Rem] and UDOR[-GAN] at the spec's single part length.
pub fn run_ablation_suite(spec: &SweepSpec) -> Result<SweepOutcome> {
    if spec.variable != SweepVariable::PartLength || spec.values.len() != 1 {
        return Err(UdorError::config("the ablation suite runs at exactly one part length"));
    }
    let mut s = spec.clone();
    s.methods = vec![Method::Udor, Method::UdorNoRem, Method::UdorNoGan];
    run_sweep(&s)
}
