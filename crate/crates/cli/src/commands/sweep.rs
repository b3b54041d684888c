use std::path::PathBuf;
use std::process::{Child, Command};

use anyhow::Result;
use clap::{Args, ValueEnum};
use udor_core::experiments::{
    collect_results, plot_results, prepare_data, run_cell as run_one, SweepCell, SweepFailure, SweepSpec,
};
use udor_core::UdorError;

use super::usage;
use crate::run_record;

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum SweepPreset {
    PartLength,
    Offset,
    Ablation,
}

#[derive(Args, Debug)]
pub struct SweepArgs {
    /// Sweep spec JSON (a previous run.json works).
    #[arg(long, conflicts_with = "preset")]
    spec: Option<PathBuf>,
    #[arg(long, value_enum, required_unless_present = "spec")]
    preset: Option<SweepPreset>,
    /// Overrides the spec's output directory.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Cells trained concurrently, each in its own process.
    #[arg(long, default_value_t = 1, value_parser = clap::value_parser!(u64).range(1..))]
    jobs: u64,
    /// Exit 0 even when some cells failed.
    #[arg(long)]
    allow_partial: bool,
}

#[derive(Args, Debug)]
pub struct CellArgs {
    #[arg(long)]
    spec: PathBuf,
    #[arg(long)]
    cell: String,
}

#[derive(Args, Debug)]
pub struct PlotArgs {
    /// A sweep's results.csv.
    #[arg(long)]
    results: PathBuf,
    #[arg(long)]
    out: PathBuf,
}

fn resolve(a: &SweepArgs) -> Result<SweepSpec> {
    let mut spec = match (&a.spec, a.preset) {
        (Some(p), _) => run_record::read::<serde_json::Value>(p)
            .and_then(|v| Ok(SweepSpec::from_json(&v.to_string())?))?,
        (None, Some(preset)) => {
            let out = a.out.clone().ok_or_else(|| usage("--out is required with --preset"))?;
            match preset {
                SweepPreset::PartLength => SweepSpec::part_length_preset(&out),
                SweepPreset::Offset => SweepSpec::offset_preset(&out),
                SweepPreset::Ablation => SweepSpec::ablation_preset(&out, 5),
            }
        }
        (None, None) => return Err(usage("give --spec or --preset")),
    };
    if let Some(out) = &a.out {
        spec.out = out.clone();
    }
    spec.validate()?;
    Ok(spec)
}

pub fn run(a: SweepArgs) -> Result<()> {
    let spec = resolve(&a)?;
    run_record::write(&spec.out, "sweep", &spec)?;
    let spec_path = spec.out.join("spec.json");
    std::fs::write(&spec_path, serde_json::to_vec_pretty(&spec)?).map_err(|e| UdorError::io(&spec_path, e))?;
    prepare_data(&spec)?;

    let cells = spec.cells();
    let mut failures = Vec::new();
    if a.jobs <= 1 {
        for cell in &cells {
            let id = cell.id(spec.variable);
            if let Err(e) = run_one(&spec, cell) {
                log::warn!("cell {id} failed: {e}");
                failures.push(SweepFailure { cell: id, error: e.to_string() });
            }
        }
    } else {
        let exe = std::env::current_exe()?;
        let mut pending: Vec<String> = cells.iter().rev().map(|c| c.id(spec.variable)).collect();
        let mut running: Vec<(String, Child)> = Vec::new();
        while !pending.is_empty() || !running.is_empty() {
            while running.len() < a.jobs as usize {
                let Some(id) = pending.pop() else { break };
                let child = Command::new(&exe)
                    .args(["sweep-cell", "--spec"])
                    .arg(&spec_path)
                    .args(["--cell", &id])
                    .spawn()?;
                running.push((id, child));
            }
            let mut i = 0;
            while i < running.len() {
                if let Some(status) = running[i].1.try_wait()? {
                    let (id, _) = running.swap_remove(i);
                    if !status.success() {
                        log::warn!("cell {id} failed: {status}");
                        failures.push(SweepFailure { cell: id, error: format!("worker exited with {status}") });
                    }
                } else {
                    i += 1;
                }
            }
            std::thread::sleep(std::time::Duration::from_millis(200));
        }
    }
    let outcome = collect_results(&spec, &failures)?;
    let charts = plot_results(&spec.out.join("results.csv"), &spec.out)?;
    println!("{}", spec.out.join("results.csv").display());
    for c in charts {
        println!("{}", c.display());
    }
    if !outcome.failures.is_empty() && !a.allow_partial {
        return Err(anyhow::anyhow!(
            "{} of {} cells failed (see failures.csv)",
            outcome.failures.len(),
            cells.len()
        ));
    }
    Ok(())
}

pub fn run_cell(a: CellArgs) -> Result<()> {
    let spec = SweepSpec::load(&a.spec)?;
    let cell = SweepCell::parse_id(&spec, &a.cell)?;
    let r = run_one(&spec, &cell)?;
    println!("{} M {:.4} V {:.4}", a.cell, r.modularity, r.integrity);
    Ok(())
}

pub fn plot(a: PlotArgs) -> Result<()> {
    for p in plot_results(&a.results, &a.out)? {
        println!("{}", p.display());
    }
    Ok(())
}
