use std::path::{Path, PathBuf};

use anyhow::Result;
use clap::Args;
use serde::Serialize;
use tch::Device;
use udor_core::experiments::{emit_edit_grids, removal_image};
use udor_core::synthdata::GrayImage;
use udor_core::training::load_checkpoint;
use udor_core::UdorError;

use super::usage;
use crate::run_record;

#[derive(Args, Debug)]
pub struct EditArgs {
    #[arg(long)]
    ckpt: PathBuf,
    /// PNG files, or directories of PNGs.
    #[arg(long, required = true, num_args = 1..)]
    input: Vec<PathBuf>,
    /// Source scenes for part swaps, used round-robin.
    #[arg(long, num_args = 1..)]
    candidate: Vec<PathBuf>,
    /// Only write the reconstruction with this part reset.
    #[arg(long)]
    remove_part: Option<usize>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Serialize)]
struct EditRun<'a> {
    ckpt: &'a Path,
    inputs: &'a [PathBuf],
    candidates: &'a [PathBuf],
    remove_part: Option<usize>,
    out: &'a Path,
}

fn expand(paths: &[PathBuf]) -> Result<Vec<PathBuf>> {
    let mut files = Vec::new();
    for p in paths {
        if p.is_dir() {
            let mut found: Vec<PathBuf> = std::fs::read_dir(p)
                .map_err(|e| UdorError::io(p, e))?
                .filter_map(|e| e.ok().map(|e| e.path()))
                .filter(|f| f.extension().is_some_and(|x| x.eq_ignore_ascii_case("png")))
                .collect();
            found.sort();
            files.extend(found);
        } else {
            files.push(p.clone());
        }
    }
    Ok(files)
}

fn load_all(paths: &[PathBuf], size: usize) -> Result<Vec<GrayImage>> {
    paths
        .iter()
        .map(|p| {
            let img = GrayImage::load_png(p)?;
            if img.size() != size {
                return Err(UdorError::shape(format!(
                    "{} is {}x{0}, the model expects {size}x{size}",
                    p.display(),
                    img.size()
                ))
                .into());
            }
            Ok(img)
        })
        .collect()
}

pub fn run(a: EditArgs) -> Result<()> {
    let inputs = expand(&a.input)?;
    if inputs.is_empty() {
        return Err(usage("no input images found"));
    }
    let candidates = expand(&a.candidate)?;
    let trainer = load_checkpoint(&a.ckpt, Device::Cpu)?;
    let model = &trainer.model;
    let size = model.arch.image_size as usize;
    let images = load_all(&inputs, size)?;
    let cands = load_all(&candidates, size)?;
    run_record::write(
        &a.out,
        "edit",
        &EditRun {
            ckpt: &a.ckpt,
            inputs: &inputs,
            candidates: &candidates,
            remove_part: a.remove_part,
            out: &a.out,
        },
    )?;
    let written = match a.remove_part {
        Some(k) => {
            let mut paths = Vec::new();
            for (i, img) in images.iter().enumerate() {
                let path = a.out.join(format!("removed_{i:03}_part{k}.png"));
                removal_image(model, img, k)?.save_png(&path)?;
                paths.push(path);
            }
            paths
        }
        None => emit_edit_grids(model, &images, &cands, &a.out)?,
    };
    for p in written {
        println!("{}", p.display());
    }
    Ok(())
}
