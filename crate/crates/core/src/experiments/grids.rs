//! Object-removed and object-swapped reconstructions laid out as PNG grids.

use std::path::{Path, PathBuf};

use tch::Tensor;

use crate::error::{Result, UdorError};
use crate::latent::{reset_parts_batch, swap_parts_batch};
use crate::networks::{tensor_to_images, ModelBundle};
use crate::synthdata::GrayImage;

/// Gap between grid cells, drawn mid-grey.
const GAP: usize = 2;
const GAP_VALUE: u8 = 128;

fn check_part(model: &ModelBundle, k: usize) -> Result<()> {
    let n = model.arch.n_parts as usize;
    if k >= n {
        return Err(UdorError::Index { index: k, len: n });
    }
    Ok(())
}

fn codes_of(model: &ModelBundle, img: &GrayImage) -> Result<Tensor> {
    model.encode(&model.images_tensor(&[img])?)
}

/// Decoded scene with part `k` reset to the empty code.
pub fn removal_image(model: &ModelBundle, img: &GrayImage, k: usize) -> Result<GrayImage> {
    check_part(model, k)?;
    tch::no_grad(|| {
        let empty = model.encode(&model.empty_image_tensor())?;
        let code = reset_parts_batch(&codes_of(model, img)?, &[vec![k]], &empty, model.arch.n_parts as usize);
        Ok(tensor_to_images(&model.decode(&code)?)?.remove(0))
    })
}

/// Decoded scene with part `k` taken from `candidate`.
pub fn swap_image(model: &ModelBundle, img: &GrayImage, candidate: &GrayImage, k: usize) -> Result<GrayImage> {
    check_part(model, k)?;
    tch::no_grad(|| {
        let code = swap_parts_batch(
            &codes_of(model, img)?,
            &codes_of(model, candidate)?,
            &[vec![k]],
            model.arch.n_parts as usize,
        );
        Ok(tensor_to_images(&model.decode(&code)?)?.remove(0))
    })
}

/// One row: the input, its `n` single-part removals, then (with a candidate)
/// its `n` single-part swaps.
pub fn edit_grid(model: &ModelBundle, input: &GrayImage, candidate: Option<&GrayImage>) -> Result<image::GrayImage> {
    let n = model.arch.n_parts as usize;
    let mut cells = vec![input.clone()];
    for k in 0..n {
        cells.push(removal_image(model, input, k)?);
    }
    if let Some(c) = candidate {
        for k in 0..n {
            cells.push(swap_image(model, input, c, k)?);
        }
    }
    let s = input.size();
    let width = cells.len() * s + (cells.len() - 1) * GAP;
    let mut out = image::GrayImage::from_pixel(width as u32, s as u32, image::Luma([GAP_VALUE]));
    for (i, cell) in cells.iter().enumerate() {
        let x0 = i * (s + GAP);
        for r in 0..s {
            for c in 0..s {
                out.put_pixel((x0 + c) as u32, r as u32, image::Luma([cell.get(r, c)]));
            }
        }
    }
    Ok(out)
}

/// Writes `grid_NNN.png` per input; input `i` swaps from candidate
/// `i mod len` (no swap columns when `candidates` is empty).
pub fn emit_edit_grids(
    model: &ModelBundle,
    inputs: &[GrayImage],
    candidates: &[GrayImage],
    out: &Path,
) -> Result<Vec<PathBuf>> {
    std::fs::create_dir_all(out).map_err(|e| UdorError::io(out, e))?;
    let mut paths = Vec::with_capacity(inputs.len());
    for (i, input) in inputs.iter().enumerate() {
        let cand = (!candidates.is_empty()).then(|| &candidates[i % candidates.len()]);
        let grid = edit_grid(model, input, cand)?;
        let path = out.join(format!("grid_{i:03}.png"));
        grid.save(&path).map_err(|e| UdorError::io(&path, std::io::Error::other(e.to_string())))?;
        paths.push(path);
    }
    Ok(paths)
}
