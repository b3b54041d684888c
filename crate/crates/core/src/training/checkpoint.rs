//! Binary checkpoint: magic, version, JSON header, raw little-endian tensor
//! payload, SHA-256 trailer over everything before it.
//!
//! ```text
//! "UDORCKPT" | u32 version | u64 header_len | header JSON | payload | sha256
//! ```
//!
//! The payload holds the tensors listed in the header, in that order:
//! generator and critic parameters, then both optimizers' moment estimates,
//! each group sorted by name.

use std::collections::HashMap;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use tch::{Device, Kind, Tensor};

use super::{TrainConfig, Trainer};
use crate::error::{Result, UdorError};
use crate::losses::LossBreakdown;
use crate::networks::{ArchitectureConfig, ModelBundle};

pub const CHECKPOINT_MAGIC: &[u8; 8] = b"UDORCKPT";
pub const CHECKPOINT_FORMAT: &str = "udor-checkpoint/1";
const VERSION: u32 = 1;

/// Every random stream is derived from `(seed, label, step)`, so this pair is
/// the complete random state of a run.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct RngState {
    pub seed: u64,
    pub step: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TensorEntry {
    pub name: String,
    pub dtype: String,
    pub shape: Vec<i64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckpointHeader {
    pub format: String,
    pub arch: ArchitectureConfig,
    pub config: TrainConfig,
    pub step: u64,
    pub rng: RngState,
    pub running: LossBreakdown,
    pub generator_adam_steps: u64,
    pub critic_adam_steps: u64,
    pub tensors: Vec<TensorEntry>,
}

fn sorted_vars(vs: &tch::nn::VarStore) -> Vec<(String, Tensor)> {
    let mut v: Vec<_> = vs.variables().into_iter().collect();
    v.sort_by(|a, b| a.0.cmp(&b.0));
    v
}

fn dtype_of(kind: Kind) -> Result<(&'static str, usize)> {
    match kind {
        Kind::Float => Ok(("f32", 4)),
        Kind::Double => Ok(("f64", 8)),
        k => Err(UdorError::Format(format!("unsupported tensor kind {k:?}"))),
    }
}

fn tensor_bytes(t: &Tensor) -> Result<Vec<u8>> {
    let t = t.detach().to_device(Device::Cpu).contiguous().flatten(0, -1);
    Ok(match t.kind() {
        Kind::Float => Vec::<f32>::try_from(&t)?
            .iter()
            .flat_map(|v| v.to_le_bytes())
            .collect(),
        Kind::Double => Vec::<f64>::try_from(&t)?
            .iter()
            .flat_map(|v| v.to_le_bytes())
            .collect(),
        k => return Err(UdorError::Format(format!("unsupported tensor kind {k:?}"))),
    })
}

fn tensor_from_bytes(bytes: &[u8], dtype: &str, shape: &[i64]) -> Result<Tensor> {
    let t = match dtype {
        "f32" => {
            let v: Vec<f32> = bytes
                .chunks_exact(4)
                .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
                .collect();
            Tensor::from_slice(&v)
        }
        "f64" => {
            let v: Vec<f64> = bytes
                .chunks_exact(8)
                .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
                .collect();
            Tensor::from_slice(&v)
        }
        d => return Err(UdorError::Format(format!("unknown dtype {d:?}"))),
    };
    Ok(t.view(shape))
}

/// `(name, tensor)` pairs in payload order.
fn payload_tensors(trainer: &Trainer) -> Vec<(String, Tensor)> {
    let mut out = Vec::new();
    for (prefix, vs) in [
        ("generator", &trainer.model.generator_vs),
        ("critic", &trainer.model.critic_vs),
    ] {
        for (name, t) in sorted_vars(vs) {
            out.push((format!("{prefix}/{name}"), t));
        }
    }
    for (prefix, opt) in [
        ("adam_generator", &trainer.generator_opt),
        ("adam_critic", &trainer.critic_opt),
    ] {
        for (name, m, v) in opt.moments() {
            out.push((format!("{prefix}/m/{name}"), m.shallow_clone()));
            out.push((format!("{prefix}/v/{name}"), v.shallow_clone()));
        }
    }
    out
}

pub fn checkpoint_bytes(trainer: &Trainer) -> Result<Vec<u8>> {
    let tensors = payload_tensors(trainer);
    let mut entries = Vec::with_capacity(tensors.len());
    let mut payload = Vec::new();
    for (name, t) in &tensors {
        let (dtype, _) = dtype_of(t.kind())?;
        entries.push(TensorEntry {
            name: name.clone(),
            dtype: dtype.to_string(),
            shape: t.size(),
        });
        payload.extend(tensor_bytes(t)?);
    }
    let header = CheckpointHeader {
        format: CHECKPOINT_FORMAT.to_string(),
        arch: trainer.model.arch.clone(),
        config: trainer.config.clone(),
        step: trainer.step,
        rng: RngState {
            seed: trainer.config.seed,
            step: trainer.step,
        },
        running: trainer.running,
        generator_adam_steps: trainer.generator_opt.steps,
        critic_adam_steps: trainer.critic_opt.steps,
        tensors: entries,
    };
    let json = serde_json::to_vec(&header).expect("checkpoint header serializes");
    let mut out = Vec::with_capacity(8 + 4 + 8 + json.len() + payload.len() + 32);
    out.extend_from_slice(CHECKPOINT_MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&(json.len() as u64).to_le_bytes());
    out.extend_from_slice(&json);
    out.extend_from_slice(&payload);
    let digest = Sha256::digest(&out);
    out.extend_from_slice(&digest);
    Ok(out)
}

/// Writes atomically: a temporary sibling file is renamed into place.
pub fn save_checkpoint(trainer: &Trainer, path: &Path) -> Result<()> {
    let bytes = checkpoint_bytes(trainer)?;
    let tmp = path.with_extension("bin.tmp");
    fs::write(&tmp, &bytes).map_err(|e| UdorError::io(&tmp, e))?;
    fs::rename(&tmp, path).map_err(|e| UdorError::io(path, e))
}

/// Parses and verifies a checkpoint image, returning the header and the
/// tensors by name. Nothing is built unless the whole file checks out.
pub fn parse_checkpoint(bytes: &[u8]) -> Result<(CheckpointHeader, HashMap<String, Tensor>)> {
    let bad = |m: &str| UdorError::Format(m.to_string());
    if bytes.len() < 8 + 4 + 8 + 32 || &bytes[..8] != CHECKPOINT_MAGIC {
        return Err(bad("not a checkpoint file"));
    }
    let (body, trailer) = bytes.split_at(bytes.len() - 32);
    if Sha256::digest(body).as_slice() != trailer {
        return Err(bad("checkpoint checksum mismatch"));
    }
    let version = u32::from_le_bytes(body[8..12].try_into().unwrap());
    if version != VERSION {
        return Err(UdorError::Format(format!(
            "checkpoint version {version}, this build reads {VERSION}"
        )));
    }
    let header_len = u64::from_le_bytes(body[12..20].try_into().unwrap()) as usize;
    let json = body
        .get(20..20usize.saturating_add(header_len))
        .ok_or_else(|| bad("truncated checkpoint header"))?;
    let header: CheckpointHeader =
        serde_json::from_slice(json).map_err(|e| UdorError::Format(format!("checkpoint header: {e}")))?;
    if header.format != CHECKPOINT_FORMAT {
        return Err(UdorError::Format(format!("checkpoint format {:?}", header.format)));
    }
    let mut offset = 20 + header_len;
    let mut tensors = HashMap::with_capacity(header.tensors.len());
    for e in &header.tensors {
        let width = match e.dtype.as_str() {
            "f32" => 4,
            "f64" => 8,
            d => return Err(UdorError::Format(format!("unknown dtype {d:?}"))),
        };
        if e.shape.iter().any(|&d| d < 0) {
            return Err(bad("negative tensor dimension"));
        }
        let len = e.shape.iter().product::<i64>() as usize * width;
        let chunk = body
            .get(offset..offset + len)
            .ok_or_else(|| bad("truncated checkpoint payload"))?;
        tensors.insert(e.name.clone(), tensor_from_bytes(chunk, &e.dtype, &e.shape)?);
        offset += len;
    }
    if offset != body.len() {
        return Err(bad("trailing bytes in checkpoint payload"));
    }
    Ok((header, tensors))
}

fn restore_vars(vs: &mut tch::nn::VarStore, prefix: &str, tensors: &HashMap<String, Tensor>) -> Result<()> {
    for (name, mut var) in sorted_vars(vs) {
        let key = format!("{prefix}/{name}");
        let src = tensors
            .get(&key)
            .ok_or_else(|| UdorError::Format(format!("checkpoint lacks {key}")))?;
        if src.size() != var.size() {
            return Err(UdorError::Format(format!("{key} has shape {:?}, expected {:?}", src.size(), var.size())));
        }
        tch::no_grad(|| var.copy_(src));
    }
    Ok(())
}

/// Loads a full training state.
pub fn load_checkpoint(path: &Path, device: Device) -> Result<Trainer> {
    let bytes = fs::read(path).map_err(|e| UdorError::io(path, e))?;
    let (header, tensors) = parse_checkpoint(&bytes)?;
    header.arch.validate().map_err(|e| UdorError::Format(e.to_string()))?;
    if header.tensors.len() != tensors.len() {
        return Err(UdorError::Format("duplicate tensor names in checkpoint".into()));
    }
    let mut model = ModelBundle::new(&header.arch, 0, device)?;
    let double = header.tensors.first().is_some_and(|e| e.dtype == "f64");
    if double {
        model.to_double();
    }
    restore_vars(&mut model.generator_vs, "generator", &tensors)?;
    restore_vars(&mut model.critic_vs, "critic", &tensors)?;
    let mut trainer = Trainer::from_parts(model, header.config.clone(), header.step);
    trainer.running = header.running;
    for (prefix, opt, steps) in [
        ("adam_generator", &mut trainer.generator_opt, header.generator_adam_steps),
        ("adam_critic", &mut trainer.critic_opt, header.critic_adam_steps),
    ] {
        opt.steps = steps;
        let names: Vec<String> = opt.moments().map(|(n, _, _)| n.to_string()).collect();
        for name in names {
            let get = |part: &str| {
                let key = format!("{prefix}/{part}/{name}");
                tensors
                    .get(&key)
                    .ok_or_else(|| UdorError::Format(format!("checkpoint lacks {key}")))
            };
            opt.set_moments(&name, get("m")?, get("v")?)?;
        }
    }
    let total_vars = trainer.model.generator_vs.variables().len() + trainer.model.critic_vs.variables().len();
    if tensors.len() != total_vars * 3 {
        return Err(UdorError::Format(format!(
            "checkpoint holds {} tensors, the architecture needs {}",
            tensors.len(),
            total_vars * 3
        )));
    }
    Ok(trainer)
}

/// Loads a checkpoint, rejecting it unless it was written for `arch`.
pub fn load_checkpoint_for(path: &Path, arch: &ArchitectureConfig, device: Device) -> Result<Trainer> {
    let bytes = fs::read(path).map_err(|e| UdorError::io(path, e))?;
    let (header, _) = parse_checkpoint(&bytes)?;
    if &header.arch != arch {
        return Err(UdorError::Format(format!(
            "checkpoint architecture {:?} differs from the requested {:?}",
            header.arch, arch
        )));
    }
    load_checkpoint(path, device)
}

/// Reads only the header (after verifying the checksum).
pub fn read_checkpoint_header(path: &Path) -> Result<CheckpointHeader> {
    let bytes = fs::read(path).map_err(|e| UdorError::io(path, e))?;
    parse_checkpoint(&bytes).map(|(h, _)| h)
}
