//! Encoder, decoder, part classifier and critic.
//!
//! The encoder, decoder and classifier live in one variable store (the
//! "generator side"); the critic has its own. There is exactly one encoder and
//! one decoder: every reconstruction path in training calls the same modules.
//! No layer couples batch elements, so a batch encodes exactly like its rows
//! encoded one at a time and there is no separate train/eval behaviour.

use std::sync::Mutex;

use serde::{Deserialize, Serialize};
use tch::nn::{self, Module};
use tch::{Device, Kind, Tensor};

use crate::error::{Result, UdorError};
use crate::latent::EmptyPartBank;
use crate::synthdata::GrayImage;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Normalization {
    /// Per-sample group normalisation with up to `groups` groups per layer.
    Group { groups: i64 },
    None,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Nonlinearity {
    LeakyRelu { slope: f64 },
    Relu,
}

impl Nonlinearity {
    fn apply(&self, x: &Tensor) -> Tensor {
        match *self {
            Nonlinearity::LeakyRelu { slope } => x.maximum(&(x * slope)),
            Nonlinearity::Relu => x.relu(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ArchitectureConfig {
    pub image_size: i64,
    pub n_parts: i64,
    pub part_length: i64,
    /// Stride-2 convolution widths; the decoder mirrors them.
    pub encoder_widths: Vec<i64>,
    pub critic_widths: Vec<i64>,
    pub classifier_hidden: i64,
    pub normalization: Normalization,
    pub nonlinearity: Nonlinearity,
}

impl ArchitectureConfig {
    /// Reference stacks: 4 blocks for 32x32 inputs, 5 for 64x64.
    pub fn standard(image_size: i64, n_parts: i64, part_length: i64) -> Self {
        let (encoder_widths, critic_widths) = match image_size {
            64 => (vec![32, 64, 128, 256, 256], vec![64, 128, 256, 512, 512]),
            _ => (vec![32, 64, 128, 256], vec![64, 128, 256, 512]),
        };
        ArchitectureConfig {
            image_size,
            n_parts,
            part_length,
            encoder_widths,
            critic_widths,
            classifier_hidden: 128,
            normalization: Normalization::Group { groups: 8 },
            nonlinearity: Nonlinearity::LeakyRelu { slope: 0.2 },
        }
    }

    /// Same topology at half the encoder width and a quarter of the critic
    /// width; sized for single-core CPU training.
    pub fn compact(image_size: i64, n_parts: i64, part_length: i64) -> Self {
        let mut a = Self::standard(image_size, n_parts, part_length);
        a.encoder_widths.iter_mut().for_each(|w| *w /= 2);
        a.critic_widths.iter_mut().for_each(|w| *w /= 4);
        a
    }

    pub fn code_len(&self) -> i64 {
        self.n_parts * self.part_length
    }

    fn final_spatial(&self, blocks: usize) -> i64 {
        self.image_size >> blocks
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_parts < 1 || self.part_length < 1 {
            return Err(UdorError::config("n_parts and part_length must be >= 1"));
        }
        for (name, widths) in [("encoder", &self.encoder_widths), ("critic", &self.critic_widths)] {
            if widths.is_empty() || widths.iter().any(|&w| w < 1) {
                return Err(UdorError::config(format!("{name} widths must be positive")));
            }
            let blocks = widths.len();
            if blocks >= 63 || self.final_spatial(blocks) < 1 || self.final_spatial(blocks) << blocks != self.image_size {
                return Err(UdorError::config(format!(
                    "{} {name} blocks do not divide a {}px image",
                    blocks, self.image_size
                )));
            }
        }
        if let Normalization::Group { groups } = self.normalization {
            if groups < 1 {
                return Err(UdorError::config("group count must be >= 1"));
            }
        }
        Ok(())
    }
}

/// Largest divisor of `channels` not above `max_groups`.
fn group_count(channels: i64, max_groups: i64) -> i64 {
    (1..=max_groups.min(channels)).rev().find(|g| channels % g == 0).unwrap_or(1)
}

fn conv_down(p: nn::Path, c_in: i64, c_out: i64) -> nn::Conv2D {
    let cfg = nn::ConvConfig {
        stride: 2,
        padding: 1,
        ..Default::default()
    };
    nn::conv2d(p, c_in, c_out, 4, cfg)
}

fn conv_up(p: nn::Path, c_in: i64, c_out: i64) -> nn::ConvTranspose2D {
    let cfg = nn::ConvTransposeConfig {
        stride: 2,
        padding: 1,
        ..Default::default()
    };
    nn::conv_transpose2d(p, c_in, c_out, 4, cfg)
}

fn norm_layer(p: nn::Path, channels: i64, norm: Normalization) -> Option<nn::GroupNorm> {
    match norm {
        Normalization::Group { groups } => Some(nn::group_norm(
            p,
            group_count(channels, groups),
            channels,
            Default::default(),
        )),
        Normalization::None => None,
    }
}

#[derive(Debug)]
struct DownBlock {
    conv: nn::Conv2D,
    norm: Option<nn::GroupNorm>,
}

#[derive(Debug)]
pub struct Encoder {
    blocks: Vec<DownBlock>,
    head: nn::Linear,
    act: Nonlinearity,
    image_size: i64,
}

impl Encoder {
    fn new(p: nn::Path, arch: &ArchitectureConfig) -> Self {
        let mut blocks = Vec::new();
        let mut c_in = 1;
        for (i, &w) in arch.encoder_widths.iter().enumerate() {
            let conv = conv_down(&p / format!("conv{i}"), c_in, w);
            // no normalisation straight on the pixels
            let norm = if i == 0 {
                None
            } else {
                norm_layer(&p / format!("norm{i}"), w, arch.normalization)
            };
            blocks.push(DownBlock { conv, norm });
            c_in = w;
        }
        let s = arch.final_spatial(arch.encoder_widths.len());
        let head = nn::linear(&p / "head", c_in * s * s, arch.code_len(), Default::default());
        Encoder {
            blocks,
            head,
            act: arch.nonlinearity,
            image_size: arch.image_size,
        }
    }

    pub fn encode(&self, images: &Tensor) -> Result<Tensor> {
        check_images(images, self.image_size)?;
        Ok(self.forward(images))
    }
}

impl Module for Encoder {
    fn forward(&self, xs: &Tensor) -> Tensor {
        let mut x = xs.shallow_clone();
        for b in &self.blocks {
            x = x.apply(&b.conv);
            if let Some(n) = &b.norm {
                x = x.apply(n);
            }
            x = self.act.apply(&x);
        }
        x.flatten(1, -1).apply(&self.head)
    }
}

#[derive(Debug)]
struct UpBlock {
    conv: nn::ConvTranspose2D,
    norm: Option<nn::GroupNorm>,
}

#[derive(Debug)]
pub struct Decoder {
    stem: nn::Linear,
    stem_shape: [i64; 3],
    blocks: Vec<UpBlock>,
    act: Nonlinearity,
    code_len: i64,
}

impl Decoder {
    fn new(p: nn::Path, arch: &ArchitectureConfig) -> Self {
        let widths: Vec<i64> = arch.encoder_widths.iter().rev().copied().collect();
        let s = arch.final_spatial(widths.len());
        let stem = nn::linear(&p / "stem", arch.code_len(), widths[0] * s * s, Default::default());
        let mut blocks = Vec::new();
        for i in 0..widths.len() {
            let c_in = widths[i];
            let last = i + 1 == widths.len();
            let c_out = if last { 1 } else { widths[i + 1] };
            let conv = conv_up(&p / format!("deconv{i}"), c_in, c_out);
            let norm = if last {
                None
            } else {
                norm_layer(&p / format!("norm{i}"), c_out, arch.normalization)
            };
            blocks.push(UpBlock { conv, norm });
        }
        Decoder {
            stem,
            stem_shape: [widths[0], s, s],
            blocks,
            act: arch.nonlinearity,
            code_len: arch.code_len(),
        }
    }

    pub fn decode(&self, codes: &Tensor) -> Result<Tensor> {
        check_codes(codes, self.code_len)?;
        Ok(self.forward(codes))
    }
}

impl Module for Decoder {
    fn forward(&self, xs: &Tensor) -> Tensor {
        let b = xs.size()[0];
        let [c, h, w] = self.stem_shape;
        let mut x = self.act.apply(&xs.apply(&self.stem)).view([b, c, h, w]);
        let last = self.blocks.len() - 1;
        for (i, blk) in self.blocks.iter().enumerate() {
            x = x.apply(&blk.conv);
            if i == last {
                break;
            }
            if let Some(n) = &blk.norm {
                x = x.apply(n);
            }
            x = self.act.apply(&x);
        }
        x.sigmoid()
    }
}

/// Maps one latent part to probabilities over `n_parts + 1` classes; class 0
/// is "empty", class `k + 1` is category `k`.
#[derive(Debug)]
pub struct PartClassifier {
    hidden: nn::Linear,
    out: nn::Linear,
    act: Nonlinearity,
    part_length: i64,
}

impl PartClassifier {
    fn new(p: nn::Path, arch: &ArchitectureConfig) -> Self {
        PartClassifier {
            hidden: nn::linear(&p / "hidden", arch.part_length, arch.classifier_hidden, Default::default()),
            out: nn::linear(&p / "out", arch.classifier_hidden, arch.n_parts + 1, Default::default()),
            act: arch.nonlinearity,
            part_length: arch.part_length,
        }
    }

    /// Logits for `[..., part_length]` inputs.
    pub fn logits(&self, parts: &Tensor) -> Tensor {
        self.act.apply(&parts.apply(&self.hidden)).apply(&self.out)
    }

    pub fn probabilities(&self, parts: &Tensor) -> Tensor {
        self.logits(parts).softmax(-1, parts.kind())
    }

    pub fn classify_part(&self, part: &Tensor) -> Result<Tensor> {
        if part.size().last() != Some(&self.part_length) {
            return Err(UdorError::shape(format!(
                "part of shape {:?}, expected trailing length {}",
                part.size(),
                self.part_length
            )));
        }
        Ok(self.probabilities(part))
    }
}

/// Wasserstein critic: image batch to one unbounded score per image.
#[derive(Debug)]
pub struct Critic {
    blocks: Vec<DownBlock>,
    head: nn::Linear,
    act: Nonlinearity,
    image_size: i64,
}

impl Critic {
    fn new(p: nn::Path, arch: &ArchitectureConfig) -> Self {
        let mut blocks = Vec::new();
        let mut c_in = 1;
        for (i, &w) in arch.critic_widths.iter().enumerate() {
            let conv = conv_down(&p / format!("conv{i}"), c_in, w);
            // layer norm (one group): per-sample, so input gradients stay per-sample
            let norm = (i > 0).then(|| nn::group_norm(&p / format!("norm{i}"), 1, w, Default::default()));
            blocks.push(DownBlock { conv, norm });
            c_in = w;
        }
        let s = arch.final_spatial(arch.critic_widths.len());
        let head = nn::linear(&p / "head", c_in * s * s, 1, Default::default());
        Critic {
            blocks,
            head,
            act: arch.nonlinearity,
            image_size: arch.image_size,
        }
    }

    pub fn critic_score(&self, images: &Tensor) -> Result<Tensor> {
        check_images(images, self.image_size)?;
        Ok(self.forward(images))
    }

    pub fn head(&self) -> &nn::Linear {
        &self.head
    }
}

impl Module for Critic {
    fn forward(&self, xs: &Tensor) -> Tensor {
        let mut x = xs.shallow_clone();
        for b in &self.blocks {
            x = x.apply(&b.conv);
            if let Some(n) = &b.norm {
                x = x.apply(n);
            }
            x = self.act.apply(&x);
        }
        x.flatten(1, -1).apply(&self.head).squeeze_dim(1)
    }
}

fn check_images(images: &Tensor, size: i64) -> Result<()> {
    let s = images.size();
    if s.len() != 4 || s[1] != 1 || s[2] != size || s[3] != size {
        return Err(UdorError::shape(format!(
            "images of shape {s:?}, expected [B, 1, {size}, {size}]"
        )));
    }
    Ok(())
}

fn check_codes(codes: &Tensor, len: i64) -> Result<()> {
    let s = codes.size();
    if s.len() != 2 || s[1] != len {
        return Err(UdorError::shape(format!("codes of shape {s:?}, expected [B, {len}]")));
    }
    Ok(())
}

// torch's global generator is the only randomness used for initialisation;
// holding this lock around seed+build keeps concurrent builds reproducible.
static INIT_LOCK: Mutex<()> = Mutex::new(());

pub struct ModelBundle {
    pub arch: ArchitectureConfig,
    pub generator_vs: nn::VarStore,
    pub critic_vs: nn::VarStore,
    pub encoder: Encoder,
    pub decoder: Decoder,
    pub classifier: PartClassifier,
    pub critic: Critic,
}

impl std::fmt::Debug for ModelBundle {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("ModelBundle").field("arch", &self.arch).finish_non_exhaustive()
    }
}

impl ModelBundle {
    pub fn new(arch: &ArchitectureConfig, seed: u64, device: Device) -> Result<Self> {
        arch.validate()?;
        let _guard = INIT_LOCK.lock().unwrap_or_else(|e| e.into_inner());
        tch::manual_seed(seed as i64);
        let generator_vs = nn::VarStore::new(device);
        let critic_vs = nn::VarStore::new(device);
        let g = generator_vs.root();
        let encoder = Encoder::new(&g / "encoder", arch);
        let decoder = Decoder::new(&g / "decoder", arch);
        let classifier = PartClassifier::new(&g / "classifier", arch);
        let critic = Critic::new(critic_vs.root() / "critic", arch);
        Ok(ModelBundle {
            arch: arch.clone(),
            generator_vs,
            critic_vs,
            encoder,
            decoder,
            classifier,
            critic,
        })
    }

    /// Converts every parameter to 64-bit floats.
    pub fn to_double(&mut self) {
        self.generator_vs.double();
        self.critic_vs.double();
    }

    pub fn kind(&self) -> Kind {
        self.generator_vs
            .trainable_variables()
            .first()
            .map(|t| t.kind())
            .unwrap_or(Kind::Float)
    }

    pub fn device(&self) -> Device {
        self.generator_vs.device()
    }

    pub fn encode(&self, images: &Tensor) -> Result<Tensor> {
        self.encoder.encode(images)
    }

    pub fn decode(&self, codes: &Tensor) -> Result<Tensor> {
        self.decoder.decode(codes)
    }

    pub fn empty_image_tensor(&self) -> Tensor {
        let s = self.arch.image_size;
        Tensor::zeros([1, 1, s, s], (self.kind(), self.device()))
    }

    /// Encodes the empty image under the current parameters.
    pub fn extract_empty_parts(&self, empty_image: &Tensor) -> Result<EmptyPartBank> {
        let code = tch::no_grad(|| self.encode(empty_image))?;
        EmptyPartBank::from_tensor(&code, self.arch.n_parts as usize)
    }

    /// Images to a `[B, 1, S, S]` tensor of this bundle's precision.
    pub fn images_tensor(&self, images: &[&GrayImage]) -> Result<Tensor> {
        Ok(images_to_tensor(images)?.to_kind(self.kind()).to_device(self.device()))
    }
}

/// Stacks images into a `[B, 1, S, S]` float tensor in `[0, 1]`.
pub fn images_to_tensor(images: &[&GrayImage]) -> Result<Tensor> {
    let size = images
        .first()
        .map(|i| i.size())
        .ok_or_else(|| UdorError::shape("empty image batch"))?;
    let mut buf = Vec::with_capacity(images.len() * size * size);
    for img in images {
        if img.size() != size {
            return Err(UdorError::shape("images of different sizes in one batch"));
        }
        buf.extend_from_slice(img.as_bytes());
    }
    let s = size as i64;
    Ok(Tensor::from_slice(&buf)
        .view([images.len() as i64, 1, s, s])
        .to_kind(Kind::Float)
        / 255.0)
}

pub fn tensor_to_images(batch: &Tensor) -> Result<Vec<GrayImage>> {
    let s = batch.size();
    if s.len() != 4 || s[1] != 1 || s[2] != s[3] {
        return Err(UdorError::shape(format!("cannot convert {s:?} to images")));
    }
    let flat: Vec<f32> = batch
        .to_kind(Kind::Float)
        .to_device(Device::Cpu)
        .flatten(0, -1)
        .try_into()?;
    let px = (s[2] * s[3]) as usize;
    flat.chunks(px)
        .map(|c| GrayImage::from_unit_floats(s[2] as usize, c))
        .collect()
}
