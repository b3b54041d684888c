//! Partitioned latent codes and the part-level edits behind object removal.
//!
//! A code of length `n_parts * part_length` is read as `n_parts` contiguous
//! slices; part `k` (0-based) is reserved for category `k`. Resetting part `k`
//! to the matching slice of the empty image's code removes that category from
//! the decoded scene.

use rand::Rng;
use serde::{Deserialize, Serialize};
use tch::{Kind, Tensor};

use crate::error::{Result, UdorError};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PartitionedLatent {
    n_parts: usize,
    part_length: usize,
    values: Vec<f32>,
}

impl PartitionedLatent {
    pub fn split(flat: &[f32], n_parts: usize) -> Result<Self> {
        if n_parts == 0 || flat.is_empty() || flat.len() % n_parts != 0 {
            return Err(UdorError::shape(format!(
                "code of length {} cannot be split into {n_parts} equal parts",
                flat.len()
            )));
        }
        Ok(PartitionedLatent {
            n_parts,
            part_length: flat.len() / n_parts,
            values: flat.to_vec(),
        })
    }

    pub fn from_parts(parts: &[Vec<f32>]) -> Result<Self> {
        let len = parts.first().map(Vec::len).unwrap_or(0);
        if len == 0 || parts.iter().any(|p| p.len() != len) {
            return Err(UdorError::shape("parts must be non-empty and equally long"));
        }
        Ok(PartitionedLatent {
            n_parts: parts.len(),
            part_length: len,
            values: parts.concat(),
        })
    }

    pub fn n_parts(&self) -> usize {
        self.n_parts
    }

    pub fn part_length(&self) -> usize {
        self.part_length
    }

    pub fn concat(&self) -> Vec<f32> {
        self.values.clone()
    }

    pub fn as_slice(&self) -> &[f32] {
        &self.values
    }

    pub fn part(&self, k: usize) -> &[f32] {
        &self.values[k * self.part_length..(k + 1) * self.part_length]
    }

    pub fn parts(&self) -> impl Iterator<Item = &[f32]> {
        self.values.chunks(self.part_length)
    }

    fn check_index(&self, k: usize) -> Result<()> {
        if k >= self.n_parts {
            return Err(UdorError::Index {
                index: k,
                len: self.n_parts,
            });
        }
        Ok(())
    }

    fn check_same_shape(&self, other: &PartitionedLatent) -> Result<()> {
        if self.n_parts != other.n_parts || self.part_length != other.part_length {
            return Err(UdorError::shape(format!(
                "{}x{} latent vs {}x{}",
                self.n_parts, self.part_length, other.n_parts, other.part_length
            )));
        }
        Ok(())
    }

    /// Copy of `self` with part `k` replaced by the bank's empty part.
    pub fn reset_part(&self, k: usize, bank: &EmptyPartBank) -> Result<Self> {
        self.swap_part(&bank.latent, k)
    }

    /// Copy of `self` with part `k` taken from `source`.
    pub fn swap_part(&self, source: &PartitionedLatent, k: usize) -> Result<Self> {
        self.check_same_shape(source)?;
        self.check_index(k)?;
        let mut out = self.clone();
        let range = k * self.part_length..(k + 1) * self.part_length;
        out.values[range.clone()].copy_from_slice(&source.values[range]);
        Ok(out)
    }
}

/// Per-part slices of the empty image's code under one encoder snapshot.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmptyPartBank {
    latent: PartitionedLatent,
}

impl EmptyPartBank {
    pub fn new(latent: PartitionedLatent) -> Self {
        EmptyPartBank { latent }
    }

    /// From a `[code_len]` or `[1, code_len]` tensor.
    pub fn from_tensor(code: &Tensor, n_parts: usize) -> Result<Self> {
        let flat: Vec<f32> = code
            .to_kind(Kind::Float)
            .flatten(0, -1)
            .try_into()
            .map_err(UdorError::Backend)?;
        Ok(EmptyPartBank::new(PartitionedLatent::split(&flat, n_parts)?))
    }

    pub fn part(&self, k: usize) -> &[f32] {
        self.latent.part(k)
    }

    pub fn latent(&self) -> &PartitionedLatent {
        &self.latent
    }

    pub fn to_tensor(&self) -> Tensor {
        Tensor::from_slice(self.latent.as_slice())
    }
}

/// Which parts the object-removing operation resets.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, Default)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum RemovalPolicy {
    /// Exactly one part, uniformly at random.
    #[default]
    Single,
    /// Each part independently with probability `p`; an empty draw is redrawn.
    Subset { p: f64 },
}

pub fn sample_removal_indices<R: Rng>(n: usize, rng: &mut R, policy: RemovalPolicy) -> Vec<usize> {
    assert!(n >= 1, "need at least one part");
    match policy {
        RemovalPolicy::Single => vec![rng.gen_range(0..n)],
        RemovalPolicy::Subset { p } => loop {
            let picked: Vec<usize> = (0..n).filter(|_| rng.gen_bool(p)).collect();
            if !picked.is_empty() {
                break picked;
            }
        },
    }
}

/// 0/1 mask `[batch, n_parts * part_length]` selecting `parts[b]` for row `b`.
pub fn part_mask(parts: &[Vec<usize>], n_parts: usize, part_length: usize, kind: Kind) -> Tensor {
    let width = n_parts * part_length;
    let mut mask = vec![0f32; parts.len() * width];
    for (b, ks) in parts.iter().enumerate() {
        for &k in ks {
            assert!(k < n_parts, "part {k} out of range");
            let start = b * width + k * part_length;
            mask[start..start + part_length].fill(1.0);
        }
    }
    Tensor::from_slice(&mask)
        .view([parts.len() as i64, width as i64])
        .to_kind(kind)
}

/// Batched reset: row `b` of `codes` gets `parts[b]` replaced from `empty_code`.
pub fn reset_parts_batch(
    codes: &Tensor,
    parts: &[Vec<usize>],
    empty_code: &Tensor,
    n_parts: usize,
) -> Tensor {
    let width = codes.size()[1] as usize;
    let mask = part_mask(parts, n_parts, width / n_parts, codes.kind()).to_device(codes.device());
    let empty = empty_code.reshape([1, width as i64]);
    codes * (mask.ones_like() - &mask) + empty * &mask
}

/// Batched swap: row `b` takes `parts[b]` from row `b` of `source`.
pub fn swap_parts_batch(
    codes: &Tensor,
    source: &Tensor,
    parts: &[Vec<usize>],
    n_parts: usize,
) -> Tensor {
    let width = codes.size()[1] as usize;
    let mask = part_mask(parts, n_parts, width / n_parts, codes.kind()).to_device(codes.device());
    codes * (mask.ones_like() - &mask) + source * &mask
}

/// Slices a `[batch, n_parts * part_length]` tensor into `[batch, n_parts, part_length]`.
pub fn parts_view(codes: &Tensor, n_parts: usize) -> Tensor {
    let size = codes.size();
    codes.reshape([size[0], n_parts as i64, size[1] / n_parts as i64])
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn bank(n: usize, len: usize) -> EmptyPartBank {
        let v: Vec<f32> = (0..n * len).map(|i| -(i as f32) - 1.0).collect();
        EmptyPartBank::new(PartitionedLatent::split(&v, n).unwrap())
    }

    #[test]
    fn split_slices_in_order() {
        let l = PartitionedLatent::split(&[1., 2., 3., 4., 5., 6.], 3).unwrap();
        assert_eq!(l.part_length(), 2);
        assert_eq!(l.part(0), &[1., 2.]);
        assert_eq!(l.part(2), &[5., 6.]);
        assert!(matches!(
            PartitionedLatent::split(&[0.; 7], 3),
            Err(UdorError::Shape(_))
        ));
    }

    #[test]
    fn reset_reads_back_bank_part() {
        let l = PartitionedLatent::split(&[1., 2., 3., 4., 5., 6.], 3).unwrap();
        let b = bank(3, 2);
        let r = l.reset_part(1, &b).unwrap();
        assert_eq!(r.part(1), b.part(1));
        assert_eq!(r.part(0), l.part(0));
        assert_eq!(r.reset_part(1, &b).unwrap(), r);
        assert!(matches!(
            l.reset_part(3, &b),
            Err(UdorError::Index { index: 3, len: 3 })
        ));
    }

    #[test]
    fn swap_mismatch_is_shape_error() {
        let a = PartitionedLatent::split(&[0.; 6], 3).unwrap();
        let b = PartitionedLatent::split(&[0.; 6], 2).unwrap();
        assert!(matches!(a.swap_part(&b, 0), Err(UdorError::Shape(_))));
    }

    #[test]
    fn single_part_always_zero() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        for _ in 0..20 {
            assert_eq!(sample_removal_indices(1, &mut rng, RemovalPolicy::Single), vec![0]);
        }
    }

    #[test]
    fn subset_policy_is_never_empty() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut hits = [0usize; 3];
        let draws = 10_000;
        for _ in 0..draws {
            let s = sample_removal_indices(3, &mut rng, RemovalPolicy::Subset { p: 0.5 });
            assert!(!s.is_empty());
            for k in s {
                hits[k] += 1;
            }
        }
        // conditioned on non-empty: P(k picked) = 0.5 / (1 - 0.125) = 4/7
        for h in hits {
            let f = h as f64 / draws as f64;
            assert!((f - 4.0 / 7.0).abs() < 0.02, "{f}");
        }
    }

    #[test]
    fn batched_reset_matches_value_reset() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let codes: Vec<f32> = (0..4 * 6).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let b = bank(3, 2);
        let parts = vec![vec![0], vec![2], vec![1], vec![0, 2]];
        let t = Tensor::from_slice(&codes).view([4, 6]);
        let out = reset_parts_batch(&t, &parts, &b.to_tensor(), 3);
        for (row, ks) in parts.iter().enumerate() {
            let mut want = PartitionedLatent::split(&codes[row * 6..row * 6 + 6], 3).unwrap();
            for &k in ks {
                want = want.reset_part(k, &b).unwrap();
            }
            let got: Vec<f32> = out.get(row as i64).try_into().unwrap();
            assert_eq!(got, want.concat());
        }
    }
}
