#![allow(dead_code)]

use std::path::PathBuf;

use udor_core::networks::ArchitectureConfig;
use udor_core::synthdata::{
    load_source_digits, random_sample, CompositeSample, GlyphBank, OccupancyDistribution, SlotLayout,
};

pub mod criteria;

pub fn mnist_dir() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../data/mnist")
}

pub fn digits(classes: &[u8]) -> GlyphBank {
    load_source_digits(&mnist_dir(), classes).expect("bundled digits load")
}

pub fn multi_mnist_samples(bank: &GlyphBank, n: usize, seed: u64) -> Vec<CompositeSample> {
    let layout = SlotLayout::multi_mnist();
    let occ = OccupancyDistribution::default();
    (0..n)
        .map(|i| random_sample(&layout, bank, &occ, seed + i as u64).unwrap())
        .collect()
}

/// Narrow stacks that keep a training step in the millisecond range.
pub fn tiny_arch(n_parts: i64, part_length: i64) -> ArchitectureConfig {
    let mut a = ArchitectureConfig::standard(32, n_parts, part_length);
    a.encoder_widths = vec![4, 8, 8, 8];
    a.critic_widths = vec![4, 8, 8, 8];
    a.classifier_hidden = 16;
    a.normalization = udor_core::networks::Normalization::Group { groups: 2 };
    a
}
