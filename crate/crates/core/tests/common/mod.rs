#![allow(dead_code)]

use sidmask::{ConstraintSet, DecoderConfig};

/// The three-item worked example with labels 1..3 shifted to tokens 0..2.
pub fn example_config(dense_depth: usize) -> DecoderConfig {
    DecoderConfig::new(3, 3, dense_depth)
}

pub fn example_set() -> ConstraintSet {
    ConstraintSet::from_flat(vec![0, 1, 0, 2, 0, 1, 2, 0, 2], 3, 3).unwrap()
}

/// Converts 1-based labels to tokens.
pub fn tok(labels: &[u32]) -> Vec<u32> {
    labels.iter().map(|l| l - 1).collect()
}
