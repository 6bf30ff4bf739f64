//! Storage accounting.
//!
//! The closed-form bound charges `1/8 + K2` bytes per dense cell (one mask
//! bit plus a `K2`-byte state id) and `K1` bytes per trie node below the
//! dense levels, with at most `min(|V|^l, |C|)` nodes on level `l`:
//!
//! ```text
//! U_max = (1/8 + K2) * |V|^d + K1 * sum_{l=d+1..L} min(|V|^l, |C|)
//! ```
//!
//! Everything is computed in eighths of a byte so the bound is exact.

use super::TransitionIndex;
use crate::error::{Error, Result};

/// Bytes per sparse node in the published capacity model (three 4-byte CSR arrays).
pub const PAPER_K1: u64 = 12;
/// Bytes per dense state in the published capacity model.
pub const PAPER_K2: u64 = 4;
/// Per sparse node in this layout: an 8-byte stacked edge plus a 4-byte row pointer.
pub const LAYOUT_K1: u64 = 12;
/// Per dense cell in this layout: a 4-byte state id plus the 4-byte row
/// pointer of the level-`d` state it names.
pub const LAYOUT_K2: u64 = 8;

fn overflow<T>(_: T) -> Error {
    Error::Overflow("memory upper bound")
}

/// Exact `U_max` in bytes, rounded up to a whole byte.
pub fn memory_upper_bound(
    k1: u64,
    k2: u64,
    vocab_size: usize,
    sid_length: usize,
    dense_depth: usize,
    constraint_count: u64,
) -> Result<u128> {
    if k1 == 0 || k2 == 0 {
        return Err(Error::Mismatch("K1 and K2 must be positive".into()));
    }
    let v = vocab_size as u128;
    let dense_cells = v.checked_pow(dense_depth as u32).ok_or(Error::Overflow("|V|^d"))?;
    let dense_eighths = dense_cells
        .checked_mul(1 + 8 * k2 as u128)
        .ok_or_else(|| overflow(()))?;
    let mut nodes: u128 = 0;
    for level in dense_depth + 1..=sid_length {
        // Saturating: once |V|^l passes |C| the min is |C|.
        let cap = v.checked_pow(level as u32).unwrap_or(u128::MAX);
        nodes = nodes
            .checked_add(cap.min(constraint_count as u128))
            .ok_or_else(|| overflow(()))?;
    }
    let sparse_eighths = nodes
        .checked_mul(8 * k1 as u128)
        .ok_or_else(|| overflow(()))?;
    let eighths = dense_eighths.checked_add(sparse_eighths).ok_or_else(|| overflow(()))?;
    Ok(eighths.div_ceil(8))
}

/// Byte breakdown of a built index.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Footprint {
    pub start_mask_bytes: u128,
    pub dense_mask_bytes: u128,
    pub dense_state_bytes: u128,
    pub row_pointer_bytes: u128,
    pub edge_bytes: u128,
    /// Cells covered by the deepest dense table (`|V|^0 = 1` when `d = 0`).
    pub dense_cells: u128,
    /// Trie nodes below the dense levels, one per stacked edge.
    pub sparse_nodes: u128,
}

impl Footprint {
    /// Bytes actually held by the in-memory arrays.
    pub fn raw_bytes(&self) -> u128 {
        self.start_mask_bytes
            + self.dense_mask_bytes
            + self.dense_state_bytes
            + self.row_pointer_bytes
            + self.edge_bytes
    }

    /// The capacity model evaluated on the index's real node counts.
    pub fn model_bytes(&self, k1: u64, k2: u64) -> u128 {
        let eighths = self.dense_cells * (1 + 8 * k2 as u128) + self.sparse_nodes * 8 * k1 as u128;
        eighths.div_ceil(8)
    }
}

pub fn actual_footprint(index: &TransitionIndex) -> Footprint {
    let v = index.vocab_size as u128;
    let d = index.dense_depth;
    let dense_cells = match d {
        0 => 1,
        1 => v,
        _ => index.dense[d - 2].rows as u128 * v,
    };
    Footprint {
        start_mask_bytes: index.start_mask.len() as u128,
        dense_mask_bytes: index.dense.iter().map(|l| l.masks.len() as u128).sum(),
        dense_state_bytes: index.dense.iter().map(|l| 4 * l.states.len() as u128).sum(),
        row_pointer_bytes: 4 * index.row_pointers.len() as u128,
        edge_bytes: (std::mem::size_of::<super::Edge>() * index.edges.len()) as u128,
        dense_cells,
        sparse_nodes: index.edges.len() as u128,
    }
}
