//! Comparison maskers: an unconstrained pass-through, a pointer-trie walk,
//! binary-search prefix verification (exact and top-k), and a Bloom-style
//! prefix bitmap.
//!
//! All of them only track beam liveness; the next "state" of a masked-in
//! token is 1, and the prefix itself carries the position.

mod hash;
mod ppv;

pub use hash::{count_prefixes, hash_bitmap_mask, hash_bitmap_mask_with, HashBitmap, DEFAULT_BITS_PER_PREFIX, DEFAULT_PROBES};
pub use ppv::{ppv_approx_mask, ppv_approx_mask_with, ppv_exact_mask, ppv_exact_mask_with, SortedSidArray, PPV_TOP_K};

use crate::bits;
use crate::decoder::StepMasker;
use crate::error::{Error, Result};
use crate::kernel::{MaskResult, NextStates};
use crate::par::{self, Exec};
use crate::trie::PointerTrie;
use crate::types::BeamState;

/// Decoded prefixes of every flattened row at one step.
#[derive(Debug, Clone, Copy)]
pub struct PrefixBatch<'a> {
    tokens: &'a [u32],
    step: usize,
    rows: usize,
    nodes: Option<&'a [u32]>,
}

impl<'a> PrefixBatch<'a> {
    /// Rows whose node is the sink are treated as dead.
    pub fn from_state(state: &'a BeamState) -> Self {
        Self { tokens: &state.tokens, step: state.step, rows: state.rows(), nodes: Some(&state.nodes) }
    }

    /// Every row live; `tokens` is `rows x step`.
    pub fn all_live(tokens: &'a [u32], step: usize, rows: usize) -> Result<Self> {
        if tokens.len() != rows * step {
            return Err(Error::Shape(format!("{} prefix tokens for {rows} rows of {step}", tokens.len())));
        }
        Ok(Self { tokens, step, rows, nodes: None })
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn step(&self) -> usize {
        self.step
    }

    pub fn prefix(&self, r: usize) -> &'a [u32] {
        &self.tokens[r * self.step..(r + 1) * self.step]
    }

    pub fn is_live(&self, r: usize) -> bool {
        self.nodes.is_none_or(|n| n[r] != 0)
    }
}

/// Fills every live row of `out` through `f(row, prefix, bits)`.
pub(crate) fn fill_rows<F>(exec: Exec, prefixes: &PrefixBatch<'_>, vocab_size: usize, out: &mut MaskResult, f: F)
where
    F: Fn(usize, &[u32], &mut [u8]) + Sync + Send,
{
    out.reset(prefixes.rows(), vocab_size);
    let row_bytes = out.row_bytes();
    par::rows_mut(exec, out.bits_mut(), row_bytes, |r, row| {
        if prefixes.is_live(r) {
            f(r, prefixes.prefix(r), row)
        }
    });
    out.next = NextStates::Liveness;
}

/// Walks the pointer trie along each prefix and sets the children's tokens.
pub fn cpu_trie_mask(prefixes: &PrefixBatch<'_>, trie: &PointerTrie, out: &mut MaskResult) {
    cpu_trie_mask_with(Exec::default(), prefixes, trie, out)
}

pub fn cpu_trie_mask_with(exec: Exec, prefixes: &PrefixBatch<'_>, trie: &PointerTrie, out: &mut MaskResult) {
    fill_rows(exec, prefixes, trie.vocab_size(), out, |_, prefix, row| {
        if let Some(node) = trie.walk(prefix) {
            for &(t, _) in trie.children(node) {
                bits::set(row, t as usize);
            }
        }
    });
}

/// Every token valid for every live row.
#[derive(Debug, Clone, Copy)]
pub struct UnconstrainedMasker {
    pub vocab_size: usize,
    pub exec: Exec,
}

impl UnconstrainedMasker {
    pub fn new(vocab_size: usize) -> Self {
        Self { vocab_size, exec: Exec::default() }
    }
}

impl StepMasker for UnconstrainedMasker {
    fn name(&self) -> &'static str {
        "unconstrained"
    }

    fn root_state(&self) -> u32 {
        1
    }

    fn compute_mask(&self, state: &BeamState, _log_probs: &[f64], out: &mut MaskResult) -> Result<()> {
        let v = self.vocab_size;
        let full = v / 8;
        let tail = (v % 8) as u32;
        fill_rows(self.exec, &PrefixBatch::from_state(state), v, out, |_, _, row| {
            row[..full].fill(0xff);
            if tail > 0 {
                row[full] = !(0xffu8 >> tail);
            }
        });
        Ok(())
    }

    fn next_state(&self, mask: &MaskResult, row: usize, token: u32) -> u32 {
        mask.next_state(None, row, token)
    }
}

pub struct CpuTrieMasker<'a> {
    pub trie: &'a PointerTrie,
    pub exec: Exec,
}

impl<'a> CpuTrieMasker<'a> {
    pub fn new(trie: &'a PointerTrie) -> Self {
        Self { trie, exec: Exec::default() }
    }
}

impl StepMasker for CpuTrieMasker<'_> {
    fn name(&self) -> &'static str {
        "cpu_trie"
    }

    fn root_state(&self) -> u32 {
        1
    }

    fn compute_mask(&self, state: &BeamState, _log_probs: &[f64], out: &mut MaskResult) -> Result<()> {
        cpu_trie_mask_with(self.exec, &PrefixBatch::from_state(state), self.trie, out);
        Ok(())
    }

    fn next_state(&self, mask: &MaskResult, row: usize, token: u32) -> u32 {
        mask.next_state(None, row, token)
    }
}

pub struct PpvExactMasker<'a> {
    pub array: &'a SortedSidArray,
    pub exec: Exec,
}

impl<'a> PpvExactMasker<'a> {
    pub fn new(array: &'a SortedSidArray) -> Self {
        Self { array, exec: Exec::default() }
    }
}

impl StepMasker for PpvExactMasker<'_> {
    fn name(&self) -> &'static str {
        "ppv_exact"
    }

    fn root_state(&self) -> u32 {
        1
    }

    fn compute_mask(&self, state: &BeamState, _log_probs: &[f64], out: &mut MaskResult) -> Result<()> {
        ppv_exact_mask_with(self.exec, &PrefixBatch::from_state(state), self.array, out);
        Ok(())
    }

    fn next_state(&self, mask: &MaskResult, row: usize, token: u32) -> u32 {
        mask.next_state(None, row, token)
    }
}

pub struct PpvApproxMasker<'a> {
    pub array: &'a SortedSidArray,
    pub k: usize,
    pub exec: Exec,
}

impl<'a> PpvApproxMasker<'a> {
    pub fn new(array: &'a SortedSidArray) -> Self {
        Self { array, k: PPV_TOP_K, exec: Exec::default() }
    }

    pub fn with_k(mut self, k: usize) -> Self {
        self.k = k;
        self
    }
}

impl StepMasker for PpvApproxMasker<'_> {
    fn name(&self) -> &'static str {
        "ppv_approx"
    }

    fn root_state(&self) -> u32 {
        1
    }

    fn compute_mask(&self, state: &BeamState, log_probs: &[f64], out: &mut MaskResult) -> Result<()> {
        ppv_approx_mask_with(self.exec, &PrefixBatch::from_state(state), self.array, log_probs, self.k, out)
    }

    fn next_state(&self, mask: &MaskResult, row: usize, token: u32) -> u32 {
        mask.next_state(None, row, token)
    }
}

pub struct HashBitmapMasker<'a> {
    pub bitmap: &'a HashBitmap,
    pub exec: Exec,
}

impl<'a> HashBitmapMasker<'a> {
    pub fn new(bitmap: &'a HashBitmap) -> Self {
        Self { bitmap, exec: Exec::default() }
    }
}

impl StepMasker for HashBitmapMasker<'_> {
    fn name(&self) -> &'static str {
        "hash_bitmap"
    }

    fn root_state(&self) -> u32 {
        1
    }

    fn compute_mask(&self, state: &BeamState, _log_probs: &[f64], out: &mut MaskResult) -> Result<()> {
        hash_bitmap_mask_with(self.exec, &PrefixBatch::from_state(state), self.bitmap, out);
        Ok(())
    }

    fn next_state(&self, mask: &MaskResult, row: usize, token: u32) -> u32 {
        mask.next_state(None, row, token)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::trie::build_pointer_trie;
    use crate::{ConstraintSet, DecoderConfig};

    #[test]
    fn cpu_trie_example_branch() {
        let cfg = DecoderConfig::new(3, 3, 0);
        let set = ConstraintSet::from_sids([[0, 1, 0], [2, 0, 1], [2, 0, 2]], &cfg).unwrap();
        let trie = build_pointer_trie(&set, &cfg).unwrap();
        let mut out = MaskResult::new(0, 3);
        let prefixes = PrefixBatch::all_live(&[2, 0, 0, 0], 2, 2).unwrap();
        cpu_trie_mask(&prefixes, &trie, &mut out);
        assert_eq!(out.valid_tokens(0), vec![1, 2]);
        assert_eq!(out.count(1), 0);
    }

    #[test]
    fn unconstrained_sets_exactly_vocab_bits() {
        let cfg = DecoderConfig::new(11, 2, 0).with_beam(2);
        let state = BeamState::initial(&cfg, 1);
        let mut out = MaskResult::new(0, 11);
        UnconstrainedMasker::new(11).compute_mask(&state, &[], &mut out).unwrap();
        assert_eq!(out.count(0), 11);
        assert_eq!(out.count(1), 0);
    }
}
