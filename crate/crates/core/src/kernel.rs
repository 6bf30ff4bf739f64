//! Per-step masking kernels.
//!
//! All kernels work on flattened `(batch * beam)` rows and write into a
//! reusable [`MaskResult`]. Mask rows are bit-packed MSB-first and are one
//! bit wider than the vocabulary: the extra column is where sanitized slots
//! of the sparse kernel land before it is cleared.

use std::sync::atomic::{AtomicUsize, Ordering};

use crate::bits;
use crate::config::DecoderConfig;
use crate::decoder::StepMasker;
use crate::error::{Error, Result};
use crate::index::{Edge, TransitionIndex, SINK};
use crate::par::{self, Exec};
use crate::types::{BeamState, LogitBlock};

/// Where the next state of a masked-in token comes from.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum NextStates {
    /// Nothing recorded.
    Unset,
    /// Step 0 of a dense index: token `v` leads to state `v + 1`.
    Start,
    /// Dense step `step >= 1`: per row, the row of `dense_states[step + 1]`.
    Dense { step: usize, rows: Vec<u32> },
    /// Sparse step: `width` sanitized `(token, next)` slots per row.
    Sparse { width: usize, slots: Vec<Edge> },
    /// Baseline maskers track only liveness: 1 for a valid token, 0 otherwise.
    Liveness,
}

/// Token validity for every row plus the matching next-state information.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MaskResult {
    vocab_size: usize,
    rows: usize,
    row_bytes: usize,
    bits: Vec<u8>,
    pub next: NextStates,
}

impl MaskResult {
    pub fn new(rows: usize, vocab_size: usize) -> Self {
        let row_bytes = bits::bytes_for(vocab_size + 1);
        Self {
            vocab_size,
            rows,
            row_bytes,
            bits: vec![0; rows * row_bytes],
            next: NextStates::Unset,
        }
    }

    /// Resizes for a new shape and clears every bit.
    pub fn reset(&mut self, rows: usize, vocab_size: usize) {
        self.vocab_size = vocab_size;
        self.rows = rows;
        self.row_bytes = bits::bytes_for(vocab_size + 1);
        self.bits.clear();
        self.bits.resize(rows * self.row_bytes, 0);
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn vocab_size(&self) -> usize {
        self.vocab_size
    }

    pub fn row_bytes(&self) -> usize {
        self.row_bytes
    }

    pub fn row(&self, r: usize) -> &[u8] {
        &self.bits[r * self.row_bytes..(r + 1) * self.row_bytes]
    }

    pub fn row_mut(&mut self, r: usize) -> &mut [u8] {
        &mut self.bits[r * self.row_bytes..(r + 1) * self.row_bytes]
    }

    pub fn bits_mut(&mut self) -> &mut [u8] {
        &mut self.bits
    }

    pub fn is_set(&self, r: usize, token: usize) -> bool {
        bits::get(self.row(r), token)
    }

    pub fn count(&self, r: usize) -> usize {
        bits::count_ones(self.row(r))
    }

    pub fn to_bools(&self, r: usize) -> Vec<bool> {
        bits::unpack(self.row(r), self.vocab_size)
    }

    pub fn valid_tokens(&self, r: usize) -> Vec<u32> {
        let mut out = Vec::new();
        bits::for_each_set(self.row(r), self.vocab_size, |v| out.push(v as u32));
        out
    }

    /// State reached from row `r` by `token`, or the sink if the token is masked out.
    pub fn next_state(&self, index: Option<&TransitionIndex>, r: usize, token: u32) -> u32 {
        if !self.is_set(r, token as usize) {
            return SINK;
        }
        match &self.next {
            NextStates::Unset => SINK,
            NextStates::Start => token + 1,
            NextStates::Dense { step, rows } => match index {
                Some(idx) => idx.dense_state_row(step + 1, rows[r] as usize)[token as usize],
                None => SINK,
            },
            NextStates::Sparse { width, slots } => slots[r * width..(r + 1) * width]
                .iter()
                .find(|e| e.token == token)
                .map_or(SINK, |e| e.next),
            NextStates::Liveness => 1,
        }
    }
}

/// Row-wise `x - log(sum(exp(x)))` with max subtraction.
pub fn log_softmax(logits: &LogitBlock) -> Result<Vec<f64>> {
    let mut out = vec![0.0; logits.values.len()];
    log_softmax_into(Exec::default(), logits, &mut out)?;
    Ok(out)
}

pub fn log_softmax_into(exec: Exec, logits: &LogitBlock, out: &mut [f64]) -> Result<()> {
    logits.check_finite()?;
    if out.len() != logits.values.len() {
        return Err(Error::Shape("log-softmax output buffer".into()));
    }
    let v = logits.vocab_size;
    par::rows_mut(exec, out, v, |r, row| {
        let x = logits.row(r);
        let max = x.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let sum: f64 = x.iter().map(|&xi| (xi - max).exp()).sum();
        let lse = max + sum.ln();
        for (o, &xi) in row.iter_mut().zip(x) {
            *o = xi - lse;
        }
    });
    Ok(())
}

/// Fills masked-out entries with `neg_inf`; no renormalization.
pub fn apply_mask(log_probs: &[f64], mask: &MaskResult, neg_inf: f64) -> Vec<f64> {
    let mut out = log_probs.to_vec();
    apply_mask_in_place(&mut out, mask, neg_inf);
    out
}

pub fn apply_mask_in_place(log_probs: &mut [f64], mask: &MaskResult, neg_inf: f64) {
    let v = mask.vocab_size;
    for (r, row) in log_probs.chunks_mut(v).enumerate() {
        let bits_row = mask.row(r);
        for (i, x) in row.iter_mut().enumerate() {
            if !bits::get(bits_row, i) {
                *x = neg_inf;
            }
        }
    }
}

/// Dense-table lookup for steps below the dense depth.
///
/// Step 0 copies the start mask (next state of token `v` is `v + 1`); step
/// `k >= 1` copies row `node - level_start(k)` of dense level `k + 1`.
/// Sink rows come out all-false.
pub fn dense_lookup(index: &TransitionIndex, nodes: &[u32], step: usize, out: &mut MaskResult) -> Result<()> {
    dense_lookup_with(Exec::default(), index, nodes, step, out)
}

pub fn dense_lookup_with(
    exec: Exec,
    index: &TransitionIndex,
    nodes: &[u32],
    step: usize,
    out: &mut MaskResult,
) -> Result<()> {
    if step >= index.dense_depth() {
        return Err(Error::NotDenseStep { step, dense_depth: index.dense_depth() });
    }
    let v = index.vocab_size();
    out.reset(nodes.len(), v);
    let row_bytes = out.row_bytes;
    let mask_w = bits::bytes_for(v);
    if step == 0 {
        let root = index.root();
        if let Some(&bad) = nodes.iter().find(|&&n| n != SINK && n != root) {
            return Err(Error::NodeLevel { node: bad, level: 0 });
        }
        let start = index.start_mask();
        par::rows_mut(exec, &mut out.bits, row_bytes, |r, row| {
            if nodes[r] != SINK {
                row[..mask_w].copy_from_slice(start);
            }
        });
        out.next = NextStates::Start;
        return Ok(());
    }
    let mut table_rows = Vec::with_capacity(nodes.len());
    for &n in nodes {
        if n == SINK {
            table_rows.push(u32::MAX);
        } else {
            let row = index
                .dense_row_of(n, step)
                .ok_or(Error::NodeLevel { node: n, level: step })?;
            table_rows.push(row as u32);
        }
    }
    par::rows_mut(exec, &mut out.bits, row_bytes, |r, row| {
        let t = table_rows[r];
        if t != u32::MAX {
            row[..mask_w].copy_from_slice(index.dense_mask_row(step + 1, t as usize));
        }
    });
    out.next = NextStates::Dense { step, rows: table_rows };
    Ok(())
}

/// Fixed-width reads from the stacked edge array.
///
/// `read(i)` must return the fill entry `(|V|, 0)` for any `i` past the end.
pub trait EdgeReader: Sync {
    fn read(&self, i: usize) -> Edge;
}

/// Reads the unpadded edge array, clamping the position and substituting
/// the fill entry out of bounds.
pub struct ClampedEdges<'a> {
    edges: &'a [Edge],
    fill: Edge,
}

impl<'a> ClampedEdges<'a> {
    pub fn new(index: &'a TransitionIndex) -> Self {
        Self { edges: index.edges(), fill: Edge { token: index.vocab_size() as u32, next: SINK } }
    }
}

impl EdgeReader for ClampedEdges<'_> {
    #[inline(always)]
    fn read(&self, i: usize) -> Edge {
        let n = self.edges.len();
        if n == 0 {
            return self.fill;
        }
        let in_bounds = i < n;
        let e = self.edges[i.min(n - 1)];
        Edge {
            token: if in_bounds { e.token } else { self.fill.token },
            next: if in_bounds { e.next } else { self.fill.next },
        }
    }
}

/// A copy of the edge array extended by `max(B)` fill entries, so every
/// speculative slice is in bounds without clamping.
pub struct PaddedEdges {
    edges: Vec<Edge>,
}

impl PaddedEdges {
    pub fn new(index: &TransitionIndex) -> Self {
        let pad = index.branch_factors().iter().copied().max().unwrap_or(0) as usize;
        let mut edges = index.edges().to_vec();
        edges.resize(edges.len() + pad, Edge { token: index.vocab_size() as u32, next: SINK });
        Self { edges }
    }
}

impl EdgeReader for PaddedEdges {
    #[inline(always)]
    fn read(&self, i: usize) -> Edge {
        self.edges[i]
    }
}

/// Counts reads for checking the fixed-work contract.
pub struct CountingEdges<R> {
    pub inner: R,
    pub reads: AtomicUsize,
}

impl<R> CountingEdges<R> {
    pub fn new(inner: R) -> Self {
        Self { inner, reads: AtomicUsize::new(0) }
    }

    pub fn reads(&self) -> usize {
        self.reads.load(Ordering::Relaxed)
    }
}

impl<R: EdgeReader> EdgeReader for CountingEdges<R> {
    fn read(&self, i: usize) -> Edge {
        self.reads.fetch_add(1, Ordering::Relaxed);
        self.inner.read(i)
    }
}

/// Vectorized node transition kernel for steps at or past the dense depth.
pub fn vntk(index: &TransitionIndex, nodes: &[u32], step: usize, out: &mut MaskResult) -> Result<()> {
    vntk_with(Exec::default(), index, &ClampedEdges::new(index), nodes, step, out)
}

/// [`vntk`] over an arbitrary edge reader.
///
/// Every row performs the same work: two row-pointer reads, exactly
/// `B[step]` edge reads, and `B[step]` bit writes. Slots at or past the
/// row's child count are rewritten to `(|V|, 0)`; their bits land in the
/// extra mask column, which is cleared at the end.
pub fn vntk_with<R: EdgeReader>(
    exec: Exec,
    index: &TransitionIndex,
    reader: &R,
    nodes: &[u32],
    step: usize,
    out: &mut MaskResult,
) -> Result<()> {
    if step < index.dense_depth() || step >= index.sid_length() {
        return Err(Error::StepOutOfRange { step, sid_length: index.sid_length() });
    }
    let v = index.vocab_size();
    let width = index.branch_factors()[step] as usize;
    out.reset(nodes.len(), v);
    let mut slots = match std::mem::replace(&mut out.next, NextStates::Unset) {
        NextStates::Sparse { slots, .. } => slots,
        _ => Vec::new(),
    };
    slots.clear();
    slots.resize(nodes.len() * width, Edge::default());
    let pointers = index.row_pointers();
    let row_bytes = out.row_bytes;
    let sentinel = v as u32;
    par::rows2_mut(exec, &mut out.bits, row_bytes, &mut slots, width, |r, bits_row, slot_row| {
        let n = nodes[r] as usize;
        let start = pointers[n] as usize;
        let children = pointers[n + 1] as usize - start;
        for (j, slot) in slot_row.iter_mut().enumerate() {
            let e = reader.read(start + j);
            let valid = j < children;
            let token = if valid { e.token } else { sentinel };
            *slot = Edge { token, next: if valid { e.next } else { SINK } };
            bits::set(bits_row, token as usize);
        }
        bits::clear(bits_row, v);
    });
    out.next = NextStates::Sparse { width, slots };
    Ok(())
}

/// Edge-array access strategy for [`StaticMasker`].
pub enum EdgeMode {
    Clamped,
    Padded(PaddedEdges),
}

/// The static-index masker: dense lookups below `d`, the sparse kernel after.
pub struct StaticMasker<'a> {
    pub index: &'a TransitionIndex,
    pub exec: Exec,
    pub edges: EdgeMode,
}

impl<'a> StaticMasker<'a> {
    pub fn new(index: &'a TransitionIndex) -> Self {
        Self { index, exec: Exec::default(), edges: EdgeMode::Clamped }
    }

    pub fn with_exec(mut self, exec: Exec) -> Self {
        self.exec = exec;
        self
    }

    pub fn padded(mut self) -> Self {
        self.edges = EdgeMode::Padded(PaddedEdges::new(self.index));
        self
    }

    pub fn mask_nodes(&self, nodes: &[u32], step: usize, out: &mut MaskResult) -> Result<()> {
        if step < self.index.dense_depth() {
            return dense_lookup_with(self.exec, self.index, nodes, step, out);
        }
        match &self.edges {
            EdgeMode::Clamped => {
                vntk_with(self.exec, self.index, &ClampedEdges::new(self.index), nodes, step, out)
            }
            EdgeMode::Padded(p) => vntk_with(self.exec, self.index, p, nodes, step, out),
        }
    }
}

impl StepMasker for StaticMasker<'_> {
    fn name(&self) -> &'static str {
        "static"
    }

    fn root_state(&self) -> u32 {
        self.index.root()
    }

    fn check(&self, config: &DecoderConfig) -> Result<()> {
        let idx = self.index;
        if idx.vocab_size() != config.vocab_size
            || idx.sid_length() != config.sid_length
            || idx.dense_depth() != config.dense_depth
        {
            return Err(Error::Mismatch(format!(
                "index built for (|V|={}, L={}, d={}), config has (|V|={}, L={}, d={})",
                idx.vocab_size(),
                idx.sid_length(),
                idx.dense_depth(),
                config.vocab_size,
                config.sid_length,
                config.dense_depth
            )));
        }
        Ok(())
    }

    fn compute_mask(&self, state: &BeamState, _log_probs: &[f64], out: &mut MaskResult) -> Result<()> {
        self.mask_nodes(&state.nodes, state.step, out)
    }

    fn next_state(&self, mask: &MaskResult, row: usize, token: u32) -> u32 {
        mask.next_state(Some(self.index), row, token)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ConstraintSet;

    fn example(d: usize) -> TransitionIndex {
        let cfg = DecoderConfig::new(3, 3, d);
        let set = ConstraintSet::from_sids([[0, 1, 0], [2, 0, 1], [2, 0, 2]], &cfg).unwrap();
        TransitionIndex::build(&set, &cfg).unwrap()
    }

    #[test]
    fn log_softmax_small_rows() {
        let block = LogitBlock { rows: 2, vocab_size: 2, values: vec![0.0, 0.0, 1000.0, 0.0] };
        let lp = log_softmax(&block).unwrap();
        let ln2 = std::f64::consts::LN_2;
        assert!((lp[0] + ln2).abs() < 1e-15 && (lp[1] + ln2).abs() < 1e-15);
        assert!(lp[2].abs() < 1e-12);
        assert!((lp[3] + 1000.0).abs() < 1e-9);
    }

    #[test]
    fn log_softmax_rejects_non_finite() {
        let block = LogitBlock { rows: 1, vocab_size: 2, values: vec![0.0, f64::NAN] };
        assert!(matches!(log_softmax(&block), Err(Error::NonFinite { row: 0, col: 1 })));
    }

    #[test]
    fn start_mask_allows_first_tokens() {
        let idx = example(1);
        let mut out = MaskResult::new(2, 3);
        dense_lookup(&idx, &[idx.root(), SINK], 0, &mut out).unwrap();
        assert_eq!(out.valid_tokens(0), vec![0, 2]);
        assert_eq!(out.count(1), 0);
        assert_eq!(out.next_state(Some(&idx), 0, 2), 3);
        assert_eq!(out.next_state(Some(&idx), 0, 1), SINK);
    }

    #[test]
    fn dense_lookup_rejects_sparse_steps_and_wrong_levels() {
        let idx = example(2);
        let mut out = MaskResult::new(1, 3);
        assert!(matches!(
            dense_lookup(&idx, &[SINK], 2, &mut out),
            Err(Error::NotDenseStep { step: 2, dense_depth: 2 })
        ));
        assert!(matches!(dense_lookup(&idx, &[4], 1, &mut out), Err(Error::NodeLevel { .. })));
        dense_lookup(&idx, &[3], 1, &mut out).unwrap();
        assert_eq!(out.valid_tokens(0), vec![0]);
        assert_eq!(out.next_state(Some(&idx), 0, 0), 5);
    }

    #[test]
    fn vntk_node_with_two_children() {
        let idx = example(0);
        let mut out = MaskResult::new(2, 3);
        vntk(&idx, &[5, SINK], 2, &mut out).unwrap();
        assert_eq!(out.valid_tokens(0), vec![1, 2]);
        assert_eq!(out.next_state(Some(&idx), 0, 1), 7);
        assert_eq!(out.next_state(Some(&idx), 0, 2), 8);
        assert_eq!(out.count(1), 0);
        match &out.next {
            NextStates::Sparse { width, slots } => {
                assert_eq!(*width, 2);
                assert_eq!(&slots[2..], &[Edge { token: 3, next: 0 }; 2]);
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn vntk_reads_exactly_b_entries_per_row() {
        let idx = example(0);
        let reader = CountingEdges::new(ClampedEdges::new(&idx));
        let mut out = MaskResult::new(0, 3);
        let nodes = [SINK, 4, 5, 5];
        vntk_with(Exec::Sequential, &idx, &reader, &nodes, 2, &mut out).unwrap();
        assert_eq!(reader.reads(), nodes.len() * idx.branch_factors()[2] as usize);
    }

    #[test]
    fn padded_and_clamped_agree_at_the_array_end() {
        let idx = example(0);
        let padded = StaticMasker::new(&idx).padded();
        let clamped = StaticMasker::new(&idx);
        // The last rows of level 2 sit at the end of the edge array for level 3 reads.
        let nodes: Vec<u32> = (0..idx.total_states() as u32).collect();
        for step in 0..3 {
            let mut a = MaskResult::new(0, 3);
            let mut b = MaskResult::new(0, 3);
            padded.mask_nodes(&nodes, step, &mut a).unwrap();
            clamped.mask_nodes(&nodes, step, &mut b).unwrap();
            assert_eq!(a, b);
        }
    }

    #[test]
    fn apply_mask_keeps_valid_entries() {
        let idx = example(1);
        let mut out = MaskResult::new(1, 3);
        dense_lookup(&idx, &[idx.root()], 0, &mut out).unwrap();
        let uniform = vec![-(3f64.ln()); 3];
        let masked = apply_mask(&uniform, &out, -1e10);
        assert_eq!(masked, vec![-(3f64.ln()), -1e10, -(3f64.ln())]);
    }
}
