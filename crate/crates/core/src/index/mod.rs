//! The static transition index.
//!
//! State numbering is global and deterministic:
//!
//! | ids                          | meaning                                         |
//! |------------------------------|-------------------------------------------------|
//! | `0`                          | sink; empty row, carried by dead beams          |
//! | `1..=|V|`                    | level-1 states, first token `v` leads to `v + 1` |
//! | `level_start(l)..`           | valid level-`l` prefixes (l >= 2), lexicographic |
//! | `total_states() - 1`         | root                                            |
//!
//! Level-1 ids are reserved for every token, valid or not, so the first
//! dense step needs no table. Only states on levels `d..L` have non-empty
//! CSR rows; the row pointer array still spans every id so a lookup never
//! needs to know which level a state is on.

mod format;
mod memory;

use crate::bits;
use crate::config::DecoderConfig;
use crate::error::{Error, Result};
use crate::trie::{build_pointer_trie, PointerTrie};
use crate::types::ConstraintSet;

pub use format::{deserialize, serialize, FORMAT_VERSION, MAGIC};
pub use memory::{actual_footprint, memory_upper_bound, Footprint, LAYOUT_K1, LAYOUT_K2, PAPER_K1, PAPER_K2};

/// The sink state.
pub const SINK: u32 = 0;

/// One stacked CSR entry: the token that triggers a transition and the
/// state it leads to, read together in a single access.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
#[repr(C)]
pub struct Edge {
    pub token: u32,
    pub next: u32,
}

/// Bit mask and next-state table for one dense level.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DenseLevel {
    pub(crate) rows: usize,
    /// `rows x bytes_for(|V|)`, MSB-first.
    pub(crate) masks: Vec<u8>,
    /// `rows x |V|`, 0 where the token is invalid.
    pub(crate) states: Vec<u32>,
}

impl DenseLevel {
    pub fn rows(&self) -> usize {
        self.rows
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct FlattenOptions {
    /// Upper limit on bytes spent on dense masks and dense state tables.
    pub dense_budget_bytes: u128,
}

impl Default for FlattenOptions {
    fn default() -> Self {
        Self { dense_budget_bytes: 1 << 30 }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TransitionIndex {
    pub(crate) vocab_size: usize,
    pub(crate) sid_length: usize,
    pub(crate) dense_depth: usize,
    /// Valid prefix count per level `1..=L`.
    pub(crate) level_counts: Vec<u64>,
    pub(crate) branch_factors: Vec<u32>,
    pub(crate) start_mask: Vec<u8>,
    /// Dense levels `k = 2..=d`, stored at `dense[k - 2]`.
    pub(crate) dense: Vec<DenseLevel>,
    pub(crate) row_pointers: Vec<u32>,
    pub(crate) edges: Vec<Edge>,
    /// First state id of levels `1..=L`, followed by the root id.
    pub(crate) level_start: Vec<u32>,
}

impl TransitionIndex {
    /// Builds the pointer trie and flattens it with default options.
    pub fn build(constraints: &ConstraintSet, config: &DecoderConfig) -> Result<Self> {
        Self::build_with(constraints, config, FlattenOptions::default())
    }

    pub fn build_with(
        constraints: &ConstraintSet,
        config: &DecoderConfig,
        options: FlattenOptions,
    ) -> Result<Self> {
        config.validate()?;
        let trie = build_pointer_trie(constraints, config)?;
        flatten(&trie, config, options)
    }

    pub fn vocab_size(&self) -> usize {
        self.vocab_size
    }

    pub fn sid_length(&self) -> usize {
        self.sid_length
    }

    pub fn dense_depth(&self) -> usize {
        self.dense_depth
    }

    pub fn level_counts(&self) -> &[u64] {
        &self.level_counts
    }

    /// Max branch factor per decode step `0..L`.
    pub fn branch_factors(&self) -> &[u32] {
        &self.branch_factors
    }

    pub fn start_mask(&self) -> &[u8] {
        &self.start_mask
    }

    /// Dense level `k` for `2 <= k <= d`.
    pub fn dense_level(&self, k: usize) -> &DenseLevel {
        &self.dense[k - 2]
    }

    pub fn dense_mask_row(&self, k: usize, row: usize) -> &[u8] {
        let w = bits::bytes_for(self.vocab_size);
        &self.dense[k - 2].masks[row * w..(row + 1) * w]
    }

    pub fn dense_state_row(&self, k: usize, row: usize) -> &[u32] {
        let v = self.vocab_size;
        &self.dense[k - 2].states[row * v..(row + 1) * v]
    }

    pub fn row_pointers(&self) -> &[u32] {
        &self.row_pointers
    }

    pub fn edges(&self) -> &[Edge] {
        &self.edges
    }

    /// CSR row of `state`.
    pub fn row(&self, state: u32) -> &[Edge] {
        let s = state as usize;
        &self.edges[self.row_pointers[s] as usize..self.row_pointers[s + 1] as usize]
    }

    pub fn root(&self) -> u32 {
        self.level_start[self.sid_length]
    }

    pub fn total_states(&self) -> usize {
        self.row_pointers.len() - 1
    }

    pub fn total_edges(&self) -> usize {
        self.edges.len()
    }

    /// Half-open id range of level `level` (`1..=L`); level 0 is the root.
    pub fn level_range(&self, level: usize) -> std::ops::Range<u32> {
        if level == 0 {
            let r = self.root();
            return r..r + 1;
        }
        self.level_start[level - 1]..self.level_start[level]
    }

    /// Level of a state, `None` for the sink.
    pub fn level_of(&self, state: u32) -> Option<usize> {
        if state == SINK || state as usize >= self.total_states() {
            return None;
        }
        if state == self.root() {
            return Some(0);
        }
        // level_start is sorted; the last start <= state names the level.
        let pos = self.level_start.partition_point(|&s| s <= state);
        Some(pos)
    }

    /// Row of the dense tables at step `step >= 1` that serves `state`.
    pub(crate) fn dense_row_of(&self, state: u32, step: usize) -> Option<usize> {
        let range = self.level_range(step);
        range.contains(&state).then(|| (state - range.start) as usize)
    }

    pub fn config(&self) -> DecoderConfig {
        DecoderConfig::new(self.vocab_size, self.sid_length, self.dense_depth)
    }

    /// Checks the structural invariants of the flattened layout.
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Format(crate::error::FormatError::Malformed(m)));
        let l = self.sid_length;
        let v = self.vocab_size;
        if self.level_counts.len() != l || self.branch_factors.len() != l {
            return bad("per-level vectors do not have length L".into());
        }
        if self.dense_depth >= l {
            return bad("dense depth must be below L".into());
        }
        let expected = level_starts(v, &self.level_counts)?;
        if expected != self.level_start {
            return bad("level starts disagree with level counts".into());
        }
        let total = *expected.last().unwrap() as usize + 1;
        if self.row_pointers.len() != total + 1 {
            return bad(format!("expected {} row pointers, found {}", total + 1, self.row_pointers.len()));
        }
        if self.row_pointers[0] != 0
            || *self.row_pointers.last().unwrap() as usize != self.edges.len()
            || self.row_pointers.windows(2).any(|w| w[0] > w[1])
        {
            return bad("row pointers are not a monotone prefix sum over the edges".into());
        }
        if self.row_pointers[1] != 0 {
            return bad("sink row is not empty".into());
        }
        for s in 0..total as u32 {
            let row = self.row(s);
            if row.windows(2).any(|w| w[0].token >= w[1].token) {
                return bad(format!("row {s} tokens are not strictly increasing"));
            }
            if !row.is_empty() {
                let level = self.level_of(s).unwrap_or(usize::MAX);
                if level < self.dense_depth || level >= l {
                    return bad(format!("state {s} on level {level} has a sparse row"));
                }
                let targets = self.level_range(level + 1);
                if row.iter().any(|e| e.token as usize >= v || !targets.contains(&e.next)) {
                    return bad(format!("row {s} has an edge outside the next level"));
                }
                if row.len() as u32 > self.branch_factors[level] {
                    return bad(format!("row {s} is wider than its branch factor"));
                }
            }
        }
        let d = self.dense_depth;
        let mask_w = bits::bytes_for(v);
        if (d >= 1) != !self.start_mask.is_empty() || (d >= 1 && self.start_mask.len() != mask_w) {
            return bad("start mask presence does not match dense depth".into());
        }
        if self.dense.len() != d.saturating_sub(1) {
            return bad("wrong number of dense levels".into());
        }
        for k in 2..=d {
            let level = &self.dense[k - 2];
            let rows = if k == 2 { v } else { self.level_counts[k - 2] as usize };
            if level.rows != rows || level.masks.len() != rows * mask_w || level.states.len() != rows * v {
                return bad(format!("dense level {k} has the wrong shape"));
            }
            let targets = self.level_range(k);
            for r in 0..rows {
                let mask = self.dense_mask_row(k, r);
                for (t, &st) in self.dense_state_row(k, r).iter().enumerate() {
                    if bits::get(mask, t) != (st != SINK) || (st != SINK && !targets.contains(&st)) {
                        return bad(format!("dense level {k} row {r} mask and states disagree"));
                    }
                }
            }
        }
        Ok(())
    }
}

/// First ids of levels `1..=L` followed by the root id.
fn level_starts(vocab_size: usize, level_counts: &[u64]) -> Result<Vec<u32>> {
    let mut starts = Vec::with_capacity(level_counts.len() + 1);
    let mut next: u128 = 1;
    for (i, &count) in level_counts.iter().enumerate() {
        starts.push(next);
        next += if i == 0 { vocab_size as u128 } else { count as u128 };
    }
    starts.push(next);
    // The root takes the last id, so `next + 1` states exist.
    if next + 1 > u32::MAX as u128 {
        return Err(Error::StateOverflow(next + 1));
    }
    Ok(starts.into_iter().map(|s| s as u32).collect())
}

/// Bytes the dense tables will occupy for a trie.
fn dense_bytes(vocab_size: usize, dense_depth: usize, level_counts: &[u64]) -> u128 {
    if dense_depth == 0 {
        return 0;
    }
    let v = vocab_size as u128;
    let mask_w = bits::bytes_for(vocab_size) as u128;
    let mut total = mask_w;
    for k in 2..=dense_depth {
        let rows = if k == 2 { v } else { level_counts[k - 2] as u128 };
        total += rows * (mask_w + 4 * v);
    }
    total
}

/// Flattens a pointer trie into the hybrid dense + stacked-CSR layout.
pub fn flatten(trie: &PointerTrie, config: &DecoderConfig, options: FlattenOptions) -> Result<TransitionIndex> {
    config.validate()?;
    if trie.sid_length() != config.sid_length || trie.vocab_size() != config.vocab_size {
        return Err(Error::Mismatch("trie was built for a different configuration".into()));
    }
    let v = config.vocab_size;
    let l = config.sid_length;
    let d = config.dense_depth;
    let level_counts: Vec<u64> = trie.level_counts().iter().map(|&c| c as u64).collect();
    let level_start = level_starts(v, &level_counts)?;
    let needed = dense_bytes(v, d, &level_counts);
    if needed > options.dense_budget_bytes {
        return Err(Error::DenseBudget { needed, budget: options.dense_budget_bytes });
    }

    let levels = trie.nodes_by_level();
    let root = level_start[l];
    let total = root as usize + 1;

    let mut state_of = vec![SINK; trie.num_nodes()];
    state_of[trie.root() as usize] = root;
    for &(token, child) in trie.children(trie.root()) {
        state_of[child as usize] = token + 1;
    }
    for (level, nodes) in levels.iter().enumerate().skip(2) {
        let base = level_start[level - 1];
        for (i, &n) in nodes.iter().enumerate() {
            state_of[n as usize] = base + i as u32;
        }
    }

    // Trie node behind each state id, in id order.
    let mut by_state: Vec<Option<u32>> = vec![None; total];
    for nodes in &levels {
        for &n in nodes {
            by_state[state_of[n as usize] as usize] = Some(n);
        }
    }

    let mut row_pointers = Vec::with_capacity(total + 1);
    let mut edges = Vec::new();
    row_pointers.push(0u32);
    for (state, node) in by_state.iter().enumerate() {
        if let Some(n) = *node {
            let level = trie.node(n).level();
            if state as u32 != SINK && level >= d && level < l {
                edges.extend(
                    trie.children(n)
                        .iter()
                        .map(|&(token, c)| Edge { token, next: state_of[c as usize] }),
                );
            }
        }
        row_pointers.push(edges.len() as u32);
    }

    let mask_w = bits::bytes_for(v);
    let mut start_mask = Vec::new();
    if d >= 1 {
        start_mask = vec![0u8; mask_w];
        for &(token, _) in trie.children(trie.root()) {
            bits::set(&mut start_mask, token as usize);
        }
    }
    let mut dense = Vec::new();
    for k in 2..=d {
        let rows_nodes: Vec<Option<u32>> = if k == 2 {
            let mut rows = vec![None; v];
            for &(token, c) in trie.children(trie.root()) {
                rows[token as usize] = Some(c);
            }
            rows
        } else {
            levels[k - 1].iter().map(|&n| Some(n)).collect()
        };
        let rows = rows_nodes.len();
        let mut masks = vec![0u8; rows * mask_w];
        let mut states = vec![SINK; rows * v];
        for (r, node) in rows_nodes.iter().enumerate() {
            if let Some(n) = *node {
                for &(token, c) in trie.children(n) {
                    bits::set(&mut masks[r * mask_w..(r + 1) * mask_w], token as usize);
                    states[r * v + token as usize] = state_of[c as usize];
                }
            }
        }
        dense.push(DenseLevel { rows, masks, states });
    }

    Ok(TransitionIndex {
        vocab_size: v,
        sid_length: l,
        dense_depth: d,
        level_counts,
        branch_factors: trie.max_branch_factors(),
        start_mask,
        dense,
        row_pointers,
        edges,
        level_start,
    })
}
