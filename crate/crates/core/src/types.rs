use std::cmp::Ordering;
use std::fmt;

use crate::config::DecoderConfig;
use crate::error::{Error, Result};

/// A fixed-length tuple of token indices.
#[derive(Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct SemanticId(Vec<u32>);

impl SemanticId {
    /// Builds an id after checking its length and token range against `config`.
    pub fn new(tokens: Vec<u32>, config: &DecoderConfig) -> Result<Self> {
        check_tokens(&tokens, config.sid_length, config.vocab_size)?;
        Ok(Self(tokens))
    }

    /// Wraps tokens without validation.
    pub fn from_tokens(tokens: Vec<u32>) -> Self {
        Self(tokens)
    }

    pub fn tokens(&self) -> &[u32] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn into_tokens(self) -> Vec<u32> {
        self.0
    }
}

impl fmt::Debug for SemanticId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{:?}", self.0)
    }
}

impl From<&[u32]> for SemanticId {
    fn from(tokens: &[u32]) -> Self {
        Self(tokens.to_vec())
    }
}

fn check_tokens(tokens: &[u32], sid_length: usize, vocab_size: usize) -> Result<()> {
    if tokens.len() != sid_length {
        return Err(Error::SidLength { found: tokens.len(), expected: sid_length });
    }
    if let Some((position, &token)) =
        tokens.iter().enumerate().find(|&(_, &t)| t as usize >= vocab_size)
    {
        return Err(Error::TokenOutOfRange { token, position, vocab_size });
    }
    Ok(())
}

/// Sorted, duplicate-free set of Semantic IDs stored as one flat token buffer.
#[derive(Clone, PartialEq, Eq)]
pub struct ConstraintSet {
    sid_length: usize,
    vocab_size: usize,
    tokens: Vec<u32>,
    duplicates_removed: usize,
}

impl fmt::Debug for ConstraintSet {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("ConstraintSet")
            .field("len", &self.len())
            .field("sid_length", &self.sid_length)
            .field("vocab_size", &self.vocab_size)
            .finish()
    }
}

impl ConstraintSet {
    /// Validates, sorts and deduplicates a flat buffer of `sid_length`-token ids.
    pub fn from_flat(tokens: Vec<u32>, sid_length: usize, vocab_size: usize) -> Result<Self> {
        if sid_length == 0 || !tokens.len().is_multiple_of(sid_length) {
            return Err(Error::SidLength {
                found: tokens.len() % sid_length.max(1),
                expected: sid_length,
            });
        }
        for sid in tokens.chunks_exact(sid_length) {
            check_tokens(sid, sid_length, vocab_size)?;
        }
        let count = tokens.len() / sid_length;
        let mut order: Vec<u32> = (0..count as u32).collect();
        let key = |i: u32| &tokens[i as usize * sid_length..(i as usize + 1) * sid_length];
        order.sort_unstable_by(|&a, &b| key(a).cmp(key(b)));
        let mut sorted = Vec::with_capacity(tokens.len());
        let mut last: Option<u32> = None;
        for i in order {
            if let Some(prev) = last {
                if key(prev) == key(i) {
                    continue;
                }
            }
            sorted.extend_from_slice(key(i));
            last = Some(i);
        }
        let kept = sorted.len() / sid_length;
        Ok(Self {
            sid_length,
            vocab_size,
            tokens: sorted,
            duplicates_removed: count - kept,
        })
    }

    pub fn from_sids<I, S>(sids: I, config: &DecoderConfig) -> Result<Self>
    where
        I: IntoIterator<Item = S>,
        S: AsRef<[u32]>,
    {
        let mut flat = Vec::new();
        for sid in sids {
            let sid = sid.as_ref();
            check_tokens(sid, config.sid_length, config.vocab_size)?;
            flat.extend_from_slice(sid);
        }
        Self::from_flat(flat, config.sid_length, config.vocab_size)
    }

    pub fn len(&self) -> usize {
        self.tokens.len() / self.sid_length
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn sid_length(&self) -> usize {
        self.sid_length
    }

    pub fn vocab_size(&self) -> usize {
        self.vocab_size
    }

    /// How many duplicate ids were dropped during construction.
    pub fn duplicates_removed(&self) -> usize {
        self.duplicates_removed
    }

    pub fn get(&self, i: usize) -> &[u32] {
        &self.tokens[i * self.sid_length..(i + 1) * self.sid_length]
    }

    pub fn iter(&self) -> impl ExactSizeIterator<Item = &[u32]> + '_ {
        self.tokens.chunks_exact(self.sid_length)
    }

    pub fn as_flat(&self) -> &[u32] {
        &self.tokens
    }

    pub fn to_sids(&self) -> Vec<SemanticId> {
        self.iter().map(SemanticId::from).collect()
    }

    /// Binary-search membership test.
    pub fn contains(&self, sid: &[u32]) -> bool {
        if sid.len() != self.sid_length {
            return false;
        }
        let (mut lo, mut hi) = (0usize, self.len());
        while lo < hi {
            let mid = lo + (hi - lo) / 2;
            match self.get(mid).cmp(sid) {
                Ordering::Less => lo = mid + 1,
                Ordering::Greater => hi = mid,
                Ordering::Equal => return true,
            }
        }
        false
    }

    /// Checks the set's shape against a decoder configuration.
    pub fn check_config(&self, config: &DecoderConfig) -> Result<()> {
        if self.sid_length != config.sid_length || self.vocab_size > config.vocab_size {
            return Err(Error::Mismatch(format!(
                "constraints are (L={}, |V|={}) but config is (L={}, |V|={})",
                self.sid_length, self.vocab_size, config.sid_length, config.vocab_size
            )));
        }
        Ok(())
    }
}

/// Raw scores for one decode step, laid out `(batch * beam) x vocab_size`.
#[derive(Debug, Clone, PartialEq)]
pub struct LogitBlock {
    pub rows: usize,
    pub vocab_size: usize,
    pub values: Vec<f64>,
}

impl LogitBlock {
    pub fn zeros(rows: usize, vocab_size: usize) -> Self {
        Self { rows, vocab_size, values: vec![0.0; rows * vocab_size] }
    }

    pub fn row(&self, r: usize) -> &[f64] {
        &self.values[r * self.vocab_size..(r + 1) * self.vocab_size]
    }

    pub fn row_mut(&mut self, r: usize) -> &mut [f64] {
        &mut self.values[r * self.vocab_size..(r + 1) * self.vocab_size]
    }

    /// Returns the first non-finite entry, if any.
    pub fn check_finite(&self) -> Result<()> {
        match self.values.iter().position(|v| !v.is_finite()) {
            Some(i) => Err(Error::NonFinite { row: i / self.vocab_size, col: i % self.vocab_size }),
            None => Ok(()),
        }
    }
}

/// Beam search state after `step` decoded tokens.
///
/// Rows are flattened `(batch, beam)` pairs. A row whose score equals the
/// configured `neg_inf` is dead and always sits in the sink state 0.
#[derive(Debug, Clone, PartialEq)]
pub struct BeamState {
    pub batch_size: usize,
    pub beam_width: usize,
    pub step: usize,
    /// `rows x step` decoded prefixes.
    pub tokens: Vec<u32>,
    pub scores: Vec<f64>,
    pub nodes: Vec<u32>,
}

impl BeamState {
    /// One live beam per batch row sitting in `root`; every other beam is
    /// pre-killed so step 0 does not expand duplicate roots.
    pub fn initial(config: &DecoderConfig, root: u32) -> Self {
        let rows = config.rows();
        let mut scores = vec![config.neg_inf; rows];
        let mut nodes = vec![0u32; rows];
        for b in 0..config.batch_size {
            scores[b * config.beam_width] = 0.0;
            nodes[b * config.beam_width] = root;
        }
        Self {
            batch_size: config.batch_size,
            beam_width: config.beam_width,
            step: 0,
            tokens: Vec::new(),
            scores,
            nodes,
        }
    }

    pub fn rows(&self) -> usize {
        self.batch_size * self.beam_width
    }

    pub fn prefix(&self, row: usize) -> &[u32] {
        &self.tokens[row * self.step..(row + 1) * self.step]
    }

    pub fn is_live(&self, row: usize) -> bool {
        self.nodes[row] != 0
    }

    /// Dead-beam coupling: `score == neg_inf` exactly when `node == 0`.
    pub fn check_dead_coupling(&self, neg_inf: f64) -> bool {
        self.scores
            .iter()
            .zip(&self.nodes)
            .all(|(&s, &n)| (s == neg_inf) == (n == 0))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn constraint_set_sorts_and_dedups() {
        let cfg = DecoderConfig::new(4, 2, 0);
        let set = ConstraintSet::from_sids([[3, 1], [0, 2], [3, 1], [0, 1]], &cfg).unwrap();
        assert_eq!(set.len(), 3);
        assert_eq!(set.duplicates_removed(), 1);
        assert_eq!(set.iter().collect::<Vec<_>>(), vec![&[0, 1][..], &[0, 2], &[3, 1]]);
        assert!(set.contains(&[3, 1]));
        assert!(!set.contains(&[3, 2]));
    }

    #[test]
    fn rejects_bad_tokens() {
        let cfg = DecoderConfig::new(4, 2, 0);
        assert!(matches!(
            ConstraintSet::from_sids([[0, 4]], &cfg),
            Err(Error::TokenOutOfRange { token: 4, position: 1, .. })
        ));
        assert!(matches!(
            SemanticId::new(vec![1, 2, 3], &cfg),
            Err(Error::SidLength { found: 3, expected: 2 })
        ));
    }

    #[test]
    fn initial_state_has_one_live_beam_per_batch_row() {
        let cfg = DecoderConfig::new(4, 2, 0).with_beam(3).with_batch(2);
        let s = BeamState::initial(&cfg, 9);
        assert_eq!(s.nodes, vec![9, 0, 0, 9, 0, 0]);
        assert!(s.check_dead_coupling(cfg.neg_inf));
    }
}
