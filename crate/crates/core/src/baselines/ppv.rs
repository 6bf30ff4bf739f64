//! Parallel prefix verification over a sorted flat array of encoded ids.

use std::cmp::Ordering;
use std::ops::Range;

use super::{fill_rows, PrefixBatch};
use crate::bits;
use crate::error::{Error, Result};
use crate::kernel::MaskResult;
use crate::par::Exec;
use crate::types::ConstraintSet;

/// Candidates checked per row by the approximate variant.
pub const PPV_TOP_K: usize = 50;

/// Every id of a constraint set as a fixed-width big-endian key, sorted.
///
/// Byte order of the keys equals token order of the ids, so prefix queries
/// are plain `memcmp` binary searches.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SortedSidArray {
    vocab_size: usize,
    sid_length: usize,
    token_bytes: usize,
    key_bytes: usize,
    keys: Vec<u8>,
}

fn token_width(vocab_size: usize) -> usize {
    let max = vocab_size.saturating_sub(1) as u64;
    let bits = 64 - max.leading_zeros() as usize;
    bits.div_ceil(8).max(1)
}

impl SortedSidArray {
    pub fn new(set: &ConstraintSet) -> Self {
        let token_bytes = token_width(set.vocab_size());
        let key_bytes = token_bytes * set.sid_length();
        let mut keys = Vec::with_capacity(key_bytes * set.len());
        for sid in set.iter() {
            for &t in sid {
                keys.extend_from_slice(&t.to_be_bytes()[4 - token_bytes..]);
            }
        }
        Self { vocab_size: set.vocab_size(), sid_length: set.sid_length(), token_bytes, key_bytes, keys }
    }

    pub fn len(&self) -> usize {
        self.keys.len() / self.key_bytes
    }

    pub fn is_empty(&self) -> bool {
        self.keys.is_empty()
    }

    pub fn vocab_size(&self) -> usize {
        self.vocab_size
    }

    pub fn sid_length(&self) -> usize {
        self.sid_length
    }

    /// Encoded width of a length-`t` prefix.
    pub fn prefix_width(&self, t: usize) -> usize {
        t * self.token_bytes
    }

    pub fn key(&self, i: usize) -> &[u8] {
        &self.keys[i * self.key_bytes..(i + 1) * self.key_bytes]
    }

    pub fn encode(&self, tokens: &[u32], out: &mut Vec<u8>) {
        out.clear();
        for &t in tokens {
            out.extend_from_slice(&t.to_be_bytes()[4 - self.token_bytes..]);
        }
    }

    fn set_last(&self, buf: &mut [u8], token: u32) {
        let n = buf.len();
        buf[n - self.token_bytes..].copy_from_slice(&token.to_be_bytes()[4 - self.token_bytes..]);
    }

    /// First key whose leading bytes compare `>= prefix` (or `> prefix` when `strict`).
    fn bound(&self, prefix: &[u8], strict: bool) -> usize {
        let w = prefix.len();
        let (mut lo, mut hi) = (0, self.len());
        while lo < hi {
            let mid = lo + (hi - lo) / 2;
            let ord = self.key(mid)[..w].cmp(prefix);
            let go_right = ord == Ordering::Less || (strict && ord == Ordering::Equal);
            if go_right {
                lo = mid + 1;
            } else {
                hi = mid;
            }
        }
        lo
    }

    /// Ids carrying an encoded prefix: the lower bound of the prefix up to the
    /// lower bound of its successor.
    pub fn encoded_range(&self, prefix: &[u8]) -> Range<usize> {
        self.bound(prefix, false)..self.bound(prefix, true)
    }

    pub fn prefix_range(&self, tokens: &[u32]) -> Range<usize> {
        let mut buf = Vec::new();
        self.encode(tokens, &mut buf);
        self.encoded_range(&buf)
    }

    pub fn contains_prefix(&self, tokens: &[u32]) -> bool {
        !self.prefix_range(tokens).is_empty()
    }

    /// Single-search form of the range test: the lower bound exists and starts with the prefix.
    #[inline]
    fn probe(&self, prefix: &[u8]) -> bool {
        let lb = self.bound(prefix, false);
        lb < self.len() && self.key(lb).starts_with(prefix)
    }
}

/// Checks all `|V|` extensions of each prefix against the sorted array.
pub fn ppv_exact_mask(prefixes: &PrefixBatch<'_>, array: &SortedSidArray, out: &mut MaskResult) {
    ppv_exact_mask_with(Exec::default(), prefixes, array, out)
}

pub fn ppv_exact_mask_with(exec: Exec, prefixes: &PrefixBatch<'_>, array: &SortedSidArray, out: &mut MaskResult) {
    let v = array.vocab_size();
    fill_rows(exec, prefixes, v, out, |_, prefix, row| {
        let mut buf = Vec::with_capacity(array.prefix_width(prefix.len() + 1));
        array.encode(prefix, &mut buf);
        buf.resize(array.prefix_width(prefix.len() + 1), 0);
        for token in 0..v {
            array.set_last(&mut buf, token as u32);
            bits::or_bit(row, token, array.probe(&buf));
        }
    });
}

/// Checks only the `k` highest-scoring extensions of each prefix.
///
/// Valid tokens outside the top `k` stay masked out; a row whose probes all
/// fail comes out empty and its beam dies.
pub fn ppv_approx_mask(
    prefixes: &PrefixBatch<'_>,
    array: &SortedSidArray,
    log_probs: &[f64],
    k: usize,
    out: &mut MaskResult,
) -> Result<()> {
    ppv_approx_mask_with(Exec::default(), prefixes, array, log_probs, k, out)
}

pub fn ppv_approx_mask_with(
    exec: Exec,
    prefixes: &PrefixBatch<'_>,
    array: &SortedSidArray,
    log_probs: &[f64],
    k: usize,
    out: &mut MaskResult,
) -> Result<()> {
    let v = array.vocab_size();
    if log_probs.len() != prefixes.rows() * v {
        return Err(Error::Shape(format!(
            "{} log-probs for {} rows of {v}",
            log_probs.len(),
            prefixes.rows()
        )));
    }
    let k = k.min(v);
    fill_rows(exec, prefixes, v, out, |r, prefix, row| {
        if k == 0 {
            return;
        }
        let lp = &log_probs[r * v..(r + 1) * v];
        let mut order: Vec<u32> = (0..v as u32).collect();
        if k < v {
            order.select_nth_unstable_by(k - 1, |&a, &b| {
                lp[b as usize].total_cmp(&lp[a as usize]).then(a.cmp(&b))
            });
        }
        let mut buf = Vec::with_capacity(array.prefix_width(prefix.len() + 1));
        array.encode(prefix, &mut buf);
        buf.resize(array.prefix_width(prefix.len() + 1), 0);
        for &token in &order[..k] {
            array.set_last(&mut buf, token);
            bits::or_bit(row, token as usize, array.probe(&buf));
        }
    });
    Ok(())
}
