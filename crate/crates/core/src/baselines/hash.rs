//! Bloom-style bitmap of every prefix of the constraint set.
//!
//! A prefix `(y_1..y_t)` is hashed by folding its tokens through a 64-bit
//! avalanche mixer, then mixing in the level `t`. Probe positions use double
//! hashing `h1 + i * h2` reduced to the bitmap size by multiply-shift.
//! Bitmaps have no false negatives; false positives let invalid tokens
//! through.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{fill_rows, PrefixBatch, SortedSidArray};
use crate::bits;
use crate::error::{Error, Result};
use crate::kernel::MaskResult;
use crate::par::Exec;
use crate::types::ConstraintSet;

pub const DEFAULT_BITS_PER_PREFIX: u64 = 8;
pub const DEFAULT_PROBES: u32 = 6;

const SEED: u64 = 0x243f_6a88_85a3_08d3;
const GOLDEN: u64 = 0x9e37_79b9_7f4a_7c15;

#[inline]
fn mix64(mut z: u64) -> u64 {
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

#[inline]
fn absorb(h: u64, token: u32) -> u64 {
    mix64(h ^ (token as u64 + 1).wrapping_mul(GOLDEN))
}

#[inline]
fn finish(h: u64, level: usize) -> u64 {
    mix64(h ^ ((level as u64) << 48) ^ 0xd1b5_4a32_d192_ed03)
}

#[inline]
fn reduce(x: u64, n: u64) -> u64 {
    ((x as u128 * n as u128) >> 64) as u64
}

pub fn prefix_hash(tokens: &[u32]) -> u64 {
    finish(tokens.iter().fold(SEED, |h, &t| absorb(h, t)), tokens.len())
}

/// Distinct non-empty prefixes over all levels.
pub fn count_prefixes(set: &ConstraintSet) -> u64 {
    let mut prev: Option<&[u32]> = None;
    let mut total = 0u64;
    for sid in set.iter() {
        let common = prev.map_or(0, |p| p.iter().zip(sid).take_while(|(a, b)| a == b).count());
        total += (sid.len() - common) as u64;
        prev = Some(sid);
    }
    total
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct HashBitmap {
    vocab_size: usize,
    sid_length: usize,
    words: Vec<u64>,
    num_bits: u64,
    probes: u32,
    prefixes: u64,
}

impl HashBitmap {
    pub fn new(set: &ConstraintSet, num_bits: u64, probes: u32) -> Result<Self> {
        if num_bits == 0 || probes == 0 {
            return Err(Error::Mismatch("bitmap needs at least one bit and one probe".into()));
        }
        let words = usize::try_from(num_bits.div_ceil(64)).map_err(|_| Error::Overflow("bitmap size"))?;
        let mut bm = Self {
            vocab_size: set.vocab_size(),
            sid_length: set.sid_length(),
            words: vec![0; words],
            num_bits,
            probes,
            prefixes: 0,
        };
        let mut prev: Option<&[u32]> = None;
        for sid in set.iter() {
            let common = prev.map_or(0, |p| p.iter().zip(sid).take_while(|(a, b)| a == b).count());
            let mut h = SEED;
            for (i, &t) in sid.iter().enumerate() {
                h = absorb(h, t);
                if i >= common {
                    bm.insert(finish(h, i + 1));
                    bm.prefixes += 1;
                }
            }
            prev = Some(sid);
        }
        Ok(bm)
    }

    /// `DEFAULT_BITS_PER_PREFIX` bits per distinct prefix, `DEFAULT_PROBES` probes.
    pub fn with_default_sizing(set: &ConstraintSet) -> Result<Self> {
        let bits = (count_prefixes(set) * DEFAULT_BITS_PER_PREFIX).max(64);
        Self::new(set, bits, DEFAULT_PROBES)
    }

    pub fn num_bits(&self) -> u64 {
        self.num_bits
    }

    pub fn probes(&self) -> u32 {
        self.probes
    }

    pub fn prefixes(&self) -> u64 {
        self.prefixes
    }

    pub fn vocab_size(&self) -> usize {
        self.vocab_size
    }

    pub fn bytes(&self) -> usize {
        self.words.len() * 8
    }

    /// Fraction of bits set.
    pub fn fill_ratio(&self) -> f64 {
        let ones: u64 = self.words.iter().map(|w| w.count_ones() as u64).sum();
        ones as f64 / self.num_bits as f64
    }

    #[inline]
    fn positions(&self, key: u64) -> impl Iterator<Item = u64> + '_ {
        let h2 = mix64(key ^ GOLDEN) | 1;
        (0..self.probes as u64).map(move |i| reduce(key.wrapping_add(i.wrapping_mul(h2)), self.num_bits))
    }

    fn insert(&mut self, key: u64) {
        let pos: Vec<u64> = self.positions(key).collect();
        for p in pos {
            self.words[(p >> 6) as usize] |= 1 << (p & 63);
        }
    }

    #[inline]
    pub fn test(&self, key: u64) -> bool {
        self.positions(key).all(|p| self.words[(p >> 6) as usize] >> (p & 63) & 1 == 1)
    }

    pub fn contains_prefix(&self, tokens: &[u32]) -> bool {
        self.test(prefix_hash(tokens))
    }

    /// Observed false-positive rate on one-token extensions of true prefixes
    /// that are not themselves prefixes, which is what a decode step queries.
    ///
    /// Returns `None` if `samples` negatives cannot be found in `100 * samples` draws.
    pub fn estimate_fp_rate(&self, set: &ConstraintSet, samples: usize, seed: u64) -> Option<f64> {
        if set.is_empty() || samples == 0 {
            return None;
        }
        let array = SortedSidArray::new(set);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut prefix = Vec::with_capacity(self.sid_length);
        let (mut negatives, mut hits) = (0usize, 0usize);
        for _ in 0..samples.saturating_mul(100) {
            let sid = set.get(rng.random_range(0..set.len()));
            let t = rng.random_range(0..self.sid_length);
            prefix.clear();
            prefix.extend_from_slice(&sid[..t]);
            prefix.push(rng.random_range(0..self.vocab_size as u32));
            if array.contains_prefix(&prefix) {
                continue;
            }
            negatives += 1;
            hits += self.contains_prefix(&prefix) as usize;
            if negatives == samples {
                return Some(hits as f64 / negatives as f64);
            }
        }
        None
    }
}

/// Sets token `v` wherever `prefix + v` hits the bitmap.
pub fn hash_bitmap_mask(prefixes: &PrefixBatch<'_>, bitmap: &HashBitmap, out: &mut MaskResult) {
    hash_bitmap_mask_with(Exec::default(), prefixes, bitmap, out)
}

pub fn hash_bitmap_mask_with(exec: Exec, prefixes: &PrefixBatch<'_>, bitmap: &HashBitmap, out: &mut MaskResult) {
    let v = bitmap.vocab_size;
    fill_rows(exec, prefixes, v, out, |_, prefix, row| {
        let h = prefix.iter().fold(SEED, |h, &t| absorb(h, t));
        let level = prefix.len() + 1;
        for token in 0..v {
            let hit = bitmap.test(finish(absorb(h, token as u32), level));
            bits::or_bit(row, token, hit);
        }
    });
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::DecoderConfig;

    fn example() -> ConstraintSet {
        let cfg = DecoderConfig::new(3, 3, 0);
        ConstraintSet::from_sids([[0, 1, 0], [2, 0, 1], [2, 0, 2]], &cfg).unwrap()
    }

    #[test]
    fn prefix_count_example() {
        assert_eq!(count_prefixes(&example()), 7);
    }

    #[test]
    fn every_true_prefix_is_present() {
        let set = example();
        let bm = HashBitmap::with_default_sizing(&set).unwrap();
        for sid in set.iter() {
            for t in 1..=3 {
                assert!(bm.contains_prefix(&sid[..t]));
            }
        }
    }

    #[test]
    fn tiny_bitmap_saturates() {
        let set = example();
        let bm = HashBitmap::new(&set, 2, 1).unwrap();
        let mut out = MaskResult::new(0, 3);
        let p = PrefixBatch::all_live(&[1, 1], 2, 1).unwrap();
        hash_bitmap_mask(&p, &bm, &mut out);
        assert!(bm.fill_ratio() > 0.99);
        assert_eq!(out.count(0), 3);
    }

    #[test]
    fn incremental_hash_matches_direct() {
        let h = [5u32, 9].iter().fold(SEED, |h, &t| absorb(h, t));
        assert_eq!(finish(absorb(h, 1), 3), prefix_hash(&[5, 9, 1]));
    }
}
