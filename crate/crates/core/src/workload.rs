//! Seeded synthetic constraint sets.

use rand::seq::index;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::config::DecoderConfig;
use crate::error::{Error, Result};
use crate::types::ConstraintSet;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Mode {
    /// Every id drawn uniformly from `V^L`.
    #[default]
    Uniform,
    /// Ids share one of a few random prefixes of length `min(3, L - 1)`.
    Clustered,
}

/// Ids per cluster prefix in clustered mode, on average.
pub const CLUSTER_SIZE: usize = 256;

fn space(config: &DecoderConfig, levels: usize) -> u128 {
    (config.vocab_size as u128).checked_pow(levels as u32).unwrap_or(u128::MAX)
}

/// Uniform sample of `count` distinct ids, resampling collisions.
pub fn gen_constraints(seed: u64, count: usize, config: &DecoderConfig) -> Result<ConstraintSet> {
    gen_constraints_mode(seed, count, config, Mode::Uniform)
}

pub fn gen_constraints_mode(seed: u64, count: usize, config: &DecoderConfig, mode: Mode) -> Result<ConstraintSet> {
    config.validate()?;
    let l = config.sid_length;
    let v = config.vocab_size as u32;
    let total = space(config, l);
    if count as u128 > total {
        return Err(Error::TooManyConstraints { requested: count as u128, available: total });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);

    // Dense requests: sample distinct indices of the product space directly.
    if (count as u128) * 2 > total {
        let picks = index::sample(&mut rng, total as usize, count);
        let mut flat = Vec::with_capacity(count * l);
        for i in picks.iter() {
            let mut x = i;
            let start = flat.len();
            flat.resize(start + l, 0);
            for slot in flat[start..].iter_mut().rev() {
                *slot = (x % v as usize) as u32;
                x /= v as usize;
            }
        }
        return ConstraintSet::from_flat(flat, l, config.vocab_size);
    }

    let c = l.saturating_sub(1).min(3);
    let clusters: Vec<Vec<u32>> = match mode {
        Mode::Clustered if c > 0 => {
            let n = count.div_ceil(CLUSTER_SIZE).max(1) as u128;
            let n = n.min(space(config, c));
            let suffix_space = space(config, l - c);
            if n.saturating_mul(suffix_space) < 2 * count as u128 {
                Vec::new()
            } else {
                (0..n).map(|_| (0..c).map(|_| rng.random_range(0..v)).collect()).collect()
            }
        }
        _ => Vec::new(),
    };

    let mut draw = |flat: &mut Vec<u32>, n: usize| {
        for _ in 0..n {
            if clusters.is_empty() {
                flat.extend((0..l).map(|_| rng.random_range(0..v)));
            } else {
                let p = &clusters[rng.random_range(0..clusters.len())];
                flat.extend_from_slice(p);
                flat.extend((c..l).map(|_| rng.random_range(0..v)));
            }
        }
    };

    let mut flat = Vec::with_capacity(count * l);
    draw(&mut flat, count);
    let mut set = ConstraintSet::from_flat(flat, l, config.vocab_size)?;
    while set.len() < count {
        let missing = count - set.len();
        let mut flat = set.as_flat().to_vec();
        draw(&mut flat, missing);
        set = ConstraintSet::from_flat(flat, l, config.vocab_size)?;
    }
    Ok(set)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn deterministic_per_seed() {
        let cfg = DecoderConfig::new(64, 4, 1);
        let a = gen_constraints(7, 500, &cfg).unwrap();
        let b = gen_constraints(7, 500, &cfg).unwrap();
        let c = gen_constraints(8, 500, &cfg).unwrap();
        assert_eq!(a, b);
        assert_ne!(a, c);
        assert_eq!(a.len(), 500);
    }

    #[test]
    fn full_space() {
        let cfg = DecoderConfig::new(4, 3, 0);
        let set = gen_constraints(1, 64, &cfg).unwrap();
        assert_eq!(set.len(), 64);
        assert!(set.contains(&[3, 3, 3]) && set.contains(&[0, 0, 0]));
        assert!(matches!(gen_constraints(1, 65, &cfg), Err(Error::TooManyConstraints { .. })));
    }

    #[test]
    fn clustered_mode_shares_prefixes() {
        let cfg = DecoderConfig::new(256, 6, 1);
        let set = gen_constraints_mode(3, 2048, &cfg, Mode::Clustered).unwrap();
        assert_eq!(set.len(), 2048);
        let mut heads: Vec<&[u32]> = set.iter().map(|s| &s[..3]).collect();
        heads.dedup();
        assert!(heads.len() <= 8);
    }
}
