//! Brute-force reference answers. Deliberately slow and shares no code with
//! the index, kernels or decoder.

use crate::config::DecoderConfig;
use crate::decoder::{DecodeResult, LogitSource};
use crate::error::{Error, Result};
use crate::types::{ConstraintSet, SemanticId};

/// Largest `|V|^L` that [`exhaustive_topk`] will enumerate.
pub const ENUMERATION_LIMIT: u128 = 1_000_000;

/// Whether some id in `constraints` starts with `prefix` followed by `token`.
pub fn f_t(prefix: &[u32], token: u32, constraints: &ConstraintSet) -> bool {
    let t = prefix.len();
    constraints
        .iter()
        .any(|c| t < c.len() && c[..t] == *prefix && c[t] == token)
}

/// `f_t` for every token of the vocabulary.
pub fn f_t_row(prefix: &[u32], vocab_size: usize, constraints: &ConstraintSet) -> Vec<bool> {
    (0..vocab_size as u32).map(|v| f_t(prefix, v, constraints)).collect()
}

/// Distinct prefixes of length `t` occurring in `constraints`, sorted.
pub fn prefixes_at(t: usize, constraints: &ConstraintSet) -> Vec<Vec<u32>> {
    let mut out: Vec<Vec<u32>> = constraints.iter().map(|c| c[..t].to_vec()).collect();
    out.sort();
    out.dedup();
    out
}

fn log_softmax(x: &[f64]) -> Vec<f64> {
    let m = x.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let z: f64 = x.iter().map(|&v| (v - m).exp()).sum();
    x.iter().map(|&v| v - m - z.ln()).collect()
}

/// Total log-probability of one id for one batch row.
pub fn sequence_score<S: LogitSource + ?Sized>(source: &S, batch: usize, sid: &[u32]) -> f64 {
    let mut row = vec![0.0; source.vocab_size()];
    let mut total = 0.0;
    for t in 0..sid.len() {
        source.row_logits(batch, &sid[..t], &mut row);
        total += log_softmax(&row)[sid[t] as usize];
    }
    total
}

/// Scores every id in `constraints` and keeps the best `beam_width` per
/// batch row, ordered by score descending then id ascending. Unfilled
/// slots are dead.
pub fn exhaustive_topk<S: LogitSource + ?Sized>(
    source: &S,
    constraints: &ConstraintSet,
    config: &DecoderConfig,
) -> Result<DecodeResult> {
    config.validate()?;
    let space = (config.vocab_size as u128)
        .checked_pow(config.sid_length as u32)
        .unwrap_or(u128::MAX);
    if space > ENUMERATION_LIMIT {
        return Err(Error::EnumerationGuard(space));
    }
    let sids: Vec<SemanticId> = constraints.to_sids();
    exhaustive_topk_over(source, &sids, config)
}

/// [`exhaustive_topk`] over ids in any storage order.
pub fn exhaustive_topk_over<S: LogitSource + ?Sized>(
    source: &S,
    sids: &[SemanticId],
    config: &DecoderConfig,
) -> Result<DecodeResult> {
    let m = config.beam_width;
    let l = config.sid_length;
    let mut res = DecodeResult {
        batch_size: config.batch_size,
        beam_width: m,
        sid_length: l,
        tokens: vec![0; config.rows() * l],
        scores: vec![config.neg_inf; config.rows()],
        live: vec![false; config.rows()],
        valid_count: vec![0; config.batch_size],
    };
    for b in 0..config.batch_size {
        let mut ranked: Vec<(f64, &[u32])> =
            sids.iter().map(|s| (sequence_score(source, b, s.tokens()), s.tokens())).collect();
        ranked.sort_by(|x, y| y.0.total_cmp(&x.0).then_with(|| x.1.cmp(y.1)));
        ranked.dedup_by(|x, y| x.1 == y.1);
        for (i, (score, sid)) in ranked.into_iter().take(m).enumerate() {
            let row = b * m + i;
            res.tokens[row * l..(row + 1) * l].copy_from_slice(sid);
            res.scores[row] = score;
            res.live[row] = true;
            res.valid_count[b] += 1;
        }
    }
    Ok(res)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::decoder::FnLogits;

    fn example() -> ConstraintSet {
        let cfg = DecoderConfig::new(3, 3, 0);
        ConstraintSet::from_sids([[0, 1, 0], [2, 0, 1], [2, 0, 2]], &cfg).unwrap()
    }

    #[test]
    fn f_t_on_example() {
        let c = example();
        assert!(f_t(&[0], 1, &c));
        assert!(!f_t(&[0], 0, &c));
        assert_eq!(f_t_row(&[], 3, &c), vec![true, false, true]);
        assert_eq!(prefixes_at(2, &c), vec![vec![0, 1], vec![2, 0]]);
    }

    #[test]
    fn uniform_ties_fall_back_to_id_order() {
        let cfg = DecoderConfig::new(3, 3, 0).with_beam(5);
        let src = FnLogits { vocab_size: 3, f: |_: usize, _: &[u32], o: &mut [f64]| o.fill(0.0) };
        let res = exhaustive_topk(&src, &example(), &cfg).unwrap();
        assert_eq!(res.valid_count, vec![3]);
        assert_eq!(res.sid(0), &[0, 1, 0]);
        assert_eq!(res.sid(2), &[2, 0, 2]);
        assert!((res.scores[1] + 3.0 * 3f64.ln()).abs() < 1e-12);
        assert!(!res.live[3]);
    }

    #[test]
    fn guard_rejects_large_spaces() {
        let cfg = DecoderConfig::new(2048, 8, 0);
        let set = ConstraintSet::from_sids([[0u32; 8]], &cfg).unwrap();
        let src = FnLogits { vocab_size: 2048, f: |_: usize, _: &[u32], o: &mut [f64]| o.fill(0.0) };
        assert!(matches!(exhaustive_topk(&src, &set, &cfg), Err(Error::EnumerationGuard(_))));
    }
}
