//! Cross-checks of every masker against the brute-force oracle.
//!
//! The static index is explored breadth-first from the root by following
//! its own recorded next states, so every reachable state is visited and
//! next-state soundness is checked transitively down to the leaves.

use crate::baselines::{
    cpu_trie_mask_with, hash_bitmap_mask_with, ppv_approx_mask_with, ppv_exact_mask_with, HashBitmap,
    PrefixBatch, SortedSidArray,
};
use crate::bits;
use crate::error::{Error, Result};
use crate::index::{TransitionIndex, SINK};
use crate::kernel::{MaskResult, StaticMasker};
use crate::oracle::{f_t_row, prefixes_at};
use crate::par::Exec;
use crate::trie::PointerTrie;
use crate::types::ConstraintSet;

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct StaticReport {
    /// Reachable `(state, step)` pairs checked, sink rows included.
    pub states: usize,
    /// Individual `(state, token)` mask bits compared.
    pub bits: usize,
}

fn mismatch(what: &str, step: usize, prefix: &[u32], got: &[bool], want: &[bool]) -> Error {
    let diff: Vec<usize> = (0..want.len()).filter(|&v| got[v] != want[v]).collect();
    Error::Mismatch(format!("{what} at step {step}, prefix {prefix:?}: tokens {diff:?} differ from the oracle"))
}

/// Dense lookups and the sparse kernel agree with `f_t` on every reachable state.
pub fn check_static(index: &TransitionIndex, constraints: &ConstraintSet, exec: Exec) -> Result<StaticReport> {
    check_static_with(&StaticMasker::new(index).with_exec(exec), constraints)
}

pub fn check_static_with(masker: &StaticMasker<'_>, constraints: &ConstraintSet) -> Result<StaticReport> {
    let index = masker.index;
    let v = index.vocab_size();
    let mut report = StaticReport::default();
    let mut frontier: Vec<(u32, Vec<u32>)> = vec![(index.root(), Vec::new())];
    let mut mask = MaskResult::new(0, v);
    for step in 0..index.sid_length() {
        // A trailing sink row checks that dead beams stay empty.
        let mut nodes: Vec<u32> = frontier.iter().map(|(n, _)| *n).collect();
        nodes.push(SINK);
        masker.mask_nodes(&nodes, step, &mut mask)?;
        if mask.count(frontier.len()) != 0 {
            return Err(Error::Mismatch(format!("sink row has valid tokens at step {step}")));
        }
        let mut next = Vec::new();
        for (r, (_, prefix)) in frontier.iter().enumerate() {
            let want = f_t_row(prefix, v, constraints);
            let got = mask.to_bools(r);
            if got != want {
                return Err(mismatch("static mask", step, prefix, &got, &want));
            }
            for token in mask.valid_tokens(r) {
                let n = mask.next_state(Some(index), r, token);
                if n == SINK || index.level_of(n) != Some(step + 1) {
                    return Err(Error::Mismatch(format!(
                        "prefix {prefix:?} + {token} leads to state {n}, not a level {} state",
                        step + 1
                    )));
                }
                let mut p = prefix.clone();
                p.push(token);
                next.push((n, p));
            }
            report.bits += v;
        }
        report.states += nodes.len();
        let expected = prefixes_at(step + 1, constraints).len();
        if next.len() != expected {
            return Err(Error::Mismatch(format!(
                "{} states reached at level {}, the constraint set has {expected} prefixes",
                next.len(),
                step + 1
            )));
        }
        let mut ids: Vec<u32> = next.iter().map(|(n, _)| *n).collect();
        ids.sort_unstable();
        ids.dedup();
        if ids.len() != next.len() {
            return Err(Error::Mismatch(format!("two prefixes share a state at level {}", step + 1)));
        }
        frontier = next;
    }
    Ok(report)
}

#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct BaselineReport {
    pub rows: usize,
    /// Valid `(prefix, token)` pairs outside the approximate mask.
    pub approx_misses: usize,
    /// Invalid `(prefix, token)` pairs the bitmap let through.
    pub hash_false_positives: usize,
    pub hash_negatives: usize,
}

impl BaselineReport {
    pub fn hash_fp_rate(&self) -> f64 {
        if self.hash_negatives == 0 {
            0.0
        } else {
            self.hash_false_positives as f64 / self.hash_negatives as f64
        }
    }
}

/// Fills log-probabilities for `(step, prefix)`.
pub type RankFn<'a> = &'a dyn Fn(usize, &[u32], &mut [f64]);

/// Exact baselines equal `f_t`, the top-k variant is a subset, the bitmap a superset.
///
/// Checks every valid prefix plus, for each step, one prefix outside the set.
/// `log_probs` supplies the top-k ranking per `(step, row)`.
pub fn check_baselines(
    trie: &PointerTrie,
    array: &SortedSidArray,
    bitmap: &HashBitmap,
    constraints: &ConstraintSet,
    k: usize,
    log_probs: RankFn<'_>,
) -> Result<BaselineReport> {
    let v = constraints.vocab_size();
    let l = constraints.sid_length();
    let exec = Exec::Sequential;
    let mut report = BaselineReport::default();
    let mut out = MaskResult::new(0, v);
    for step in 0..l {
        let mut prefixes = prefixes_at(step, constraints);
        if step > 0 {
            // First prefix that is not in the set, if any.
            let stray = (0..v as u32).map(|t| vec![t; step]).find(|p| array.prefix_range(p).is_empty());
            prefixes.extend(stray);
        }
        let flat: Vec<u32> = prefixes.concat();
        let batch = PrefixBatch::all_live(&flat, step, prefixes.len())?;
        let want: Vec<Vec<bool>> = prefixes.iter().map(|p| f_t_row(p, v, constraints)).collect();

        cpu_trie_mask_with(exec, &batch, trie, &mut out);
        for (r, p) in prefixes.iter().enumerate() {
            let got = out.to_bools(r);
            if got != want[r] {
                return Err(mismatch("cpu_trie", step, p, &got, &want[r]));
            }
        }
        ppv_exact_mask_with(exec, &batch, array, &mut out);
        for (r, p) in prefixes.iter().enumerate() {
            let got = out.to_bools(r);
            if got != want[r] {
                return Err(mismatch("ppv_exact", step, p, &got, &want[r]));
            }
        }
        let mut lp = vec![0.0; prefixes.len() * v];
        for (r, p) in prefixes.iter().enumerate() {
            log_probs(step, p, &mut lp[r * v..(r + 1) * v]);
        }
        ppv_approx_mask_with(exec, &batch, array, &lp, k, &mut out)?;
        for (r, p) in prefixes.iter().enumerate() {
            let got = out.to_bools(r);
            if got.iter().zip(&want[r]).any(|(&g, &w)| g && !w) {
                return Err(mismatch("ppv_approx (not a subset)", step, p, &got, &want[r]));
            }
            report.approx_misses += got.iter().zip(&want[r]).filter(|(&g, &w)| w && !g).count();
        }
        hash_bitmap_mask_with(exec, &batch, bitmap, &mut out);
        for (r, p) in prefixes.iter().enumerate() {
            let row = out.row(r);
            for (t, &w) in want[r].iter().enumerate() {
                let g = bits::get(row, t);
                if w && !g {
                    return Err(Error::Mismatch(format!("hash bitmap false negative at {p:?} + {t}")));
                }
                if !w {
                    report.hash_negatives += 1;
                    report.hash_false_positives += g as usize;
                }
            }
        }
        report.rows += prefixes.len();
    }
    Ok(report)
}
