//! Constrained beam search.
//!
//! One step is: log-softmax, mask construction, masking with `neg_inf`,
//! top-M selection per batch row, and a gather of prefixes, scores and
//! states by winner index. Selection is ordered by score descending, then
//! parent beam ascending, then token ascending.

use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::config::DecoderConfig;
use crate::error::{Error, Result};
use crate::index::TransitionIndex;
use crate::kernel::{self, MaskResult, StaticMasker};
use crate::par::{self, Exec};
use crate::types::{BeamState, LogitBlock, SemanticId};

/// A per-step mask producer. Implemented by the static index and every baseline.
pub trait StepMasker: Sync {
    fn name(&self) -> &'static str;

    /// Node id given to the single live beam of each batch row at step 0.
    fn root_state(&self) -> u32;

    /// Rejects configs the masker was not built for.
    fn check(&self, _config: &DecoderConfig) -> Result<()> {
        Ok(())
    }

    fn compute_mask(&self, state: &BeamState, log_probs: &[f64], out: &mut MaskResult) -> Result<()>;

    fn next_state(&self, mask: &MaskResult, row: usize, token: u32) -> u32;
}

/// Stand-in for the model: logits as a pure function of (batch row, prefix).
pub trait LogitSource: Sync {
    fn vocab_size(&self) -> usize;

    fn row_logits(&self, batch: usize, prefix: &[u32], out: &mut [f64]);

    fn fill(&self, state: &BeamState, out: &mut LogitBlock) {
        let v = self.vocab_size();
        let beam = state.beam_width;
        par::rows_mut(Exec::default(), &mut out.values, v, |r, row| {
            self.row_logits(r / beam, state.prefix(r), row)
        });
    }
}

fn mix64(mut z: u64) -> u64 {
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

fn prefix_seed(seed: u64, batch: usize, prefix: &[u32]) -> u64 {
    let mut h = mix64(seed ^ 0x9e37_79b9_7f4a_7c15);
    h = mix64(h ^ batch as u64);
    for &t in prefix {
        h = mix64(h.wrapping_add(t as u64 + 1));
    }
    mix64(h ^ prefix.len() as u64)
}

/// Uniform logits in `[-scale, scale]`, seeded by (seed, batch row, prefix).
#[derive(Debug, Clone)]
pub struct RandomLogits {
    pub vocab_size: usize,
    pub seed: u64,
    pub scale: f64,
}

impl RandomLogits {
    pub fn new(vocab_size: usize, seed: u64) -> Self {
        Self { vocab_size, seed, scale: 4.0 }
    }
}

impl LogitSource for RandomLogits {
    fn vocab_size(&self) -> usize {
        self.vocab_size
    }

    fn row_logits(&self, batch: usize, prefix: &[u32], out: &mut [f64]) {
        let mut rng = ChaCha8Rng::seed_from_u64(prefix_seed(self.seed, batch, prefix));
        for x in out.iter_mut() {
            *x = rng.random_range(-self.scale..=self.scale);
        }
    }
}

/// Low-rank bigram scorer: `logit(v) = <prev[last token], out[v]> + bias[step][v]`.
#[derive(Debug, Clone)]
pub struct NgramLogits {
    vocab_size: usize,
    sid_length: usize,
    rank: usize,
    /// `(|V| + 1) x rank`; the last row stands for the empty prefix.
    prev: Vec<f32>,
    out: Vec<f32>,
    bias: Vec<f32>,
}

impl NgramLogits {
    pub fn new(vocab_size: usize, sid_length: usize, seed: u64) -> Self {
        let rank = 16;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut table = |n: usize, s: f32| -> Vec<f32> { (0..n).map(|_| rng.random_range(-s..=s)).collect() };
        let prev = table((vocab_size + 1) * rank, 1.0);
        let out = table(vocab_size * rank, 0.5);
        let bias = table(sid_length * vocab_size, 1.0);
        Self { vocab_size, sid_length, rank, prev, out, bias }
    }
}

impl LogitSource for NgramLogits {
    fn vocab_size(&self) -> usize {
        self.vocab_size
    }

    fn row_logits(&self, _batch: usize, prefix: &[u32], out: &mut [f64]) {
        let last = prefix.last().map_or(self.vocab_size, |&t| t as usize);
        let p = &self.prev[last * self.rank..(last + 1) * self.rank];
        let step = prefix.len().min(self.sid_length - 1);
        let bias = &self.bias[step * self.vocab_size..(step + 1) * self.vocab_size];
        for (v, x) in out.iter_mut().enumerate() {
            let o = &self.out[v * self.rank..(v + 1) * self.rank];
            let dot: f32 = p.iter().zip(o).map(|(a, b)| a * b).sum();
            *x = (dot + bias[v]) as f64;
        }
    }
}

/// Wraps a closure `(batch, prefix, out)` as a [`LogitSource`].
pub struct FnLogits<F> {
    pub vocab_size: usize,
    pub f: F,
}

impl<F: Fn(usize, &[u32], &mut [f64]) + Sync> LogitSource for FnLogits<F> {
    fn vocab_size(&self) -> usize {
        self.vocab_size
    }

    fn row_logits(&self, batch: usize, prefix: &[u32], out: &mut [f64]) {
        (self.f)(batch, prefix, out)
    }
}

/// Final beams, `batch_size x beam_width` rows of `sid_length` tokens.
#[derive(Debug, Clone, PartialEq)]
pub struct DecodeResult {
    pub batch_size: usize,
    pub beam_width: usize,
    pub sid_length: usize,
    pub tokens: Vec<u32>,
    pub scores: Vec<f64>,
    pub live: Vec<bool>,
    /// Live beams per batch row.
    pub valid_count: Vec<usize>,
}

impl DecodeResult {
    fn from_state(state: &BeamState, neg_inf: f64) -> Self {
        let live: Vec<bool> = state.scores.iter().map(|&s| s > neg_inf).collect();
        let valid_count = live.chunks(state.beam_width).map(|c| c.iter().filter(|&&l| l).count()).collect();
        Self {
            batch_size: state.batch_size,
            beam_width: state.beam_width,
            sid_length: state.step,
            tokens: state.tokens.clone(),
            scores: state.scores.clone(),
            live,
            valid_count,
        }
    }

    pub fn sid(&self, row: usize) -> &[u32] {
        &self.tokens[row * self.sid_length..(row + 1) * self.sid_length]
    }

    /// Live `(sid, score)` pairs of one batch row in rank order.
    pub fn live_beams(&self, batch: usize) -> Vec<(SemanticId, f64)> {
        (batch * self.beam_width..(batch + 1) * self.beam_width)
            .filter(|&r| self.live[r])
            .map(|r| (SemanticId::from_tokens(self.sid(r).to_vec()), self.scores[r]))
            .collect()
    }

    pub fn total_valid(&self) -> usize {
        self.valid_count.iter().sum()
    }
}

/// Wall time spent in each phase of one step.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct PhaseTimes {
    pub logits: Duration,
    pub log_softmax: Duration,
    pub mask: Duration,
    pub apply: Duration,
    pub select: Duration,
}

impl PhaseTimes {
    pub fn total(&self) -> Duration {
        self.logits + self.log_softmax + self.mask + self.apply + self.select
    }
}

/// Buffers reused across steps.
#[derive(Debug, Clone)]
pub struct StepScratch {
    pub log_probs: Vec<f64>,
    pub mask: MaskResult,
}

impl StepScratch {
    pub fn new(config: &DecoderConfig) -> Self {
        Self { log_probs: Vec::new(), mask: MaskResult::new(config.rows(), config.vocab_size) }
    }
}

fn check_shapes(state: &BeamState, logits: &LogitBlock, config: &DecoderConfig) -> Result<()> {
    if state.step >= config.sid_length {
        return Err(Error::StepOutOfRange { step: state.step, sid_length: config.sid_length });
    }
    if state.batch_size != config.batch_size
        || state.beam_width != config.beam_width
        || state.scores.len() != config.rows()
        || state.nodes.len() != config.rows()
        || state.tokens.len() != config.rows() * state.step
    {
        return Err(Error::Shape("beam state does not match config".into()));
    }
    if logits.rows != config.rows() || logits.vocab_size != config.vocab_size {
        return Err(Error::Shape(format!(
            "logits are {}x{}, expected {}x{}",
            logits.rows,
            logits.vocab_size,
            config.rows(),
            config.vocab_size
        )));
    }
    Ok(())
}

/// Top-`m` of one batch row over `(score desc, flat index asc)`.
///
/// Candidates at or below `neg_inf` are dead; if fewer than `m` are live the
/// rest are filled with the lowest unused flat indices at exactly `neg_inf`.
fn select_top(masked: &[f64], priors: &[f64], vocab: usize, m: usize, neg_inf: f64) -> Vec<(f64, usize)> {
    let mut cands = Vec::new();
    for (j, &prior) in priors.iter().enumerate() {
        if prior <= neg_inf {
            continue;
        }
        for (v, &lp) in masked[j * vocab..(j + 1) * vocab].iter().enumerate() {
            let s = prior + lp;
            if s > neg_inf {
                cands.push((s, j * vocab + v));
            }
        }
    }
    let order = |a: &(f64, usize), b: &(f64, usize)| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1));
    if cands.len() > m {
        cands.select_nth_unstable_by(m - 1, order);
        cands.truncate(m);
    }
    cands.sort_unstable_by(order);
    if cands.len() < m {
        let mut taken: Vec<usize> = cands.iter().map(|c| c.1).collect();
        taken.sort_unstable();
        let mut t = 0;
        let mut flat = 0;
        while cands.len() < m {
            if t < taken.len() && taken[t] == flat {
                t += 1;
            } else {
                cands.push((neg_inf, flat));
            }
            flat += 1;
        }
    }
    cands
}

/// One step with the static index.
pub fn decode_step(
    state: &BeamState,
    logits: &LogitBlock,
    index: &TransitionIndex,
    config: &DecoderConfig,
) -> Result<BeamState> {
    let masker = StaticMasker::new(index);
    masker.check(config)?;
    let mut scratch = StepScratch::new(config);
    decode_step_with(&masker, state, logits, config, &mut scratch, None)
}

/// One step with any masker, optionally recording phase timings.
pub fn decode_step_with<S: StepMasker + ?Sized>(
    masker: &S,
    state: &BeamState,
    logits: &LogitBlock,
    config: &DecoderConfig,
    scratch: &mut StepScratch,
    times: Option<&mut PhaseTimes>,
) -> Result<BeamState> {
    check_shapes(state, logits, config)?;
    let v = config.vocab_size;
    let m = config.beam_width;
    let neg_inf = config.neg_inf;

    let t0 = Instant::now();
    scratch.log_probs.resize(logits.values.len(), 0.0);
    kernel::log_softmax_into(Exec::default(), logits, &mut scratch.log_probs)?;
    let t1 = Instant::now();
    masker.compute_mask(state, &scratch.log_probs, &mut scratch.mask)?;
    let t2 = Instant::now();
    if scratch.mask.rows() != config.rows() || scratch.mask.vocab_size() != v {
        return Err(Error::Shape(format!("{} produced a mask of the wrong shape", masker.name())));
    }
    kernel::apply_mask_in_place(&mut scratch.log_probs, &scratch.mask, neg_inf);
    let t3 = Instant::now();

    let step = state.step;
    let width = step + 1;
    let rows = config.rows();
    let mut next = BeamState {
        batch_size: state.batch_size,
        beam_width: m,
        step: width,
        tokens: vec![0; rows * width],
        scores: vec![neg_inf; rows],
        nodes: vec![0; rows],
    };
    for b in 0..config.batch_size {
        let base = b * m;
        let masked = &scratch.log_probs[base * v..(base + m) * v];
        let winners = select_top(masked, &state.scores[base..base + m], v, m, neg_inf);
        for (i, (score, flat)) in winners.into_iter().enumerate() {
            let row = base + i;
            let parent = base + flat / v;
            let token = (flat % v) as u32;
            let dst = &mut next.tokens[row * width..(row + 1) * width];
            dst[..step].copy_from_slice(state.prefix(parent));
            dst[step] = token;
            if score > neg_inf {
                let node = masker.next_state(&scratch.mask, parent, token);
                if node == 0 {
                    return Err(Error::Mismatch(format!(
                        "{}: token {token} is masked in but has no next state",
                        masker.name()
                    )));
                }
                next.scores[row] = score;
                next.nodes[row] = node;
            }
        }
    }
    let t4 = Instant::now();
    if let Some(times) = times {
        times.log_softmax += t1 - t0;
        times.mask += t2 - t1;
        times.apply += t3 - t2;
        times.select += t4 - t3;
    }
    Ok(next)
}

/// Full decode with the static index.
pub fn decode<L: LogitSource + ?Sized>(
    source: &L,
    index: &TransitionIndex,
    config: &DecoderConfig,
) -> Result<DecodeResult> {
    decode_with(&StaticMasker::new(index), source, config, None)
}

/// Full decode with any masker; pushes one [`PhaseTimes`] per step when asked.
pub fn decode_with<S: StepMasker + ?Sized, L: LogitSource + ?Sized>(
    masker: &S,
    source: &L,
    config: &DecoderConfig,
    mut times: Option<&mut Vec<PhaseTimes>>,
) -> Result<DecodeResult> {
    config.validate()?;
    masker.check(config)?;
    if source.vocab_size() != config.vocab_size {
        return Err(Error::Shape("logit source vocabulary differs from config".into()));
    }
    let mut state = BeamState::initial(config, masker.root_state());
    let mut scratch = StepScratch::new(config);
    let mut logits = LogitBlock::zeros(config.rows(), config.vocab_size);
    for _ in 0..config.sid_length {
        let mut step_times = PhaseTimes::default();
        let t0 = Instant::now();
        source.fill(&state, &mut logits);
        step_times.logits = t0.elapsed();
        state = decode_step_with(masker, &state, &logits, config, &mut scratch, Some(&mut step_times))?;
        if let Some(t) = times.as_deref_mut() {
            t.push(step_times);
        }
    }
    Ok(DecodeResult::from_state(&state, config.neg_inf))
}

/// Beam search with no validity checks.
///
/// Kept separate from [`decode_step_with`]: every `M x |V|` candidate is
/// scored and fully sorted.
pub fn reference_unconstrained_decode<L: LogitSource + ?Sized>(
    source: &L,
    config: &DecoderConfig,
) -> Result<DecodeResult> {
    config.validate()?;
    let v = config.vocab_size;
    let m = config.beam_width;
    let neg_inf = config.neg_inf;
    let mut state = BeamState::initial(config, 1);
    let mut row = vec![0.0; v];
    for step in 0..config.sid_length {
        let mut next = BeamState {
            batch_size: config.batch_size,
            beam_width: m,
            step: step + 1,
            tokens: Vec::with_capacity(config.rows() * (step + 1)),
            scores: Vec::with_capacity(config.rows()),
            nodes: Vec::with_capacity(config.rows()),
        };
        for b in 0..config.batch_size {
            let mut all: Vec<(f64, usize, u32)> = Vec::with_capacity(m * v);
            for j in 0..m {
                let r = b * m + j;
                let prior = state.scores[r];
                source.row_logits(b, state.prefix(r), &mut row);
                let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                let lse = max + row.iter().map(|x| (x - max).exp()).sum::<f64>().ln();
                for (t, &x) in row.iter().enumerate() {
                    let s = if prior <= neg_inf { neg_inf } else { prior + (x - lse) };
                    all.push((s, j, t as u32));
                }
            }
            all.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)).then(a.2.cmp(&b.2)));
            for &(s, j, t) in &all[..m] {
                let parent = b * m + j;
                next.tokens.extend_from_slice(state.prefix(parent));
                next.tokens.push(t);
                let live = s > neg_inf;
                next.scores.push(if live { s } else { neg_inf });
                next.nodes.push(live as u32);
            }
        }
        state = next;
    }
    Ok(DecodeResult::from_state(&state, neg_inf))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ConstraintSet;

    fn example_index() -> (TransitionIndex, DecoderConfig) {
        let cfg = DecoderConfig::new(3, 3, 1).with_beam(3);
        let set = ConstraintSet::from_sids([[0, 1, 0], [2, 0, 1], [2, 0, 2]], &cfg).unwrap();
        (TransitionIndex::build(&set, &cfg).unwrap(), cfg)
    }

    #[test]
    fn uniform_logits_return_every_example_path() {
        let (idx, cfg) = example_index();
        let flat = FnLogits { vocab_size: 3, f: |_: usize, _: &[u32], out: &mut [f64]| out.fill(0.0) };
        let res = decode(&flat, &idx, &cfg).unwrap();
        assert_eq!(res.valid_count, vec![3]);
        // No renormalization after masking, so all three tie at -3 ln 3.
        let sids: Vec<&[u32]> = (0..3).map(|r| res.sid(r)).collect();
        assert_eq!(sids, vec![&[0, 1, 0][..], &[2, 0, 1], &[2, 0, 2]]);
    }

    #[test]
    fn bias_toward_last_token_ranks_it_first() {
        let (idx, cfg) = example_index();
        let src = FnLogits {
            vocab_size: 3,
            f: |_: usize, p: &[u32], out: &mut [f64]| {
                out.fill(0.0);
                if p.is_empty() {
                    out[2] = 10.0;
                }
            },
        };
        let res = decode(&src, &idx, &cfg).unwrap();
        assert_eq!(res.sid(0)[0], 2);
    }

    #[test]
    fn beam_wider_than_corpus_reports_valid_count() {
        let cfg = DecoderConfig::new(4, 2, 0).with_beam(5);
        let set = ConstraintSet::from_sids([[1, 2], [3, 0]], &cfg).unwrap();
        let idx = TransitionIndex::build(&set, &cfg).unwrap();
        let res = decode(&RandomLogits::new(4, 1), &idx, &cfg).unwrap();
        assert_eq!(res.valid_count, vec![2]);
        assert!(res.live[..2].iter().all(|&l| l) && res.live[2..].iter().all(|&l| !l));
    }

    #[test]
    fn greedy_reference_follows_argmax() {
        let cfg = DecoderConfig::new(5, 3, 0).with_beam(1);
        let src = RandomLogits::new(5, 9);
        let res = reference_unconstrained_decode(&src, &cfg).unwrap();
        let mut prefix = Vec::new();
        let mut row = vec![0.0; 5];
        for _ in 0..3 {
            src.row_logits(0, &prefix, &mut row);
            let best = (0..5).max_by(|&a, &b| row[a].total_cmp(&row[b]).then(b.cmp(&a))).unwrap();
            prefix.push(best as u32);
        }
        assert_eq!(res.sid(0), &prefix[..]);
    }

    #[test]
    fn select_top_fills_dead_slots_in_flat_order() {
        let neg = -1e10;
        let masked = [neg, -1.0, neg, -0.5];
        let got = select_top(&masked, &[0.0, neg], 2, 3, neg);
        assert_eq!(got, vec![(-1.0, 1), (neg, 0), (neg, 2)]);
    }

    #[test]
    fn logit_sources_are_deterministic() {
        let a = RandomLogits::new(16, 3);
        let n = NgramLogits::new(16, 4, 3);
        let (mut x, mut y) = (vec![0.0; 16], vec![0.0; 16]);
        for src in [&a as &dyn LogitSource, &n] {
            src.row_logits(1, &[3, 4], &mut x);
            src.row_logits(1, &[3, 4], &mut y);
            assert_eq!(x, y);
            src.row_logits(1, &[3, 5], &mut y);
            assert_ne!(x, y);
        }
    }
}
