use std::time::Instant;

use anyhow::{Context, Result};
use sidmask::baselines::{
    CpuTrieMasker, HashBitmap, HashBitmapMasker, PpvApproxMasker, PpvExactMasker, SortedSidArray, UnconstrainedMasker,
    PPV_TOP_K,
};
use sidmask::decoder::decode_with;
use sidmask::index::{actual_footprint, memory_upper_bound, LAYOUT_K1, LAYOUT_K2, PAPER_K1, PAPER_K2};
use sidmask::kernel::{vntk_with, ClampedEdges};
use sidmask::oracle::{exhaustive_topk, prefixes_at};
use sidmask::par::Exec;
use sidmask::trie::{build_pointer_trie, PointerTrie};
use sidmask::verify::{check_baselines, check_static_with};
use sidmask::workload::{gen_constraints, gen_constraints_mode, Mode};
use sidmask::{
    ConstraintSet, DecoderConfig, LogitSource, MaskResult, NgramLogits, PhaseTimes, RandomLogits, StaticMasker,
    StepMasker, TransitionIndex,
};

use crate::report::{BenchReport, BranchRow, ComplianceRow, LatencyRow, MemoryRow, OracleSummary, Summary};
use crate::spec::{Method, SweepSpec};

/// Seed for one sweep cell, so cells are independent of sweep order.
pub fn cell_seed(seed: u64, vocab: usize, constraints: usize) -> u64 {
    seed ^ (vocab as u64).wrapping_mul(0x9e37_79b9_7f4a_7c15) ^ (constraints as u64).wrapping_mul(0xc2b2_ae3d_27d4_eb4f)
}

/// Everything the requested methods need for one constraint set.
pub struct Structures {
    pub config: DecoderConfig,
    pub set: ConstraintSet,
    pub index: Option<TransitionIndex>,
    pub trie: Option<PointerTrie>,
    pub array: Option<SortedSidArray>,
    pub bitmap: Option<HashBitmap>,
}

impl Structures {
    pub fn build(set: ConstraintSet, config: DecoderConfig, methods: &[Method], bits_per_prefix: u64) -> Result<Self> {
        let wants = |m: Method| methods.contains(&m);
        let index = wants(Method::Static).then(|| TransitionIndex::build(&set, &config)).transpose()?;
        let trie = wants(Method::CpuTrie).then(|| build_pointer_trie(&set, &config)).transpose()?;
        let array = (wants(Method::PpvExact) || wants(Method::PpvApprox)).then(|| SortedSidArray::new(&set));
        let bitmap = wants(Method::HashBitmap)
            .then(|| {
                let bits = (sidmask::baselines::count_prefixes(&set) * bits_per_prefix).max(64);
                HashBitmap::new(&set, bits, sidmask::baselines::DEFAULT_PROBES)
            })
            .transpose()?;
        Ok(Self { config, set, index, trie, array, bitmap })
    }

    pub fn masker(&self, method: Method, ppv_k: usize) -> Box<dyn StepMasker + '_> {
        match method {
            Method::Static => Box::new(StaticMasker::new(self.index.as_ref().expect("static index"))),
            Method::CpuTrie => Box::new(CpuTrieMasker::new(self.trie.as_ref().expect("pointer trie"))),
            Method::PpvExact => Box::new(PpvExactMasker::new(self.array.as_ref().expect("sorted array"))),
            Method::PpvApprox => Box::new(PpvApproxMasker::new(self.array.as_ref().expect("sorted array")).with_k(ppv_k)),
            Method::HashBitmap => Box::new(HashBitmapMasker::new(self.bitmap.as_ref().expect("bitmap"))),
            Method::Unconstrained => Box::new(UnconstrainedMasker::new(self.config.vocab_size)),
        }
    }
}

/// Rough peak bytes to build a method's structure, used to skip cells that cannot fit.
pub fn estimate_bytes(method: Method, config: &DecoderConfig, constraints: usize) -> u128 {
    let c = constraints as u128;
    let l = config.sid_length as u128;
    let nodes = c * l + 1;
    let pointer_trie = nodes * 56;
    let base = c * l * 8;
    base + match method {
        Method::Static => {
            memory_upper_bound(LAYOUT_K1, LAYOUT_K2, config.vocab_size, config.sid_length, config.dense_depth, constraints as u64)
                .unwrap_or(u128::MAX)
                .saturating_add(pointer_trie)
        }
        Method::CpuTrie => pointer_trie,
        Method::PpvExact | Method::PpvApprox => c * l * 4,
        Method::HashBitmap => nodes,
        Method::Unconstrained => 0,
    }
}

/// 80% of available memory, or 4 GiB if that cannot be read.
pub fn default_memory_budget() -> u64 {
    let avail = std::fs::read_to_string("/proc/meminfo").ok().and_then(|s| {
        s.lines()
            .find(|l| l.starts_with("MemAvailable:"))
            .and_then(|l| l.split_whitespace().nth(1))
            .and_then(|kb| kb.parse::<u64>().ok())
    });
    avail.map_or(4 << 30, |kb| kb * 1024 / 10 * 8)
}

fn ms(d: std::time::Duration) -> f64 {
    d.as_secs_f64() * 1e3
}

/// One timed decode: (mean mask construction ms per step, total ms).
pub fn timed_decode<S: LogitSource + ?Sized>(
    masker: &dyn StepMasker,
    source: &S,
    config: &DecoderConfig,
) -> Result<(f64, f64)> {
    let mut times: Vec<PhaseTimes> = Vec::with_capacity(config.sid_length);
    let t0 = Instant::now();
    decode_with(masker, source, config, Some(&mut times))?;
    let total = ms(t0.elapsed());
    let mask: f64 = times.iter().map(|t| ms(t.mask)).sum::<f64>() / config.sid_length as f64;
    Ok((mask, total))
}

/// Timing rows for one `(|V|, |C|)` cell.
pub fn latency_cell(spec: &SweepSpec, vocab: usize, constraints: usize) -> Result<Vec<LatencyRow>> {
    let config = spec.config(vocab);
    let budget = spec.memory_budget_bytes.unwrap_or_else(default_memory_budget) as u128;
    let row = |method: Method, status: String, mask: Summary, overhead: Summary| LatencyRow {
        method: method.name().into(),
        vocab,
        constraints,
        sid_length: spec.sid_length,
        dense_depth: spec.dense_depth,
        beam: spec.beam,
        batch: spec.batch,
        trials: spec.trials,
        status,
        mask_ms: mask,
        overhead_ms: overhead,
    };
    let mut rows = Vec::new();
    let mut runnable = Vec::new();
    for &m in &spec.methods {
        if m == Method::Unconstrained {
            continue;
        }
        if estimate_bytes(m, &config, constraints) > budget {
            rows.push(row(m, "oom".into(), Summary::default(), Summary::default()));
        } else {
            runnable.push(m);
        }
    }
    let seed = cell_seed(spec.seed, vocab, constraints);
    let set = gen_constraints_mode(seed, constraints, &config, spec.mode.into())?;
    let built = Structures::build(set, config, &runnable, spec.bitmap_bits_per_prefix)?;
    let base = UnconstrainedMasker::new(vocab);
    let maskers: Vec<(Method, Box<dyn StepMasker + '_>)> =
        runnable.iter().map(|&m| (m, built.masker(m, spec.ppv_k))).collect();

    for w in 0..spec.warmup {
        let src = RandomLogits::new(vocab, seed.wrapping_add(u64::MAX - w as u64));
        timed_decode(&base, &src, &config)?;
        for (_, m) in &maskers {
            timed_decode(m.as_ref(), &src, &config)?;
        }
    }
    let mut masks = vec![Vec::with_capacity(spec.trials); maskers.len() + 1];
    let mut overheads = vec![Vec::with_capacity(spec.trials); maskers.len() + 1];
    let steps = spec.sid_length as f64;
    for t in 0..spec.trials {
        let src = RandomLogits::new(vocab, seed.wrapping_add(t as u64));
        let (base_mask, base_total) = timed_decode(&base, &src, &config)?;
        masks[0].push(base_mask);
        overheads[0].push(0.0);
        for (i, (_, m)) in maskers.iter().enumerate() {
            let (mask, total) = timed_decode(m.as_ref(), &src, &config)?;
            masks[i + 1].push(mask);
            overheads[i + 1].push((total - base_total) / steps);
        }
    }
    if spec.methods.contains(&Method::Unconstrained) {
        rows.push(row(Method::Unconstrained, "ok".into(), Summary::of(&masks[0]), Summary::of(&overheads[0])));
    }
    for (i, (m, _)) in maskers.iter().enumerate() {
        rows.push(row(*m, "ok".into(), Summary::of(&masks[i + 1]), Summary::of(&overheads[i + 1])));
    }
    Ok(rows)
}

pub fn run_latency_suite(spec: &SweepSpec) -> Result<BenchReport> {
    let mut report = BenchReport::new(Some(spec.clone()));
    for (v, c) in spec.cells() {
        report.latency.extend(latency_cell(spec, v, c).with_context(|| format!("cell |V|={v}, |C|={c}"))?);
    }
    Ok(report)
}

/// Shortest id length whose space holds twice the requested count.
pub fn branch_sid_length(vocab: usize, constraints: usize) -> usize {
    let mut l = 2;
    while (vocab as u128).pow(l as u32) < 2 * constraints as u128 {
        l += 1;
    }
    l
}

/// Times the sparse kernel alone at the root of a `d = 0` index with `|V| = B`.
pub fn branch_cell(vocab: usize, constraints: usize, rows: usize, trials: usize, warmup: usize, seed: u64) -> Result<BranchRow> {
    let config = DecoderConfig::new(vocab, branch_sid_length(vocab, constraints), 0);
    let set = gen_constraints(cell_seed(seed, vocab, constraints), constraints, &config)?;
    let index = TransitionIndex::build(&set, &config)?;
    drop(set);
    let nodes = vec![index.root(); rows];
    let reader = ClampedEdges::new(&index);
    let mut out = MaskResult::new(rows, vocab);
    let mut call = || vntk_with(Exec::default(), &index, &reader, &nodes, 0, &mut out);
    // Repeat calls so one sample spans at least half a millisecond.
    let t0 = Instant::now();
    call()?;
    let once = t0.elapsed().as_secs_f64().max(1e-7);
    let reps = ((5e-4 / once).ceil() as usize).clamp(1, 100_000);
    for _ in 0..warmup * reps {
        call()?;
    }
    let mut samples = Vec::with_capacity(trials);
    for _ in 0..trials {
        let t = Instant::now();
        for _ in 0..reps {
            call()?;
        }
        samples.push(ms(t.elapsed()) / reps as f64);
    }
    Ok(BranchRow {
        vocab,
        branch_factor: index.branch_factors()[0],
        constraints,
        rows,
        trials,
        vntk_ms: Summary::of(&samples),
    })
}

/// `spec.vocab` lists the branch factors.
pub fn run_branch_suite(spec: &SweepSpec) -> Result<BenchReport> {
    let mut report = BenchReport::new(Some(spec.clone()));
    for (v, c) in spec.cells() {
        report.branch.push(branch_cell(v, c, spec.beam * spec.batch, spec.trials, spec.warmup, spec.seed)?);
    }
    Ok(report)
}

/// Decodes `decodes` times per method with varying logits and checks every emitted id.
pub fn compliance_cell(built: &Structures, methods: &[Method], decodes: usize, seed: u64, ppv_k: usize) -> Result<Vec<ComplianceRow>> {
    let cfg = &built.config;
    let mut rows = Vec::new();
    for &method in methods {
        let masker = built.masker(method, ppv_k);
        let (mut emitted, mut violations) = (0, 0);
        for i in 0..decodes {
            let s = seed.wrapping_add(i as u64);
            let res = if i % 2 == 0 {
                decode_with(masker.as_ref(), &RandomLogits::new(cfg.vocab_size, s), cfg, None)?
            } else {
                decode_with(masker.as_ref(), &NgramLogits::new(cfg.vocab_size, cfg.sid_length, s), cfg, None)?
            };
            for r in 0..cfg.rows() {
                if res.live[r] {
                    emitted += 1;
                    violations += !built.set.contains(res.sid(r)) as usize;
                }
            }
        }
        rows.push(ComplianceRow {
            method: method.name().into(),
            vocab: cfg.vocab_size,
            sid_length: cfg.sid_length,
            dense_depth: cfg.dense_depth,
            constraints: built.set.len(),
            beam: cfg.beam_width,
            decodes,
            emitted,
            violations,
            violation_rate: if emitted == 0 { 0.0 } else { violations as f64 / emitted as f64 },
        });
    }
    Ok(rows)
}

/// `spec.trials` decodes per method and cell.
pub fn run_compliance_suite(spec: &SweepSpec) -> Result<BenchReport> {
    let mut report = BenchReport::new(Some(spec.clone()));
    for (v, c) in spec.cells() {
        let config = spec.config(v);
        let seed = cell_seed(spec.seed, v, c);
        let set = gen_constraints_mode(seed, c, &config, spec.mode.into())?;
        let built = Structures::build(set, config, &spec.methods, spec.bitmap_bits_per_prefix)?;
        report.compliance.extend(compliance_cell(&built, &spec.methods, spec.trials, seed, spec.ppv_k)?);
    }
    Ok(report)
}

pub fn memory_row(index: &TransitionIndex, constraints: usize, mode: &str) -> Result<MemoryRow> {
    let fp = actual_footprint(index);
    let (v, l, d) = (index.vocab_size(), index.sid_length(), index.dense_depth());
    let bound = memory_upper_bound(PAPER_K1, PAPER_K2, v, l, d, constraints as u64)?;
    let layout = memory_upper_bound(LAYOUT_K1, LAYOUT_K2, v, l, d, constraints as u64)?;
    let model = fp.model_bytes(PAPER_K1, PAPER_K2);
    let raw = fp.raw_bytes();
    Ok(MemoryRow {
        vocab: v,
        constraints,
        sid_length: l,
        dense_depth: d,
        mode: mode.into(),
        states: index.total_states(),
        edges: index.total_edges(),
        raw_bytes: raw,
        model_bytes: model,
        bound_bytes: bound,
        layout_bound_bytes: layout,
        model_ratio: model as f64 / bound as f64,
        raw_ratio: raw as f64 / layout as f64,
        mb_per_million: raw as f64 / 1e6 / (constraints as f64 / 1e6),
    })
}

pub fn run_memory_suite(spec: &SweepSpec) -> Result<BenchReport> {
    let mut report = BenchReport::new(Some(spec.clone()));
    let mode = match spec.mode.into() {
        Mode::Uniform => "uniform",
        Mode::Clustered => "clustered",
    };
    for (v, c) in spec.cells() {
        let config = spec.config(v);
        let set = gen_constraints_mode(cell_seed(spec.seed, v, c), c, &config, spec.mode.into())?;
        let index = TransitionIndex::build(&set, &config)?;
        report.memory.push(memory_row(&index, set.len(), mode)?);
    }
    Ok(report)
}

/// Small exhaustive grid for mask and ranking checks.
#[derive(Debug, Clone, PartialEq)]
pub struct OracleGrid {
    pub vocab: Vec<usize>,
    pub lengths: Vec<usize>,
    pub counts: Vec<usize>,
    pub seeds: u64,
    /// Top-k used for the approximate verifier, as a fraction of `|V|`.
    pub approx_divisor: usize,
}

impl Default for OracleGrid {
    fn default() -> Self {
        Self { vocab: vec![4, 8, 16], lengths: vec![2, 3, 4], counts: vec![1, 5, 50, 200], seeds: 20, approx_divisor: 2 }
    }
}

/// Every dense depth of every grid instance: static masks against `f_t`,
/// the baselines against each other and `f_t`, and wide-beam decoding against
/// exhaustive ranking. Failures are collected, not raised.
pub fn run_oracle_suite(grid: &OracleGrid) -> OracleSummary {
    let mut summary = OracleSummary::default();
    for &v in &grid.vocab {
        for &l in &grid.lengths {
            for &count in &grid.counts {
                for seed in 0..grid.seeds {
                    let space = (v as u128).pow(l as u32);
                    if count as u128 > space {
                        summary.skipped += 1;
                        continue;
                    }
                    summary.instances += 1;
                    let tag = format!("|V|={v} L={l} |C|={count} seed={seed}");
                    if let Err(e) = oracle_instance(v, l, count, seed, grid, &mut summary) {
                        summary.failures.push(format!("{tag}: {e}"));
                    }
                }
            }
        }
    }
    summary
}

fn oracle_instance(v: usize, l: usize, count: usize, seed: u64, grid: &OracleGrid, summary: &mut OracleSummary) -> Result<()> {
    let base = DecoderConfig::new(v, l, 0);
    let set = gen_constraints(cell_seed(seed, v, count) ^ l as u64, count, &base)?;
    let src = RandomLogits::new(v, seed);
    let widest = (0..l).map(|t| prefixes_at(t, &set).len()).max().unwrap_or(1);
    for d in 0..l {
        let cfg = DecoderConfig::new(v, l, d);
        let index = TransitionIndex::build(&set, &cfg)?;
        let report = check_static_with(&StaticMasker::new(&index), &set)?;
        check_static_with(&StaticMasker::new(&index).padded(), &set)?;
        summary.states_checked += report.states;
        summary.bits_checked += report.bits;

        let beam = widest.min(set.len());
        let cfg = cfg.with_beam(beam).with_batch(2);
        let got = sidmask::decode(&src, &index, &cfg)?;
        let want = exhaustive_topk(&src, &set, &cfg)?;
        let same = got.tokens == want.tokens
            && got.live == want.live
            && got.scores.iter().zip(&want.scores).all(|(a, b)| (a - b).abs() <= TOPK_SCORE_TOL);
        if !same {
            anyhow::bail!("beam search with M={beam}, d={d} differs from exhaustive ranking");
        }
        summary.topk_instances += 1;
    }
    let trie = build_pointer_trie(&set, &base)?;
    let array = SortedSidArray::new(&set);
    let bitmap = HashBitmap::with_default_sizing(&set)?;
    let k = (v / grid.approx_divisor.max(1)).clamp(1, PPV_TOP_K);
    let lp = |_: usize, p: &[u32], out: &mut [f64]| src.row_logits(0, p, out);
    let b = check_baselines(&trie, &array, &bitmap, &set, k, &lp)?;
    summary.approx_misses += b.approx_misses;
    summary.hash_false_positives += b.hash_false_positives;
    summary.hash_negatives += b.hash_negatives;
    Ok(())
}

/// Absolute score tolerance between beam search and exhaustive ranking.
pub const TOPK_SCORE_TOL: f64 = 1e-9;
