use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use sidmask::workload::Mode;
use sidmask::DecoderConfig;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    Static,
    CpuTrie,
    PpvExact,
    PpvApprox,
    HashBitmap,
    Unconstrained,
}

impl Method {
    pub const ALL: [Method; 6] = [
        Method::Static,
        Method::CpuTrie,
        Method::PpvExact,
        Method::PpvApprox,
        Method::HashBitmap,
        Method::Unconstrained,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Method::Static => "static",
            Method::CpuTrie => "cpu_trie",
            Method::PpvExact => "ppv_exact",
            Method::PpvApprox => "ppv_approx",
            Method::HashBitmap => "hash_bitmap",
            Method::Unconstrained => "unconstrained",
        }
    }

    /// Methods whose masks equal the constraint set exactly.
    pub fn is_exact(self) -> bool {
        matches!(self, Method::Static | Method::CpuTrie | Method::PpvExact)
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Method {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Method::ALL
            .into_iter()
            .find(|m| m.name() == s)
            .ok_or_else(|| format!("unknown method {s:?}"))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum WorkloadMode {
    #[default]
    Uniform,
    Clustered,
}

impl From<WorkloadMode> for Mode {
    fn from(m: WorkloadMode) -> Mode {
        match m {
            WorkloadMode::Uniform => Mode::Uniform,
            WorkloadMode::Clustered => Mode::Clustered,
        }
    }
}

impl FromStr for WorkloadMode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "uniform" => Ok(WorkloadMode::Uniform),
            "clustered" => Ok(WorkloadMode::Clustered),
            _ => Err(format!("unknown mode {s:?}, expected uniform or clustered")),
        }
    }
}

/// One benchmark sweep: the cross product of `vocab` and `constraints`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepSpec {
    pub methods: Vec<Method>,
    pub vocab: Vec<usize>,
    pub constraints: Vec<usize>,
    pub sid_length: usize,
    pub dense_depth: usize,
    pub beam: usize,
    pub batch: usize,
    pub trials: usize,
    pub warmup: usize,
    pub seed: u64,
    pub mode: WorkloadMode,
    /// Candidates verified per row by `ppv_approx`.
    pub ppv_k: usize,
    /// Hash bitmap bits per distinct prefix.
    pub bitmap_bits_per_prefix: u64,
    /// Cells whose estimated footprint exceeds this are recorded as OOM.
    pub memory_budget_bytes: Option<u64>,
}

impl Default for SweepSpec {
    fn default() -> Self {
        Self {
            methods: vec![Method::Static, Method::CpuTrie, Method::PpvExact, Method::PpvApprox, Method::HashBitmap],
            vocab: vec![2048],
            constraints: vec![100_000],
            sid_length: 8,
            dense_depth: 2,
            beam: 70,
            batch: 2,
            trials: 100,
            warmup: 3,
            seed: 0,
            mode: WorkloadMode::Uniform,
            ppv_k: sidmask::baselines::PPV_TOP_K,
            bitmap_bits_per_prefix: sidmask::baselines::DEFAULT_BITS_PER_PREFIX,
            memory_budget_bytes: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum SpecError {
    #[error("{0} must not be empty")]
    Empty(&'static str),
    #[error("trials must be at least 1")]
    Trials,
    #[error("|V|={vocab}: {source}")]
    Config { vocab: usize, source: sidmask::ConfigError },
    #[error("{count} constraints exceed the {vocab}^{length} id space")]
    Space { count: usize, vocab: usize, length: usize },
}

impl SweepSpec {
    pub fn config(&self, vocab: usize) -> DecoderConfig {
        DecoderConfig::new(vocab, self.sid_length, self.dense_depth)
            .with_beam(self.beam)
            .with_batch(self.batch)
    }

    pub fn cells(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        self.vocab.iter().flat_map(|&v| self.constraints.iter().map(move |&c| (v, c)))
    }

    pub fn validate(&self) -> Result<(), SpecError> {
        if self.methods.is_empty() {
            return Err(SpecError::Empty("methods"));
        }
        if self.vocab.is_empty() {
            return Err(SpecError::Empty("vocab"));
        }
        if self.constraints.is_empty() {
            return Err(SpecError::Empty("constraints"));
        }
        if self.trials == 0 {
            return Err(SpecError::Trials);
        }
        for (v, c) in self.cells() {
            self.config(v).validate().map_err(|source| SpecError::Config { vocab: v, source })?;
            let space = (v as u128).checked_pow(self.sid_length as u32).unwrap_or(u128::MAX);
            if c == 0 || c as u128 > space {
                return Err(SpecError::Space { count: c, vocab: v, length: self.sid_length });
            }
        }
        Ok(())
    }
}
