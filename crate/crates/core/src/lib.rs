//! Constrained beam search over fixed-length Semantic IDs.
//!
//! The restricted vocabulary is compiled offline into a [`TransitionIndex`]:
//! bit-packed dense masks for the first `d` decoding levels and a stacked
//! CSR transition matrix (row pointers plus interleaved `(token, next_state)`
//! edges) for the remaining ones. At decode time the [`kernel`] module turns
//! per-beam trie states into token masks with a fixed amount of work per
//! beam, and [`decoder`] runs the beam search around it.
//!
//! [`baselines`] holds the comparison maskers (pointer trie, sorted-array
//! prefix verification, hashed bitmap) and [`oracle`] the brute-force ground
//! truth used by the test suites.

pub mod baselines;
pub mod bits;
pub mod config;
pub mod decoder;
pub mod error;
pub mod index;
pub mod kernel;
pub mod oracle;
pub mod par;
pub mod trie;
pub mod types;
pub mod verify;
pub mod workload;

pub use config::DecoderConfig;
pub use decoder::{
    decode, decode_step, decode_with, reference_unconstrained_decode, DecodeResult, FnLogits,
    LogitSource, NgramLogits, PhaseTimes, RandomLogits, StepMasker,
};
pub use error::{ConfigError, Error, FormatError, Result};
pub use index::{FlattenOptions, Footprint, TransitionIndex};
pub use kernel::{MaskResult, StaticMasker};
pub use trie::PointerTrie;
pub use types::{BeamState, ConstraintSet, LogitBlock, SemanticId};
