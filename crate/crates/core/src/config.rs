use crate::error::ConfigError;

/// Log-probability sentinel for masked tokens.
pub const NEG_INF: f64 = -1.0e10;

/// Shape and sentinel parameters shared by index construction and decoding.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DecoderConfig {
    /// Token cardinality |V| at every level.
    pub vocab_size: usize,
    /// Tokens per Semantic ID (L).
    pub sid_length: usize,
    /// Levels served from dense masks (d).
    pub dense_depth: usize,
    pub beam_width: usize,
    pub batch_size: usize,
    pub neg_inf: f64,
}

impl DecoderConfig {
    pub fn new(vocab_size: usize, sid_length: usize, dense_depth: usize) -> Self {
        Self {
            vocab_size,
            sid_length,
            dense_depth,
            beam_width: 1,
            batch_size: 1,
            neg_inf: NEG_INF,
        }
    }

    pub fn with_beam(mut self, beam_width: usize) -> Self {
        self.beam_width = beam_width;
        self
    }

    pub fn with_batch(mut self, batch_size: usize) -> Self {
        self.batch_size = batch_size;
        self
    }

    /// Checks every invariant, reporting the first one that fails.
    pub fn validate(&self) -> Result<(), ConfigError> {
        if self.vocab_size < 2 || self.vocab_size >= u32::MAX as usize {
            return Err(ConfigError::VocabSize(self.vocab_size));
        }
        if self.sid_length < 1 || self.sid_length > u16::MAX as usize {
            return Err(ConfigError::SidLength(self.sid_length));
        }
        if self.dense_depth >= self.sid_length {
            return Err(ConfigError::DenseDepth {
                dense_depth: self.dense_depth,
                sid_length: self.sid_length,
            });
        }
        if self.beam_width < 1 {
            return Err(ConfigError::BeamWidth);
        }
        if self.batch_size < 1 {
            return Err(ConfigError::BatchSize);
        }
        if !self.neg_inf.is_finite() || self.neg_inf > NEG_INF {
            return Err(ConfigError::NegInf(self.neg_inf));
        }
        Ok(())
    }

    /// Flattened beam rows per decode step.
    pub fn rows(&self) -> usize {
        self.batch_size * self.beam_width
    }
}

/// Free-function form of [`DecoderConfig::validate`].
pub fn validate_config(config: &DecoderConfig) -> Result<(), ConfigError> {
    config.validate()
}
