//! Decoder-only transformer language model: configuration, weight container
//! and the forward pass.

mod forward;
mod weights;

pub use forward::{attention_layer, bias_table, layer_norm, swiglu_ffn, LayerKv};
pub use weights::{
    generate_weights, schema as weights_schema, LayerWeights, NormParams, PositionBias,
    WeightStore,
};

use crate::error::{Error, Result};
use crate::tensor::Matrix;
use serde::{Deserialize, Serialize};

/// Token ids are dense indices into the model vocabulary.
pub type TokenId = u32;

/// Architecture hyperparameters.
///
/// The vocabulary layout is fixed by convention: content tokens occupy ids
/// `0..vocab_size-2`, the beginning-of-history token is `vocab_size-2` and
/// the utterance separator is `vocab_size-1`. On the acoustic side the blank
/// symbol reuses index `vocab_size-2` in its own (content + blank) space.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub n_layers: usize,
    pub d_model: usize,
    pub n_query_heads: usize,
    pub ffn_expansion: usize,
    pub vocab_size: usize,
    pub pos_bias_hidden: usize,
    pub eps_norm: f32,
}

impl ModelConfig {
    /// The full-size conversational configuration (11M-parameter class),
    /// used for benchmarks.
    pub fn conversational() -> Self {
        Self {
            n_layers: 12,
            d_model: 256,
            n_query_heads: 8,
            ffn_expansion: 4,
            vocab_size: 130, // 128 content pieces + BOS + SEP
            pos_bias_hidden: 32,
            eps_norm: 1e-6,
        }
    }

    /// Small configuration for tests and fixtures.
    pub fn toy(vocab_size: usize) -> Self {
        Self {
            n_layers: 2,
            d_model: 32,
            n_query_heads: 4,
            ffn_expansion: 4,
            vocab_size,
            pos_bias_hidden: 16,
            eps_norm: 1e-6,
        }
    }

    pub fn head_dim(&self) -> usize {
        self.d_model / self.n_query_heads
    }

    /// Number of content (non-special) tokens.
    pub fn content_size(&self) -> usize {
        self.vocab_size - 2
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_layers == 0
            || self.d_model == 0
            || self.n_query_heads == 0
            || self.ffn_expansion == 0
            || self.pos_bias_hidden == 0
        {
            return Err(Error::Schema("all model dimensions must be >= 1".into()));
        }
        if !self.d_model.is_multiple_of(self.n_query_heads) {
            return Err(Error::Schema(format!(
                "d_model {} not divisible by n_query_heads {}",
                self.d_model, self.n_query_heads
            )));
        }
        if self.vocab_size < 4 {
            return Err(Error::Schema(
                "vocab_size must be >= 4 (BOS, SEP and at least two content tokens)".into(),
            ));
        }
        if !self.eps_norm.is_finite() || self.eps_norm <= 0.0 {
            return Err(Error::Schema("eps_norm must be positive".into()));
        }
        Ok(())
    }
}

/// A configuration paired with a validated weight store.
#[derive(Debug, Clone)]
pub struct Model {
    pub cfg: ModelConfig,
    pub weights: WeightStore,
}

impl Model {
    pub fn new(cfg: ModelConfig, weights: WeightStore) -> Result<Self> {
        cfg.validate()?;
        weights.validate(&cfg)?;
        Ok(Self { cfg, weights })
    }

    /// Deterministic pseudo-random model for tests, fixtures and benchmarks.
    pub fn generate(seed: u64, cfg: ModelConfig) -> Result<Self> {
        cfg.validate()?;
        let weights = generate_weights(seed, &cfg);
        Ok(Self { cfg, weights })
    }

    /// Full-sequence forward pass. Row `t` of the result holds the
    /// next-token logits after consuming `tokens[0..=t]`; a causal mask
    /// keeps later tokens from influencing earlier rows.
    pub fn forward_full(&self, tokens: &[TokenId]) -> Result<Matrix> {
        forward::forward(self, tokens, None).map(|(logits, _)| logits)
    }

    /// Forward over `tokens` continuing from per-layer cached keys/values.
    /// Returns logits for the new rows and the key/value rows to append.
    pub(crate) fn forward_incremental(
        &self,
        tokens: &[TokenId],
        cache: &[LayerKv],
    ) -> Result<(Matrix, Vec<LayerKv>)> {
        forward::forward(self, tokens, Some(cache))
    }
}
