//! Cross-utterance language-model state: per-hypothesis KV caches, utterance
//! boundary handling and initial-token prediction.
//!
//! States have value semantics. Every operation returns a new state, so beam
//! hypotheses can branch from a shared parent without interfering; caching is
//! exact, not an approximation, because earlier positions are never revisited
//! by later tokens.

use crate::error::{Error, Result};
use crate::model::{LayerKv, Model, ModelConfig, TokenId};
use crate::tensor::Matrix;

/// BOS and SEP ids under the fixed vocabulary convention (the two highest
/// ids, after the content tokens).
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SpecialTokens {
    pub bos: TokenId,
    pub sep: TokenId,
}

impl SpecialTokens {
    pub fn for_vocab_size(vocab_size: usize) -> Self {
        debug_assert!(vocab_size >= 4);
        Self {
            bos: (vocab_size - 2) as TokenId,
            sep: (vocab_size - 1) as TokenId,
        }
    }
}

/// Per-hypothesis cached model state.
#[derive(Debug, Clone)]
pub struct LmState {
    layers: Vec<LayerKv>,
    tokens: Vec<TokenId>,
    bos_present: bool,
    /// True immediately after an utterance separator; selects initial-token
    /// prediction for the next content token. Cleared by `advance`,
    /// preserved by `truncate`.
    boundary: bool,
    last_logits: Option<Vec<f32>>,
}

impl LmState {
    pub fn empty(cfg: &ModelConfig) -> Self {
        Self {
            layers: (0..cfg.n_layers)
                .map(|_| LayerKv::empty(cfg.head_dim()))
                .collect(),
            tokens: Vec::new(),
            bos_present: false,
            boundary: false,
            last_logits: None,
        }
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn tokens(&self) -> &[TokenId] {
        &self.tokens
    }

    pub fn bos_present(&self) -> bool {
        self.bos_present
    }

    pub fn at_boundary(&self) -> bool {
        self.boundary
    }

    pub fn last_logits(&self) -> Option<&[f32]> {
        self.last_logits.as_deref()
    }

    /// Cache cost per token per layer, in stored floats. With a single
    /// shared key/value head this is `2 * head_dim`.
    pub fn cache_floats_per_token_per_layer(&self) -> usize {
        self.layers
            .first()
            .map(|l| l.keys.cols() + l.values.cols())
            .unwrap_or(0)
    }

    /// Run the model over `tokens` continuing from this state. Returns the
    /// logits for the new positions (row `i` after consuming `tokens[0..=i]`)
    /// and the extended state; `self` is untouched.
    pub fn advance(&self, model: &Model, tokens: &[TokenId]) -> Result<(Matrix, LmState)> {
        if tokens.is_empty() {
            return Err(Error::Input("advance with no tokens".into()));
        }
        let (logits, new_kv) = model.forward_incremental(tokens, &self.layers)?;
        let mut layers = self.layers.clone();
        for (layer, kv) in layers.iter_mut().zip(&new_kv) {
            layer.keys.append_rows(&kv.keys);
            layer.values.append_rows(&kv.values);
        }
        let mut all_tokens = self.tokens.clone();
        all_tokens.extend_from_slice(tokens);
        let bos = SpecialTokens::for_vocab_size(model.cfg.vocab_size).bos;
        let bos_present = self.bos_present || (self.tokens.is_empty() && tokens[0] == bos);
        let last = logits.row(logits.rows() - 1).to_vec();
        Ok((
            logits,
            LmState {
                layers,
                tokens: all_tokens,
                bos_present,
                boundary: false,
                last_logits: Some(last),
            },
        ))
    }

    /// Keep the first cached row (the BOS anchor) plus the most recent
    /// `max_tokens - 1` rows. A no-op when the cache already fits. Position
    /// bookkeeping is re-based: subsequent tokens see distances within the
    /// compacted cache.
    pub fn truncate(&self, max_tokens: usize) -> Result<LmState> {
        if max_tokens == 0 {
            return Err(Error::Input("truncate to zero tokens".into()));
        }
        if self.tokens.len() <= max_tokens {
            return Ok(self.clone());
        }
        let start = self.tokens.len() - (max_tokens - 1);
        let idx: Vec<usize> = std::iter::once(0).chain(start..self.tokens.len()).collect();
        let layers = self
            .layers
            .iter()
            .map(|l| LayerKv {
                keys: l.keys.select_rows(&idx),
                values: l.values.select_rows(&idx),
            })
            .collect();
        let tokens = idx.iter().map(|&i| self.tokens[i]).collect();
        Ok(LmState {
            layers,
            tokens,
            bos_present: self.bos_present,
            boundary: self.boundary,
            last_logits: self.last_logits.clone(),
        })
    }

    /// Append the utterance separator. The logits observed at the separator
    /// position become `last_logits`, feeding initial-token prediction for
    /// the next utterance; the separator itself is never a scoring target.
    pub fn end_utterance(&self, model: &Model, toks: &SpecialTokens) -> Result<LmState> {
        if self.is_empty() {
            return Err(Error::State("end_utterance on an empty state".into()));
        }
        let (_, mut state) = self.advance(model, &[toks.sep])?;
        state.boundary = true;
        Ok(state)
    }

    /// Initial-token prediction: softmax of the most recent logits modulated
    /// elementwise by `gamma` and shifted by `beta`. Probabilities over the
    /// full vocabulary.
    pub fn initial_token_distribution(&self, gamma: &[f32], beta: &[f32]) -> Result<Vec<f64>> {
        let logits = self
            .last_logits
            .as_deref()
            .ok_or_else(|| Error::State("no logits available for initial-token prediction".into()))?;
        if gamma.len() != logits.len() || beta.len() != logits.len() {
            return Err(Error::Shape(format!(
                "gamma/beta length {}/{} vs vocab {}",
                gamma.len(),
                beta.len(),
                logits.len()
            )));
        }
        let modulated = modulated_logits(logits, gamma, beta);
        let max = modulated.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let mut probs: Vec<f64> = modulated.iter().map(|&v| (v - max).exp()).collect();
        let sum: f64 = probs.iter().sum();
        for p in &mut probs {
            *p /= sum;
        }
        Ok(probs)
    }

    /// Log-probabilities over content tokens only (BOS/SEP masked out and
    /// the rest renormalized), using initial-token prediction.
    pub fn initial_token_content_log_probs(
        &self,
        gamma: &[f32],
        beta: &[f32],
        content_size: usize,
    ) -> Result<Vec<f64>> {
        let logits = self
            .last_logits
            .as_deref()
            .ok_or_else(|| Error::State("no logits available for initial-token prediction".into()))?;
        if gamma.len() != logits.len() || beta.len() != logits.len() {
            return Err(Error::Shape("gamma/beta length mismatch".into()));
        }
        let modulated = modulated_logits(logits, gamma, beta);
        Ok(restricted_log_softmax(&modulated, content_size))
    }
}

fn modulated_logits(logits: &[f32], gamma: &[f32], beta: &[f32]) -> Vec<f64> {
    logits
        .iter()
        .zip(gamma.iter().zip(beta))
        .map(|(&l, (&g, &b))| l as f64 * g as f64 + b as f64)
        .collect()
}

fn restricted_log_softmax(logits: &[f64], content_size: usize) -> Vec<f64> {
    let slice = &logits[..content_size];
    let max = slice.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let lse = max + slice.iter().map(|&v| (v - max).exp()).sum::<f64>().ln();
    slice.iter().map(|&v| v - lse).collect()
}

/// Log-probabilities over content tokens from raw next-token logits,
/// masking the special ids and renormalizing.
pub fn content_log_probs(logits: &[f32], content_size: usize) -> Vec<f64> {
    let as_f64: Vec<f64> = logits[..content_size].iter().map(|&v| v as f64).collect();
    restricted_log_softmax(&as_f64, content_size)
}

/// Fresh history: an empty state advanced with BOS.
pub fn bos_state(model: &Model) -> Result<LmState> {
    let toks = SpecialTokens::for_vocab_size(model.cfg.vocab_size);
    let (_, state) = LmState::empty(&model.cfg).advance(model, &[toks.bos])?;
    Ok(state)
}
