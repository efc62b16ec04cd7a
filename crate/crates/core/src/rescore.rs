//! N-best list generation and second-pass rescoring.
//!
//! The first pass is an acoustic-only wide-beam prefix search (no external
//! n-gram models are involved). The second pass scores each hypothesis with
//! the transformer LM given the conversation context, standardizes those
//! scores over the list, and re-ranks by a weighted sum with a length
//! penalty.

use serde::{Deserialize, Serialize};
use std::sync::Arc;

use crate::decoder::{search, AmPosterior, FusionParams};
use crate::error::{Error, Result};
use crate::model::{Model, TokenId};
use crate::session::LmState;
use crate::tensor::log_softmax;

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct NBestEntry {
    pub tokens: Vec<TokenId>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub text: Option<String>,
    /// Acoustic log path mass from the first pass.
    pub first_pass: f64,
    /// LM log-probability of the token sequence given context.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tlm: Option<f64>,
    #[serde(rename = "final", default, skip_serializing_if = "Option::is_none")]
    pub final_score: Option<f64>,
}

impl NBestEntry {
    pub fn length(&self) -> usize {
        self.tokens.len()
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct NBestList {
    pub utterance_id: String,
    #[serde(rename = "hyps")]
    pub entries: Vec<NBestEntry>,
}

#[derive(Debug, Clone, Copy)]
pub struct RescoreParams {
    pub w_first: f64,
    pub w_tlm: f64,
    pub length_penalty: f64,
    pub n_best_size: usize,
}

impl Default for RescoreParams {
    fn default() -> Self {
        Self {
            w_first: 1.0,
            w_tlm: 1.0,
            length_penalty: 0.0,
            n_best_size: 100,
        }
    }
}

/// Top-`n` distinct collapsed prefixes by acoustic path mass, from a
/// width-`width` beam search with fusion disabled.
pub fn generate_nbest(
    post: &AmPosterior,
    model: &Model,
    width: usize,
    n: usize,
) -> Result<NBestList> {
    if n == 0 {
        return Err(Error::Input("n-best size must be >= 1".into()));
    }
    if width < n {
        return Err(Error::Input(format!(
            "beam width {width} smaller than requested n-best {n}"
        )));
    }
    if post.frames() == 0 {
        return Err(Error::Input(format!(
            "posterior {} has no frames",
            post.utterance_id
        )));
    }
    let expect = model.cfg.content_size() + 1;
    if post.vocab() != expect {
        return Err(Error::Schema(format!(
            "posterior {} has vocabulary {}, model implies {}",
            post.utterance_id,
            post.vocab(),
            expect
        )));
    }
    let ctx = Arc::new(crate::session::bos_state(model)?);
    let out = search(post, model, &FusionParams::am_only(width), ctx, false)?;
    Ok(NBestList {
        utterance_id: post.utterance_id.clone(),
        entries: out
            .hyps
            .into_iter()
            .take(n)
            .map(|h| NBestEntry {
                tokens: h.tokens,
                text: None,
                first_pass: h.am_log_prob,
                tlm: None,
                final_score: None,
            })
            .collect(),
    })
}

/// LM log-probability of `tokens` given `context`: the sum of next-token
/// log-probabilities, using initial-token prediction for the first token
/// when the context ends at an utterance boundary. The context is not
/// consumed.
pub fn sequence_log_prob(model: &Model, context: &LmState, tokens: &[TokenId]) -> Result<f64> {
    if tokens.is_empty() {
        return Ok(0.0);
    }
    for &t in tokens {
        if (t as usize) >= model.cfg.vocab_size {
            return Err(Error::Vocab {
                token: t,
                vocab: model.cfg.vocab_size,
            });
        }
    }
    let first = tokens[0] as usize;
    let mut total = if context.at_boundary() {
        let probs = context
            .initial_token_distribution(&model.weights.init_gamma, &model.weights.init_beta)?;
        probs[first].ln()
    } else {
        let logits = context
            .last_logits()
            .ok_or_else(|| Error::State("context has no logits".into()))?;
        log_softmax(logits)[first]
    };
    if tokens.len() > 1 {
        let (logits, _) = context.advance(model, &tokens[..tokens.len() - 1])?;
        for (k, &tok) in tokens.iter().enumerate().skip(1) {
            total += log_softmax(logits.row(k - 1))[tok as usize];
        }
    }
    Ok(total)
}

/// Fill `tlm` for every entry. Entries are independent; the context is
/// shared and unchanged.
pub fn tlm_score_nbest(
    list: &NBestList,
    model: &Model,
    context: &LmState,
) -> Result<NBestList> {
    let mut out = list.clone();
    for entry in &mut out.entries {
        entry.tlm = Some(sequence_log_prob(model, context, &entry.tokens)?);
    }
    Ok(out)
}

/// Standardize to mean zero and unit population standard deviation; a
/// (near-)constant input collapses to all zeros.
pub fn standardize(scores: &[f64]) -> Vec<f64> {
    if scores.is_empty() {
        return Vec::new();
    }
    let n = scores.len() as f64;
    let mean = scores.iter().sum::<f64>() / n;
    let var = scores.iter().map(|s| (s - mean) * (s - mean)).sum::<f64>() / n;
    let std = var.sqrt();
    if std < 1e-8 {
        return vec![0.0; scores.len()];
    }
    scores.iter().map(|s| (s - mean) / std).collect()
}

/// Re-rank by `w_first * first_pass + w_tlm * standardized(tlm) +
/// length_penalty * length`. Ties keep first-pass order.
pub fn rescore(list: &NBestList, p: &RescoreParams) -> Result<NBestList> {
    let mut out = list.clone();
    let tlm: Vec<f64> = out
        .entries
        .iter()
        .map(|e| {
            e.tlm.ok_or_else(|| {
                Error::State(format!(
                    "entry without a TLM score in list {}",
                    out.utterance_id
                ))
            })
        })
        .collect::<Result<_>>()?;
    let z = standardize(&tlm);
    for (entry, &zs) in out.entries.iter_mut().zip(&z) {
        entry.final_score = Some(
            p.w_first * entry.first_pass + p.w_tlm * zs + p.length_penalty * entry.length() as f64,
        );
    }
    let mut order: Vec<usize> = (0..out.entries.len()).collect();
    order.sort_by(|&a, &b| {
        out.entries[b]
            .final_score
            .unwrap()
            .total_cmp(&out.entries[a].final_score.unwrap())
            .then(a.cmp(&b))
    });
    out.entries = order.into_iter().map(|i| out.entries[i].clone()).collect();
    Ok(out)
}
