//! Evaluation: perplexity under configurable cross-utterance context, and
//! word error rate.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{Model, TokenId};
use crate::session::{bos_state, content_log_probs, SpecialTokens};
use crate::vocab::normalize_text;

/// One evaluation figure, serializable for report files.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EvalReport {
    pub dataset: String,
    pub context_tokens: usize,
    pub metric: String,
    pub value: f64,
    /// Scored LM tokens (perplexity) or hypothesis words (WER).
    pub token_count: usize,
    /// Reference words (WER); zero for perplexity.
    pub word_count: usize,
}

/// Aligned plain-text table, one row per context size.
pub fn format_report_table(reports: &[EvalReport]) -> String {
    let mut rows = reports.to_vec();
    rows.sort_by_key(|r| r.context_tokens);
    let mut out = String::from("context  metric  value      tokens   words\n");
    for r in rows {
        out.push_str(&format!(
            "{:<8} {:<7} {:<10.4} {:<8} {}\n",
            r.context_tokens, r.metric, r.value, r.token_count, r.word_count
        ));
    }
    out
}

#[derive(Debug, Clone, Copy)]
pub struct PplResult {
    pub value: f64,
    /// Number of scored content tokens.
    pub token_count: usize,
}

/// Perplexity of reference token sequences under the model, carrying up to
/// `context_tokens` of history across utterance boundaries.
///
/// Every content token is a target, including utterance-initial tokens
/// (scored with initial-token prediction from the second utterance on); BOS
/// and SEP are never targets, and target distributions are masked to the
/// content vocabulary and renormalized. `context_tokens = 0` evaluates each
/// utterance independently.
pub fn perplexity(
    model: &Model,
    conversations: &[Vec<Vec<TokenId>>],
    context_tokens: usize,
) -> Result<PplResult> {
    if conversations.is_empty() {
        return Err(Error::Input("no conversations to evaluate".into()));
    }
    let content = model.cfg.content_size();
    let toks = SpecialTokens::for_vocab_size(model.cfg.vocab_size);
    let fresh = bos_state(model)?;
    let mut total_lp = 0.0f64;
    let mut count = 0usize;

    for conv in conversations {
        let mut state = fresh.clone();
        for utt in conv {
            for &t in utt {
                if t as usize >= content {
                    return Err(Error::Input(format!(
                        "reference token {t} is not a content token"
                    )));
                }
            }
            if !utt.is_empty() {
                let first = utt[0] as usize;
                total_lp += if state.at_boundary() {
                    state.initial_token_content_log_probs(
                        &model.weights.init_gamma,
                        &model.weights.init_beta,
                        content,
                    )?[first]
                } else {
                    let logits = state
                        .last_logits()
                        .ok_or_else(|| Error::State("state has no logits".into()))?;
                    content_log_probs(logits, content)[first]
                };
                let (logits, next) = state.advance(model, utt)?;
                for (k, &t) in utt.iter().enumerate().skip(1) {
                    total_lp += content_log_probs(logits.row(k - 1), content)[t as usize];
                }
                count += utt.len();
                state = next;
            }
            state = if context_tokens == 0 {
                fresh.clone()
            } else {
                state
                    .end_utterance(model, &toks)?
                    .truncate(context_tokens)?
            };
        }
    }
    if count == 0 {
        return Err(Error::Input("no content tokens to score".into()));
    }
    Ok(PplResult {
        value: (-total_lp / count as f64).exp(),
        token_count: count,
    })
}

#[derive(Debug, Clone, Copy)]
pub struct WerResult {
    pub value: f64,
    /// Substitutions + deletions + insertions, summed over the corpus.
    pub edits: usize,
    pub ref_words: usize,
    pub hyp_words: usize,
}

/// Corpus word error rate: total edit distance over total reference words,
/// after text normalization and whitespace tokenization.
pub fn wer(hyps: &[String], refs: &[String]) -> Result<WerResult> {
    if hyps.len() != refs.len() {
        return Err(Error::Input(format!(
            "hypothesis corpus has {} utterances, reference has {}",
            hyps.len(),
            refs.len()
        )));
    }
    let mut edits = 0usize;
    let mut ref_words = 0usize;
    let mut hyp_words = 0usize;
    for (h, r) in hyps.iter().zip(refs) {
        let h = normalize_text(h);
        let r = normalize_text(r);
        let ht: Vec<&str> = h.split_whitespace().collect();
        let rt: Vec<&str> = r.split_whitespace().collect();
        edits += edit_distance(&rt, &ht);
        ref_words += rt.len();
        hyp_words += ht.len();
    }
    if ref_words == 0 {
        return Err(Error::Input("reference corpus has no words".into()));
    }
    Ok(WerResult {
        value: edits as f64 / ref_words as f64,
        edits,
        ref_words,
        hyp_words,
    })
}

/// Word-level Levenshtein distance, two-row dynamic program.
pub fn edit_distance<T: PartialEq>(a: &[T], b: &[T]) -> usize {
    if a.is_empty() {
        return b.len();
    }
    if b.is_empty() {
        return a.len();
    }
    let mut prev: Vec<usize> = (0..=b.len()).collect();
    let mut curr = vec![0usize; b.len() + 1];
    for (i, av) in a.iter().enumerate() {
        curr[0] = i + 1;
        for (j, bv) in b.iter().enumerate() {
            let sub = prev[j] + usize::from(av != bv);
            curr[j + 1] = sub.min(prev[j + 1] + 1).min(curr[j] + 1);
        }
        std::mem::swap(&mut prev, &mut curr);
    }
    prev[b.len()]
}
