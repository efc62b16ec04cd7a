//! CTC prefix beam search with transformer-LM shallow fusion.
//!
//! Hypotheses are collapsed prefixes with separate blank/non-blank path
//! masses merged in log space. Each hypothesis carries an LM state handle
//! and a cached look-ahead distribution; look-aheads are materialized
//! lazily, after pruning, so every new content token costs exactly one
//! incremental LM advance. Blank and frame-repeat extensions carry no LM
//! cost. When the incoming context ends at an utterance boundary, the first
//! content token is scored with the initial-token prediction head instead
//! of the ordinary next-token distribution.

use std::cmp::Ordering;
use std::collections::HashMap;
use std::sync::Arc;

use crate::error::{Error, Result};
use crate::model::{Model, TokenId};
use crate::session::{bos_state, content_log_probs, LmState, SpecialTokens};
use crate::tensor::{logaddexp, Matrix};

/// Log-softmax acoustic posteriors for one utterance. The vocabulary is the
/// content inventory plus one trailing blank symbol.
#[derive(Debug, Clone)]
pub struct AmPosterior {
    pub utterance_id: String,
    pub log_probs: Matrix,
    pub blank: TokenId,
}

impl AmPosterior {
    pub fn new(utterance_id: String, log_probs: Matrix, blank: TokenId) -> Result<Self> {
        let p = Self {
            utterance_id,
            log_probs,
            blank,
        };
        p.validate(1e-4)?;
        Ok(p)
    }

    pub fn frames(&self) -> usize {
        self.log_probs.rows()
    }

    pub fn vocab(&self) -> usize {
        self.log_probs.cols()
    }

    /// Every row must exponentiate-sum to one within `tol`.
    pub fn validate(&self, tol: f64) -> Result<()> {
        if self.blank as usize != self.vocab() - 1 {
            return Err(Error::Schema(format!(
                "blank id {} must be the last index of a {}-symbol vocabulary",
                self.blank,
                self.vocab()
            )));
        }
        for i in 0..self.frames() {
            let sum: f64 = self.log_probs.row(i).iter().map(|&v| (v as f64).exp()).sum();
            if (sum - 1.0).abs() > tol {
                return Err(Error::Format(format!(
                    "posterior {} frame {i}: probabilities sum to {sum}",
                    self.utterance_id
                )));
            }
        }
        Ok(())
    }
}

/// Shallow-fusion parameters.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FusionParams {
    /// LM weight.
    pub alpha: f64,
    /// Insertion bonus added per fused content token.
    pub beta_bonus: f64,
    /// Log-domain candidate threshold below the per-frame argmax (negative).
    pub cutoff: f64,
    pub beam_width: usize,
}

impl Default for FusionParams {
    fn default() -> Self {
        Self {
            alpha: 0.5,
            beta_bonus: 0.3,
            cutoff: -6.0,
            beam_width: 25,
        }
    }
}

impl FusionParams {
    /// Acoustic-only search (no LM, no bonus, no candidate pruning).
    pub fn am_only(beam_width: usize) -> Self {
        Self {
            alpha: 0.0,
            beta_bonus: 0.0,
            cutoff: -1e9,
            beam_width,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.beam_width == 0 {
            return Err(Error::Input("beam width must be >= 1".into()));
        }
        if !self.cutoff.is_finite() || self.cutoff >= 0.0 {
            return Err(Error::Input("cutoff must be a finite negative value".into()));
        }
        Ok(())
    }
}

/// Per-frame candidate set: indices within `cutoff` of the row argmax.
/// Always contains the argmax.
pub fn frame_candidates(row: &[f32], cutoff: f64) -> Vec<usize> {
    let max = row.iter().copied().fold(f32::NEG_INFINITY, f32::max) as f64;
    row.iter()
        .enumerate()
        .filter(|(_, &v)| v as f64 >= max + cutoff)
        .map(|(i, _)| i)
        .collect()
}

/// Per-token fused LM score: zero for the blank symbol and frame-level
/// repeats, otherwise `alpha * log P_LM + beta`.
pub fn lm_token_score(
    token: TokenId,
    prev_frame_token: Option<TokenId>,
    blank: TokenId,
    lm_logprob: f64,
    p: &FusionParams,
) -> f64 {
    if token == blank || prev_frame_token == Some(token) {
        0.0
    } else {
        p.alpha * lm_logprob + p.beta_bonus
    }
}

/// A ranked decode result.
#[derive(Debug, Clone)]
pub struct DecodedHyp {
    pub tokens: Vec<TokenId>,
    /// Log path mass summed over all alignments collapsing to `tokens`.
    pub am_log_prob: f64,
    /// Accumulated fused LM contributions.
    pub lm_score: f64,
    pub combined: f64,
    /// LM state after context plus `tokens`.
    pub state: Arc<LmState>,
}

#[derive(Debug, Clone, Copy, Default)]
pub struct DecodeStats {
    /// Incremental LM advances performed during the search.
    pub lm_advances: usize,
}

#[derive(Debug, Clone)]
pub struct DecodeOutput {
    pub hyps: Vec<DecodedHyp>,
    pub stats: DecodeStats,
}

#[derive(Clone)]
enum LmSlot {
    /// Acoustic-only search: no LM state is carried.
    Disabled,
    Ready {
        state: Arc<LmState>,
        lookahead: Arc<Vec<f64>>,
    },
    Pending {
        parent: Arc<LmState>,
        token: TokenId,
    },
}

#[derive(Clone)]
struct SearchHyp {
    prefix: Vec<TokenId>,
    pb: f64,
    pnb: f64,
    lm_score: f64,
    slot: LmSlot,
}

impl SearchHyp {
    fn combined(&self) -> f64 {
        logaddexp(self.pb, self.pnb) + self.lm_score
    }
}

/// Total order used for pruning: combined score descending, then longer
/// prefixes first, then lexicographic token ids.
fn beam_order(a: &SearchHyp, b: &SearchHyp) -> Ordering {
    b.combined()
        .total_cmp(&a.combined())
        .then_with(|| b.prefix.len().cmp(&a.prefix.len()))
        .then_with(|| a.prefix.cmp(&b.prefix))
}

struct NextEntry {
    pb: f64,
    pnb: f64,
    lm_score: Option<f64>,
    slot: Option<LmSlot>,
}

impl NextEntry {
    fn new() -> Self {
        Self {
            pb: f64::NEG_INFINITY,
            pnb: f64::NEG_INFINITY,
            lm_score: None,
            slot: None,
        }
    }

    /// Contribution that keeps the contributing hypothesis' prefix: inherit
    /// its LM bookkeeping verbatim.
    fn note_stay(&mut self, hyp: &SearchHyp) {
        debug_assert!(
            self.lm_score.is_none() || (self.lm_score.unwrap() - hyp.lm_score).abs() < 1e-9
        );
        self.lm_score = Some(hyp.lm_score);
        // A stay contribution always carries a materialized slot; prefer it
        // over a pending extension from a shorter parent.
        self.slot = Some(hyp.slot.clone());
    }

    /// Contribution that extends `hyp` with `token`.
    fn note_extend(&mut self, hyp: &SearchHyp, token: TokenId, cost: f64) {
        let score = hyp.lm_score + cost;
        debug_assert!(self.lm_score.is_none() || (self.lm_score.unwrap() - score).abs() < 1e-9);
        if self.lm_score.is_none() {
            self.lm_score = Some(score);
        }
        if self.slot.is_none() {
            self.slot = Some(match &hyp.slot {
                LmSlot::Disabled => LmSlot::Disabled,
                LmSlot::Ready { state, .. } => LmSlot::Pending {
                    parent: Arc::clone(state),
                    token,
                },
                LmSlot::Pending { .. } => unreachable!("beam entries are materialized"),
            });
        }
    }
}

/// Content-token look-ahead distribution for a context state: the
/// initial-token prediction head at utterance boundaries, the ordinary
/// next-token distribution otherwise. Masked to content ids and
/// renormalized.
fn context_lookahead(model: &Model, state: &LmState) -> Result<Vec<f64>> {
    let content = model.cfg.content_size();
    if state.at_boundary() {
        state.initial_token_content_log_probs(
            &model.weights.init_gamma,
            &model.weights.init_beta,
            content,
        )
    } else {
        let logits = state
            .last_logits()
            .ok_or_else(|| Error::State("context state has no logits".into()))?;
        Ok(content_log_probs(logits, content))
    }
}

fn check_posterior_schema(post: &AmPosterior, model: &Model) -> Result<()> {
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
    Ok(())
}

/// Prefix beam search over one utterance. `context` may be BOS-only or carry
/// truncated conversation history; an empty state is seeded with BOS.
pub fn decode_utterance(
    post: &AmPosterior,
    model: &Model,
    p: &FusionParams,
    context: &LmState,
) -> Result<DecodeOutput> {
    p.validate()?;
    check_posterior_schema(post, model)?;
    let ctx = if context.is_empty() {
        Arc::new(bos_state(model)?)
    } else {
        Arc::new(context.clone())
    };
    search(post, model, p, ctx, true)
}

pub(crate) fn search(
    post: &AmPosterior,
    model: &Model,
    p: &FusionParams,
    ctx: Arc<LmState>,
    want_states: bool,
) -> Result<DecodeOutput> {
    let blank = post.blank as usize;
    let fused = p.alpha != 0.0;
    let mut stats = DecodeStats::default();

    let root_slot = if fused {
        LmSlot::Ready {
            lookahead: Arc::new(context_lookahead(model, &ctx)?),
            state: Arc::clone(&ctx),
        }
    } else {
        LmSlot::Disabled
    };
    let mut beam = vec![SearchHyp {
        prefix: Vec::new(),
        pb: 0.0,
        pnb: f64::NEG_INFINITY,
        lm_score: 0.0,
        slot: root_slot,
    }];

    for t in 0..post.frames() {
        let row: Vec<f64> = post.log_probs.row(t).iter().map(|&v| v as f64).collect();
        let candidates = frame_candidates(post.log_probs.row(t), p.cutoff);
        let mut next: HashMap<Vec<TokenId>, NextEntry> = HashMap::new();

        for hyp in &beam {
            let total = logaddexp(hyp.pb, hyp.pnb);
            let lookahead = match &hyp.slot {
                LmSlot::Ready { lookahead, .. } => Some(lookahead.as_slice()),
                _ => None,
            };
            let last = hyp.prefix.last().copied();
            for &c in &candidates {
                if c == blank {
                    let e = next.entry(hyp.prefix.clone()).or_insert_with(NextEntry::new);
                    e.pb = logaddexp(e.pb, total + row[c]);
                    e.note_stay(hyp);
                    continue;
                }
                let token = c as TokenId;
                if last == Some(token) {
                    // Frame-level repeat keeps the prefix; no LM cost.
                    let e = next.entry(hyp.prefix.clone()).or_insert_with(NextEntry::new);
                    e.pnb = logaddexp(e.pnb, hyp.pnb + row[c]);
                    e.note_stay(hyp);
                    // A blank-separated path starts a genuine new occurrence.
                    if hyp.pb > f64::NEG_INFINITY {
                        let mut prefix = hyp.prefix.clone();
                        prefix.push(token);
                        let cost = lm_token_score(
                            token,
                            None,
                            post.blank,
                            lookahead.map_or(0.0, |l| l[c]),
                            p,
                        );
                        let e = next.entry(prefix).or_insert_with(NextEntry::new);
                        e.pnb = logaddexp(e.pnb, hyp.pb + row[c]);
                        e.note_extend(hyp, token, cost);
                    }
                } else {
                    let mut prefix = hyp.prefix.clone();
                    prefix.push(token);
                    let cost = lm_token_score(
                        token,
                        None,
                        post.blank,
                        lookahead.map_or(0.0, |l| l[c]),
                        p,
                    );
                    let e = next.entry(prefix).or_insert_with(NextEntry::new);
                    e.pnb = logaddexp(e.pnb, total + row[c]);
                    e.note_extend(hyp, token, cost);
                }
            }
        }

        let mut merged: Vec<SearchHyp> = next
            .into_iter()
            .map(|(prefix, e)| SearchHyp {
                prefix,
                pb: e.pb,
                pnb: e.pnb,
                lm_score: e.lm_score.expect("every entry has a contributor"),
                slot: e.slot.expect("every entry has a contributor"),
            })
            .collect();
        merged.sort_by(beam_order);
        merged.truncate(p.beam_width);

        // Materialize pending LM advances for the survivors; pruned
        // extensions never touch the LM.
        for hyp in &mut merged {
            if let LmSlot::Pending { parent, token } = &hyp.slot {
                let (_, state) = parent.advance(model, &[*token])?;
                stats.lm_advances += 1;
                let lookahead = Arc::new(content_log_probs(
                    state.last_logits().expect("advance sets logits"),
                    model.cfg.content_size(),
                ));
                hyp.slot = LmSlot::Ready {
                    state: Arc::new(state),
                    lookahead,
                };
            }
        }
        beam = merged;
    }

    beam.sort_by(beam_order);
    let mut hyps = Vec::with_capacity(beam.len());
    for hyp in beam {
        let state = match &hyp.slot {
            LmSlot::Ready { state, .. } => Arc::clone(state),
            LmSlot::Disabled if want_states => {
                if hyp.prefix.is_empty() {
                    Arc::clone(&ctx)
                } else {
                    let (_, s) = ctx.advance(model, &hyp.prefix)?;
                    stats.lm_advances += 1;
                    Arc::new(s)
                }
            }
            LmSlot::Disabled => Arc::clone(&ctx),
            LmSlot::Pending { .. } => unreachable!("survivors are materialized"),
        };
        hyps.push(DecodedHyp {
            am_log_prob: logaddexp(hyp.pb, hyp.pnb),
            lm_score: hyp.lm_score,
            combined: hyp.combined(),
            tokens: hyp.prefix,
            state,
        });
    }
    Ok(DecodeOutput { hyps, stats })
}

/// Source of the history carried across utterance boundaries.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum HistoryMode {
    /// Top decoded beam.
    Decoded,
    /// Reference transcripts (GTH evaluation).
    GroundTruth,
}

/// One utterance of a conversation, ready to decode.
#[derive(Debug, Clone)]
pub struct UtteranceInput {
    pub posterior: AmPosterior,
    pub start_s: f64,
    pub end_s: f64,
    /// Reference tokens; required in ground-truth history mode.
    pub reference: Option<Vec<TokenId>>,
}

#[derive(Debug, Clone)]
pub struct ConversationParams {
    pub fusion: FusionParams,
    /// History budget carried across boundaries. Zero decodes every
    /// utterance independently.
    pub max_context_tokens: usize,
    pub history: HistoryMode,
    /// When set, context is dropped across silences longer than this.
    pub max_gap_seconds: Option<f64>,
}

#[derive(Debug, Clone)]
pub struct UtteranceResult {
    pub utterance_id: String,
    pub tokens: Vec<TokenId>,
    pub am_log_prob: f64,
    pub lm_score: f64,
    pub combined: f64,
    pub stats: DecodeStats,
}

/// Decode a conversation in order, carrying the top beam's LM state (or a
/// state rebuilt from references) across utterance boundaries: separator
/// appended, then truncated to the context budget.
pub fn decode_conversation(
    model: &Model,
    utts: &[UtteranceInput],
    params: &ConversationParams,
) -> Result<Vec<UtteranceResult>> {
    params.fusion.validate()?;
    let toks = SpecialTokens::for_vocab_size(model.cfg.vocab_size);
    let mut prev: Option<&UtteranceInput> = None;
    for u in utts {
        if let Some(p) = prev {
            if u.start_s < p.start_s {
                return Err(Error::Input(format!(
                    "utterance {} out of order",
                    u.posterior.utterance_id
                )));
            }
        }
        prev = Some(u);
    }

    let fresh = bos_state(model)?;
    let mut state = fresh.clone();
    let mut results = Vec::with_capacity(utts.len());
    let mut prev_end: Option<f64> = None;

    for utt in utts {
        if let (Some(gap), Some(end)) = (params.max_gap_seconds, prev_end) {
            if utt.start_s - end > gap {
                state = fresh.clone();
            }
        }
        let out = decode_utterance(&utt.posterior, model, &params.fusion, &state)?;
        let top = out
            .hyps
            .first()
            .ok_or_else(|| Error::Search("empty beam".into()))?;
        results.push(UtteranceResult {
            utterance_id: utt.posterior.utterance_id.clone(),
            tokens: top.tokens.clone(),
            am_log_prob: top.am_log_prob,
            lm_score: top.lm_score,
            combined: top.combined,
            stats: out.stats,
        });

        if params.max_context_tokens == 0 {
            state = fresh.clone();
        } else {
            let carried = match params.history {
                HistoryMode::Decoded => (*top.state).clone(),
                HistoryMode::GroundTruth => {
                    let reference = utt.reference.as_ref().ok_or_else(|| {
                        Error::Input(format!(
                            "utterance {} has no reference for ground-truth history",
                            utt.posterior.utterance_id
                        ))
                    })?;
                    if reference.is_empty() {
                        state.clone()
                    } else {
                        let (_, s) = state.advance(model, reference)?;
                        s
                    }
                }
            };
            state = carried
                .end_utterance(model, &toks)?
                .truncate(params.max_context_tokens)?;
        }
        prev_end = Some(utt.end_s);
    }
    Ok(results)
}

/// Greedy argmax-collapse decoding; the fusion-disabled, width-1 baseline.
pub fn greedy_decode(post: &AmPosterior) -> Vec<TokenId> {
    let blank = post.blank;
    let mut out = Vec::new();
    let mut prev: Option<TokenId> = None;
    for t in 0..post.frames() {
        let row = post.log_probs.row(t);
        let mut best = 0usize;
        for (i, &v) in row.iter().enumerate() {
            if v > row[best] {
                best = i;
            }
        }
        let sym = best as TokenId;
        if Some(sym) != prev && sym != blank {
            out.push(sym);
        }
        prev = Some(sym);
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::ModelConfig;
    use crate::rng::SplitMix64;

    fn toy_model() -> Model {
        Model::generate(0, ModelConfig::toy(16)).unwrap()
    }

    /// Random log-softmax posterior rows at a given peakedness.
    pub(crate) fn random_posterior(
        rng: &mut SplitMix64,
        frames: usize,
        vocab: usize,
        peak: f64,
    ) -> AmPosterior {
        let mut m = Matrix::zeros(frames, vocab);
        for t in 0..frames {
            let hot = rng.below(vocab);
            let mut probs: Vec<f64> = (0..vocab).map(|_| rng.next_f64() + 1e-3).collect();
            probs[hot] += peak * probs.iter().sum::<f64>();
            let z: f64 = probs.iter().sum();
            for (j, p) in probs.iter().enumerate() {
                m.set(t, j, ((p / z).ln()) as f32);
            }
        }
        AmPosterior::new("test".into(), m, (vocab - 1) as TokenId).unwrap()
    }

    #[test]
    fn frame_candidates_unbounded_keeps_everything() {
        let row = [-0.5f32, -2.0, -9.0];
        assert_eq!(frame_candidates(&row, -1e9), vec![0, 1, 2]);
    }

    #[test]
    fn frame_candidates_tight_cutoff_keeps_argmax() {
        let row = [-0.5f32, -2.0, -9.0];
        assert_eq!(frame_candidates(&row, -1e-9), vec![0]);
    }

    #[test]
    fn frame_candidates_hand_example() {
        let row = [-0.1f32, -3.0, -5.0];
        assert_eq!(frame_candidates(&row, -4.0), vec![0, 1]);
    }

    #[test]
    fn lm_token_score_cases() {
        let p = FusionParams {
            alpha: 0.5,
            beta_bonus: 0.3,
            cutoff: -4.0,
            beam_width: 4,
        };
        let blank = 14;
        assert_eq!(lm_token_score(blank, None, blank, -2.0, &p), 0.0);
        assert_eq!(lm_token_score(3, Some(3), blank, -2.0, &p), 0.0);
        let v = lm_token_score(3, None, blank, -2.0, &p);
        assert!((v - (-0.7)).abs() < 1e-12);
        assert!((lm_token_score(3, Some(4), blank, -2.0, &p) - (-0.7)).abs() < 1e-12);
    }

    #[test]
    fn fusion_disabled_beam_one_is_greedy_on_peaked_rows() {
        let model = toy_model();
        let mut rng = SplitMix64::new(11);
        for _ in 0..20 {
            let post = random_posterior(&mut rng, 12, 15, 1.5);
            let p = FusionParams {
                alpha: 0.0,
                beta_bonus: 0.0,
                cutoff: -1e9,
                beam_width: 1,
            };
            let ctx = bos_state(&model).unwrap();
            let out = decode_utterance(&post, &model, &p, &ctx).unwrap();
            assert_eq!(out.hyps[0].tokens, greedy_decode(&post));
        }
    }

    #[test]
    fn all_blank_argmax_gives_empty_transcript() {
        let model = toy_model();
        let vocab = 15;
        let mut m = Matrix::zeros(6, vocab);
        for t in 0..6 {
            for j in 0..vocab {
                let p = if j == vocab - 1 { 0.9 } else { 0.1 / 14.0 };
                m.set(t, j, (p as f32).ln());
            }
        }
        let post = AmPosterior::new("blanks".into(), m, 14).unwrap();
        let p = FusionParams {
            alpha: 0.0,
            beta_bonus: 0.0,
            cutoff: -1e-9,
            beam_width: 4,
        };
        let out = decode_utterance(&post, &model, &p, &bos_state(&model).unwrap()).unwrap();
        assert!(out.hyps[0].tokens.is_empty());
    }

    #[test]
    fn empty_posterior_is_an_input_error() {
        let model = toy_model();
        let m = Matrix::zeros(0, 15);
        let post = AmPosterior {
            utterance_id: "empty".into(),
            log_probs: m,
            blank: 14,
        };
        let out = decode_utterance(
            &post,
            &model,
            &FusionParams::default(),
            &bos_state(&model).unwrap(),
        );
        assert!(matches!(out, Err(Error::Input(_))));
    }

    #[test]
    fn posterior_vocab_mismatch_is_a_schema_error() {
        let model = toy_model();
        let mut rng = SplitMix64::new(5);
        let post = random_posterior(&mut rng, 3, 12, 1.0);
        let out = decode_utterance(
            &post,
            &model,
            &FusionParams::default(),
            &bos_state(&model).unwrap(),
        );
        assert!(matches!(out, Err(Error::Schema(_))));
    }

    #[test]
    fn repeats_do_not_trigger_lm_queries() {
        let model = toy_model();
        let vocab = 15;
        // One clear token run, then blanks.
        let mut m = Matrix::zeros(4, vocab);
        for t in 0..4 {
            let hot = if t < 2 { 3 } else { 14 };
            for j in 0..vocab {
                let p = if j == hot { 0.92f32 } else { 0.08 / 14.0 };
                m.set(t, j, p.ln());
            }
        }
        let base = AmPosterior::new("run".into(), m.clone(), 14).unwrap();

        // Duplicate the token frames: same transcript, longer run.
        let mut m2rows = Vec::new();
        for t in 0..4 {
            m2rows.push(m.row(t).to_vec());
            if t < 2 {
                m2rows.push(m.row(t).to_vec());
            }
        }
        let longer = AmPosterior::new(
            "run2".into(),
            Matrix::from_rows(&m2rows).unwrap(),
            14,
        )
        .unwrap();

        let p = FusionParams {
            alpha: 0.4,
            beta_bonus: 0.2,
            cutoff: -3.0,
            beam_width: 4,
        };
        let ctx = bos_state(&model).unwrap();
        let a = decode_utterance(&base, &model, &p, &ctx).unwrap();
        let b = decode_utterance(&longer, &model, &p, &ctx).unwrap();
        assert_eq!(a.hyps[0].tokens, b.hyps[0].tokens);
        assert_eq!(
            a.stats.lm_advances, b.stats.lm_advances,
            "stretching a run must not add LM queries"
        );
        assert!((a.hyps[0].lm_score - b.hyps[0].lm_score).abs() < 1e-9);
    }

    #[test]
    fn conversation_requires_ordered_utterances() {
        let model = toy_model();
        let mut rng = SplitMix64::new(9);
        let mk = |rng: &mut SplitMix64, start: f64| UtteranceInput {
            posterior: random_posterior(rng, 4, 15, 1.5),
            start_s: start,
            end_s: start + 1.0,
            reference: None,
        };
        let utts = vec![mk(&mut rng, 5.0), mk(&mut rng, 1.0)];
        let params = ConversationParams {
            fusion: FusionParams::default(),
            max_context_tokens: 50,
            history: HistoryMode::Decoded,
            max_gap_seconds: None,
        };
        assert!(matches!(
            decode_conversation(&model, &utts, &params),
            Err(Error::Input(_))
        ));
    }

    #[test]
    fn zero_context_matches_independent_decoding() {
        let model = toy_model();
        let mut rng = SplitMix64::new(21);
        let utts: Vec<UtteranceInput> = (0..3)
            .map(|i| UtteranceInput {
                posterior: random_posterior(&mut rng, 6, 15, 0.8),
                start_s: i as f64 * 2.0,
                end_s: i as f64 * 2.0 + 1.5,
                reference: None,
            })
            .collect();
        let params = ConversationParams {
            fusion: FusionParams {
                alpha: 0.5,
                beta_bonus: 0.2,
                cutoff: -5.0,
                beam_width: 6,
            },
            max_context_tokens: 0,
            history: HistoryMode::Decoded,
            max_gap_seconds: None,
        };
        let joint = decode_conversation(&model, &utts, &params).unwrap();
        let ctx = bos_state(&model).unwrap();
        for (utt, got) in utts.iter().zip(&joint) {
            let solo = decode_utterance(&utt.posterior, &model, &params.fusion, &ctx).unwrap();
            assert_eq!(solo.hyps[0].tokens, got.tokens);
            assert_eq!(solo.hyps[0].combined, got.combined);
        }
    }

    #[test]
    fn gap_reset_drops_context() {
        let model = toy_model();
        let mut rng = SplitMix64::new(33);
        let p1 = random_posterior(&mut rng, 6, 15, 0.6);
        let p2 = random_posterior(&mut rng, 6, 15, 0.6);
        let make = |gap: f64| {
            vec![
                UtteranceInput {
                    posterior: p1.clone(),
                    start_s: 0.0,
                    end_s: 1.0,
                    reference: None,
                },
                UtteranceInput {
                    posterior: p2.clone(),
                    start_s: 1.0 + gap,
                    end_s: 2.0 + gap,
                    reference: None,
                },
            ]
        };
        let fusion = FusionParams {
            alpha: 0.7,
            beta_bonus: 0.2,
            cutoff: -6.0,
            beam_width: 8,
        };
        let with_reset = ConversationParams {
            fusion,
            max_context_tokens: 50,
            history: HistoryMode::Decoded,
            max_gap_seconds: Some(10.0),
        };
        let no_context = ConversationParams {
            max_context_tokens: 0,
            ..with_reset.clone()
        };
        // A 60s silence exceeds the 10s budget: utterance 2 decodes as if
        // independent.
        let far = decode_conversation(&model, &make(60.0), &with_reset).unwrap();
        let indep = decode_conversation(&model, &make(60.0), &no_context).unwrap();
        assert_eq!(far[1].tokens, indep[1].tokens);
        assert_eq!(far[1].combined, indep[1].combined);
    }
}
