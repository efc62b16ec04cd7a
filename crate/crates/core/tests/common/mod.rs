//! Shared test oracles: exhaustive alignment enumeration, independent
//! greedy collapse, and posterior generators. These deliberately avoid the
//! production search internals so they can stand as references for it.
#![allow(dead_code)] // each test target uses its own subset

use std::collections::HashMap;

use xdec::decoder::{AmPosterior, FusionParams};
use xdec::model::{Model, TokenId};
use xdec::rng::SplitMix64;
use xdec::session::{content_log_probs, LmState};
use xdec::tensor::Matrix;

/// CTC collapse: merge adjacent repeats, then drop blanks.
pub fn collapse(alignment: &[usize], blank: usize) -> Vec<TokenId> {
    let mut out = Vec::new();
    let mut prev = usize::MAX;
    for &s in alignment {
        if s != prev && s != blank {
            out.push(s as TokenId);
        }
        prev = s;
    }
    out
}

/// Independent argmax-collapse decoding.
pub fn greedy_oracle(post: &AmPosterior) -> Vec<TokenId> {
    let mut alignment = Vec::with_capacity(post.frames());
    for t in 0..post.frames() {
        let row = post.log_probs.row(t);
        let mut best = 0usize;
        for (i, &v) in row.iter().enumerate() {
            if v > row[best] {
                best = i;
            }
        }
        alignment.push(best);
    }
    collapse(&alignment, post.blank as usize)
}

/// Fused LM score of a collapsed sequence: walks the session token by
/// token, using initial-token prediction at a boundary context and the
/// content-masked next-token distribution elsewhere.
pub fn lm_fused_score(
    model: &Model,
    context: &LmState,
    tokens: &[TokenId],
    p: &FusionParams,
) -> f64 {
    if p.alpha == 0.0 {
        return p.beta_bonus * tokens.len() as f64;
    }
    let content = model.cfg.content_size();
    let mut state = context.clone();
    let mut total = 0.0;
    for &tok in tokens {
        let dist = if state.at_boundary() {
            state
                .initial_token_content_log_probs(
                    &model.weights.init_gamma,
                    &model.weights.init_beta,
                    content,
                )
                .unwrap()
        } else {
            content_log_probs(state.last_logits().unwrap(), content)
        };
        total += p.alpha * dist[tok as usize] + p.beta_bonus;
        let (_, next) = state.advance(model, &[tok]).unwrap();
        state = next;
    }
    total
}

#[derive(Debug, Clone)]
pub struct OracleHyp {
    pub tokens: Vec<TokenId>,
    pub am_mass: f64,
    pub lm_score: f64,
    pub combined: f64,
}

/// Exhaustive enumeration of every alignment that survives the per-frame
/// candidate threshold, accumulated per collapsed sequence and fused with
/// the LM score. Feasible for `vocab^frames` up to a few hundred thousand.
pub fn enumerate_hypotheses(
    post: &AmPosterior,
    model: &Model,
    p: &FusionParams,
    context: &LmState,
) -> Vec<OracleHyp> {
    let frames = post.frames();
    let vocab = post.vocab();
    // Per-frame candidate sets, computed from scratch.
    let mut candidates: Vec<Vec<usize>> = Vec::with_capacity(frames);
    for t in 0..frames {
        let row = post.log_probs.row(t);
        let max = row.iter().copied().fold(f32::NEG_INFINITY, f32::max) as f64;
        candidates.push(
            (0..vocab)
                .filter(|&i| row[i] as f64 >= max + p.cutoff)
                .collect(),
        );
    }

    let mut masses: HashMap<Vec<TokenId>, f64> = HashMap::new();
    let mut alignment = vec![0usize; frames];
    let mut digits = vec![0usize; frames];
    loop {
        for (t, &d) in digits.iter().enumerate() {
            alignment[t] = candidates[t][d];
        }
        let mut mass = 0.0f64;
        for (t, &s) in alignment.iter().enumerate() {
            mass += post.log_probs.at(t, s) as f64;
        }
        let seq = collapse(&alignment, post.blank as usize);
        let slot = masses.entry(seq).or_insert(f64::NEG_INFINITY);
        *slot = xdec::tensor::logaddexp(*slot, mass);

        // Odometer over the candidate sets.
        let mut t = frames;
        loop {
            if t == 0 {
                return finish(masses, model, context, p);
            }
            t -= 1;
            digits[t] += 1;
            if digits[t] < candidates[t].len() {
                break;
            }
            digits[t] = 0;
        }
    }
}

fn finish(
    masses: HashMap<Vec<TokenId>, f64>,
    model: &Model,
    context: &LmState,
    p: &FusionParams,
) -> Vec<OracleHyp> {
    let mut hyps: Vec<OracleHyp> = masses
        .into_iter()
        .map(|(tokens, am_mass)| {
            let lm_score = lm_fused_score(model, context, &tokens, p);
            OracleHyp {
                combined: am_mass + lm_score,
                tokens,
                am_mass,
                lm_score,
            }
        })
        .collect();
    hyps.sort_by(|a, b| {
        b.combined
            .total_cmp(&a.combined)
            .then_with(|| b.tokens.len().cmp(&a.tokens.len()))
            .then_with(|| a.tokens.cmp(&b.tokens))
    });
    hyps
}

/// Random log-softmax posterior. `peak` > 0 boosts one symbol per frame;
/// peak >= 0.5 guarantees the boosted symbol stays the argmax.
pub fn random_posterior(
    rng: &mut SplitMix64,
    id: &str,
    frames: usize,
    vocab: usize,
    peak: f64,
) -> AmPosterior {
    let mut m = Matrix::zeros(frames, vocab);
    for t in 0..frames {
        let hot = rng.below(vocab);
        let mut probs: Vec<f64> = (0..vocab).map(|_| rng.next_f64() + 1e-3).collect();
        let z: f64 = probs.iter().sum();
        for p in probs.iter_mut() {
            *p = *p / z * (1.0 - peak.min(0.999));
        }
        probs[hot] += peak.min(0.999);
        let z: f64 = probs.iter().sum();
        for (j, p) in probs.iter().enumerate() {
            m.set(t, j, ((p / z).ln()) as f32);
        }
    }
    AmPosterior::new(id.to_string(), m, (vocab - 1) as TokenId).unwrap()
}

/// Naive full-matrix Levenshtein distance.
pub fn naive_edit_distance<T: PartialEq>(a: &[T], b: &[T]) -> usize {
    let n = a.len();
    let m = b.len();
    let mut d = vec![vec![0usize; m + 1]; n + 1];
    for (i, row) in d.iter_mut().enumerate() {
        row[0] = i;
    }
    for (j, cell) in d[0].iter_mut().enumerate() {
        *cell = j;
    }
    for i in 1..=n {
        for j in 1..=m {
            let cost = usize::from(a[i - 1] != b[j - 1]);
            d[i][j] = (d[i - 1][j] + 1)
                .min(d[i][j - 1] + 1)
                .min(d[i - 1][j - 1] + cost);
        }
    }
    d[n][m]
}
