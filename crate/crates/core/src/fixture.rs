//! Synthetic desk-scale corpora: a toy model generates conversation
//! transcripts (so the text genuinely depends on cross-utterance history),
//! and posteriors are noisy one-hot alignments of those references.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::container;
use crate::decoder::AmPosterior;
use crate::error::{Error, Result};
use crate::manifest::{Conversation, Utterance};
use crate::model::{Model, ModelConfig, TokenId};
use crate::rng::SplitMix64;
use crate::session::{bos_state, content_log_probs, SpecialTokens};
use crate::tensor::Matrix;
use crate::vocab::Vocab;

fn default_blank_rate() -> f64 {
    0.3
}
fn default_repeat_rate() -> f64 {
    0.2
}
fn default_noise() -> f64 {
    1.0
}
fn default_temperature() -> f64 {
    0.8
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FixtureSpec {
    pub n_conversations: usize,
    pub utterances_per_conv: usize,
    /// Acoustic frames per utterance.
    pub frames: usize,
    /// Content inventory size (the model vocabulary adds BOS and SEP).
    pub vocab: usize,
    /// Probability that a padding frame is blank rather than a repeat.
    /// At 1.0 the posterior degenerates to all-blank frames.
    #[serde(default = "default_blank_rate")]
    pub blank_rate: f64,
    /// Probability of stretching a token run by one frame.
    #[serde(default = "default_repeat_rate")]
    pub repeat_rate: f64,
    /// Gaussian logit-noise temperature on the one-hot alignment; 0 keeps
    /// every frame's argmax on the planned symbol.
    #[serde(default = "default_noise")]
    pub noise: f64,
    /// Sampling temperature for reference generation.
    #[serde(default = "default_temperature")]
    pub sample_temperature: f64,
}

impl Default for FixtureSpec {
    fn default() -> Self {
        Self {
            n_conversations: 2,
            utterances_per_conv: 4,
            frames: 40,
            vocab: 14,
            blank_rate: default_blank_rate(),
            repeat_rate: default_repeat_rate(),
            noise: default_noise(),
            sample_temperature: default_temperature(),
        }
    }
}

impl FixtureSpec {
    pub fn validate(&self) -> Result<()> {
        if self.n_conversations == 0 || self.utterances_per_conv == 0 {
            return Err(Error::Input("fixture needs at least one utterance".into()));
        }
        if self.frames < 2 {
            return Err(Error::Input("need at least two frames per utterance".into()));
        }
        if self.vocab < 2 {
            return Err(Error::Input("need at least two content tokens".into()));
        }
        if !(0.0..=1.0).contains(&self.blank_rate) || !(0.0..=1.0).contains(&self.repeat_rate) {
            return Err(Error::Input("rates must lie in [0, 1]".into()));
        }
        if self.noise < 0.0 || self.sample_temperature <= 0.0 {
            return Err(Error::Input("bad noise or temperature".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct FixtureUtterance {
    pub utterance_id: String,
    pub start_s: f64,
    pub end_s: f64,
    pub reference_tokens: Vec<TokenId>,
    pub reference_text: String,
    pub posterior: AmPosterior,
}

#[derive(Debug, Clone)]
pub struct FixtureConversation {
    pub conversation_id: String,
    pub utterances: Vec<FixtureUtterance>,
}

#[derive(Debug)]
pub struct Fixture {
    pub model: Model,
    pub vocab: Vocab,
    pub conversations: Vec<FixtureConversation>,
}

/// Sample one content token from a log-distribution at a temperature,
/// suppressing immediate repeats of `prev`.
fn sample_content(
    log_probs: &[f64],
    temperature: f64,
    prev: Option<TokenId>,
    rng: &mut SplitMix64,
) -> TokenId {
    let mut weights: Vec<f64> = log_probs.iter().map(|&lp| (lp / temperature).exp()).collect();
    if let Some(p) = prev {
        weights[p as usize] = 0.0;
    }
    let total: f64 = weights.iter().sum();
    let mut u = rng.next_f64() * total;
    for (i, w) in weights.iter().enumerate() {
        u -= w;
        if u <= 0.0 {
            return i as TokenId;
        }
    }
    (weights.len() - 1) as TokenId
}

/// Frame symbol plan: every reference token gets a contiguous run, padding
/// frames become blanks (with probability `blank_rate`) or run extensions.
/// Token placement is budget-guarded so the whole reference always fits.
fn plan_alignment(
    tokens: &[TokenId],
    frames: usize,
    blank: TokenId,
    spec: &FixtureSpec,
    rng: &mut SplitMix64,
) -> Vec<TokenId> {
    let mut syms = Vec::with_capacity(frames);
    if spec.blank_rate >= 1.0 {
        syms.resize(frames, blank);
        return syms;
    }
    for (idx, &tok) in tokens.iter().enumerate() {
        let needed = tokens.len() - idx;
        while syms.len() + needed < frames && rng.next_f64() < spec.blank_rate {
            syms.push(blank);
        }
        syms.push(tok);
        let needed = tokens.len() - idx - 1;
        while syms.len() + needed < frames && rng.next_f64() < spec.repeat_rate {
            syms.push(tok);
        }
    }
    while syms.len() < frames {
        syms.push(blank);
    }
    syms
}

/// Log-odds separation of the planned symbol in a noiseless frame.
const ALIGNMENT_STRENGTH: f64 = 6.0;

/// Noisy one-hot posterior rows over the symbol plan: softmax of a strong
/// one-hot logit plus Gaussian logit noise scaled by `noise`. Noise 0
/// reproduces the plan exactly under greedy decoding; around 1 the argmax
/// almost never moves; past ~1.5 frames become genuinely ambiguous.
fn posterior_rows(
    syms: &[TokenId],
    am_vocab: usize,
    noise: f64,
    rng: &mut SplitMix64,
) -> Matrix {
    let mut m = Matrix::zeros(syms.len(), am_vocab);
    for (t, &sym) in syms.iter().enumerate() {
        let mut logits = vec![0.0f64; am_vocab];
        for (j, l) in logits.iter_mut().enumerate() {
            if j == sym as usize {
                *l = ALIGNMENT_STRENGTH;
            }
            if noise > 0.0 {
                *l += noise * rng.next_normal();
            }
        }
        let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let lse = max + logits.iter().map(|&l| (l - max).exp()).sum::<f64>().ln();
        for (j, &l) in logits.iter().enumerate() {
            m.set(t, j, (l - lse) as f32);
        }
    }
    m
}

/// Deterministic synthetic corpus. References are sampled from the toy
/// model itself, carrying state across utterances within each conversation,
/// so decoding with context has something real to exploit.
pub fn make_fixture(seed: u64, spec: &FixtureSpec) -> Result<Fixture> {
    spec.validate()?;
    let cfg = ModelConfig::toy(spec.vocab + 2);
    let model = Model::generate(seed, cfg)?;
    let vocab = Vocab::synthetic(spec.vocab)?;
    let toks = SpecialTokens::for_vocab_size(model.cfg.vocab_size);
    let blank = vocab.blank_id();
    let am_vocab = vocab.am_vocab_size();
    let content = vocab.content_size();

    let root = SplitMix64::new(seed);
    let mut rng_text = root.fork(0x7e87);
    let mut rng_post = root.fork(0xa11d);

    let max_tokens = (spec.frames / 2).max(1);
    let min_tokens = (spec.frames / 5).clamp(1, max_tokens);

    let mut conversations = Vec::with_capacity(spec.n_conversations);
    for c in 0..spec.n_conversations {
        let conversation_id = format!("conv{c}");
        let mut state = bos_state(&model)?;
        let mut clock = 0.0f64;
        let mut utterances = Vec::with_capacity(spec.utterances_per_conv);
        for u in 0..spec.utterances_per_conv {
            let target = min_tokens + rng_text.below(max_tokens - min_tokens + 1);
            let mut tokens: Vec<TokenId> = Vec::with_capacity(target);
            let mut cur = state.clone();
            for k in 0..target {
                let dist = if cur.at_boundary() {
                    cur.initial_token_content_log_probs(
                        &model.weights.init_gamma,
                        &model.weights.init_beta,
                        content,
                    )?
                } else {
                    content_log_probs(
                        cur.last_logits()
                            .ok_or_else(|| Error::State("sampler state has no logits".into()))?,
                        content,
                    )
                };
                let prev = if k > 0 { tokens.last().copied() } else { None };
                let tok = sample_content(&dist, spec.sample_temperature, prev, &mut rng_text);
                let (_, next) = cur.advance(&model, &[tok])?;
                tokens.push(tok);
                cur = next;
            }

            let syms = plan_alignment(&tokens, spec.frames, blank, spec, &mut rng_post);
            let rows = posterior_rows(&syms, am_vocab, spec.noise, &mut rng_post);
            let utterance_id = format!("{conversation_id}_u{u}");
            let posterior = AmPosterior::new(utterance_id.clone(), rows, blank)?;

            let dur = spec.frames as f64 * 0.04;
            let start_s = clock;
            let end_s = clock + dur;
            clock = end_s + 0.5;

            utterances.push(FixtureUtterance {
                utterance_id,
                start_s,
                end_s,
                reference_text: vocab.detokenize(&tokens)?,
                reference_tokens: tokens,
                posterior,
            });
            state = cur.end_utterance(&model, &toks)?;
        }
        conversations.push(FixtureConversation {
            conversation_id,
            utterances,
        });
    }
    Ok(Fixture {
        model,
        vocab,
        conversations,
    })
}

pub struct FixturePaths {
    pub manifest: PathBuf,
    pub weights: PathBuf,
}

/// Write a fixture as a weights container, posterior containers and a
/// manifest. Posterior paths are stored relative to the manifest location.
pub fn write_fixture(fixture: &Fixture, out_dir: impl AsRef<Path>) -> Result<FixturePaths> {
    let dir = out_dir.as_ref();
    std::fs::create_dir_all(dir.join("posteriors"))?;
    let weights = dir.join("weights.bin");
    container::save_weights(&weights, &fixture.model)?;

    let mut convs = Vec::new();
    for conv in &fixture.conversations {
        let mut utts = Vec::new();
        for u in &conv.utterances {
            let rel = format!("posteriors/{}.post", u.utterance_id);
            container::save_posterior(dir.join(&rel), &u.posterior)?;
            utts.push(Utterance {
                utterance_id: u.utterance_id.clone(),
                start_s: u.start_s,
                end_s: u.end_s,
                posterior_path: rel,
                reference: Some(u.reference_text.clone()),
            });
        }
        convs.push(Conversation {
            conversation_id: conv.conversation_id.clone(),
            utterances: utts,
        });
    }
    let manifest = dir.join("manifest.jsonl");
    crate::manifest::save_manifest(&convs, &manifest)?;
    Ok(FixturePaths { manifest, weights })
}
