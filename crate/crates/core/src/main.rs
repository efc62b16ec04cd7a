//! Command-line surface: decoding, rescoring, evaluation, tuning, fixture
//! generation and benchmarks over manifest + container files.

use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand, ValueEnum};
use rayon::prelude::*;
use serde::Serialize;

use xdec::bench::{bench_incremental, AttentionVariant};
use xdec::container;
use xdec::decoder::{
    decode_conversation, AmPosterior, ConversationParams, FusionParams, HistoryMode,
    UtteranceInput,
};
use xdec::error::{Error, Result};
use xdec::eval::{format_report_table, perplexity, wer, EvalReport};
use xdec::fixture::{make_fixture, write_fixture, FixtureSpec};
use xdec::manifest::{load_manifest, Conversation};
use xdec::model::{Model, ModelConfig, TokenId};
use xdec::rescore::{generate_nbest, rescore, tlm_score_nbest, NBestList, RescoreParams};
use xdec::session::{bos_state, SpecialTokens};
use xdec::tune::{random_search, SearchSpace};
use xdec::vocab::Vocab;

#[derive(Parser)]
#[command(name = "xdec", version, about = "Cross-utterance CTC decoding with a transformer LM")]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum HistoryArg {
    Decoded,
    Gth,
}

impl From<HistoryArg> for HistoryMode {
    fn from(h: HistoryArg) -> Self {
        match h {
            HistoryArg::Decoded => HistoryMode::Decoded,
            HistoryArg::Gth => HistoryMode::GroundTruth,
        }
    }
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum VariantArg {
    Multiquery,
    Multihead,
}

impl From<VariantArg> for AttentionVariant {
    fn from(v: VariantArg) -> Self {
        match v {
            VariantArg::Multiquery => AttentionVariant::MultiQuery,
            VariantArg::Multihead => AttentionVariant::MultiHead,
        }
    }
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum TuneMode {
    Fusion,
    Rescore,
}

#[derive(Subcommand)]
enum Cmd {
    /// First-pass beam-search decoding with shallow fusion.
    Decode {
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long)]
        weights: PathBuf,
        /// History carried across utterance boundaries (0 = independent).
        #[arg(long, default_value_t = 0)]
        context_tokens: usize,
        #[arg(long, default_value_t = 0.5)]
        alpha: f64,
        #[arg(long, default_value_t = 0.3)]
        beta: f64,
        #[arg(long, default_value_t = -6.0, allow_hyphen_values = true)]
        cutoff: f64,
        #[arg(long, default_value_t = 25)]
        beam_width: usize,
        #[arg(long, value_enum, default_value_t = HistoryArg::Decoded)]
        history: HistoryArg,
        /// Drop context across silences longer than this many seconds.
        #[arg(long)]
        max_gap_seconds: Option<f64>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// AM-only wide-beam first pass plus TLM rescoring.
    Rescore {
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long)]
        weights: PathBuf,
        /// First-pass beam width.
        #[arg(long, default_value_t = 1000)]
        width: usize,
        /// N-best list size.
        #[arg(long, default_value_t = 100)]
        nbest: usize,
        #[arg(long, default_value_t = 1.0)]
        w_first: f64,
        #[arg(long, default_value_t = 1.0)]
        w_tlm: f64,
        #[arg(long, default_value_t = 0.0, allow_hyphen_values = true)]
        length_penalty: f64,
        #[arg(long, default_value_t = 0)]
        context_tokens: usize,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Perplexity of manifest references under the model.
    Ppl {
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long)]
        weights: PathBuf,
        /// Comma-separated context sizes, e.g. 0,50,100,250,500.
        #[arg(long, default_value = "0")]
        context_tokens: String,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Word error rate between two line-aligned text files.
    Wer {
        #[arg(long)]
        hyp: PathBuf,
        #[arg(long = "ref")]
        reference: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Random-search tuning of fusion or rescoring parameters against WER.
    Tune {
        #[arg(long, value_enum)]
        mode: TuneMode,
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long)]
        weights: PathBuf,
        #[arg(long, default_value_t = 64)]
        trials: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 0)]
        context_tokens: usize,
        /// Beam width held fixed while tuning fusion parameters.
        #[arg(long, default_value_t = 25)]
        beam_width: usize,
        /// First-pass width / list size held fixed while tuning rescoring.
        #[arg(long, default_value_t = 1000)]
        width: usize,
        #[arg(long, default_value_t = 100)]
        nbest: usize,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Generate a synthetic corpus: toy weights, posteriors and manifest.
    Fixture {
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Inline JSON or a path to a JSON file; defaults when omitted.
        #[arg(long)]
        spec: Option<String>,
        #[arg(long)]
        out_dir: PathBuf,
    },
    /// Incremental-inference micro-benchmark.
    Bench {
        /// Weights container; a default 12-layer model is generated when
        /// omitted.
        #[arg(long)]
        weights: Option<PathBuf>,
        #[arg(long, default_value_t = 25)]
        batch: usize,
        #[arg(long, default_value_t = 500)]
        cache: usize,
        /// Run a single variant; both when omitted.
        #[arg(long, value_enum)]
        attention: Option<VariantArg>,
        #[arg(long, default_value_t = 20)]
        iterations: usize,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

fn main() {
    let cli = Cli::parse();
    if let Err(e) = run(cli) {
        eprintln!("error: {e}");
        std::process::exit(e.exit_code());
    }
}

fn write_out(out: &Option<PathBuf>, content: &str) -> Result<()> {
    match out {
        Some(path) => {
            std::fs::write(path, content)?;
        }
        None => {
            std::io::stdout().write_all(content.as_bytes())?;
        }
    }
    Ok(())
}

/// A conversation with its posteriors loaded, paths resolved relative to
/// the manifest location.
struct LoadedConversation {
    conversation: Conversation,
    posteriors: Vec<AmPosterior>,
}

fn load_corpus(manifest_path: &Path) -> Result<Vec<LoadedConversation>> {
    let convs = load_manifest(manifest_path)?;
    let base = manifest_path.parent().unwrap_or(Path::new("."));
    convs
        .into_iter()
        .map(|conversation| {
            let posteriors = conversation
                .utterances
                .iter()
                .map(|u| {
                    let p = base.join(&u.posterior_path);
                    let post = container::load_posterior(&p)?;
                    if post.utterance_id != u.utterance_id {
                        return Err(Error::Schema(format!(
                            "posterior file {} holds utterance {}, manifest says {}",
                            p.display(),
                            post.utterance_id,
                            u.utterance_id
                        )));
                    }
                    Ok(post)
                })
                .collect::<Result<Vec<_>>>()?;
            Ok(LoadedConversation {
                conversation,
                posteriors,
            })
        })
        .collect()
}

fn vocab_for(model: &Model) -> Result<Vocab> {
    Vocab::synthetic(model.cfg.content_size())
}

fn conversation_inputs(
    loaded: &LoadedConversation,
    vocab: &Vocab,
    need_reference: bool,
) -> Result<Vec<UtteranceInput>> {
    loaded
        .conversation
        .utterances
        .iter()
        .zip(&loaded.posteriors)
        .map(|(u, post)| {
            let reference = match &u.reference {
                Some(text) => Some(vocab.tokenize(text)?),
                None if need_reference => {
                    return Err(Error::Input(format!(
                        "utterance {} lacks a reference transcript",
                        u.utterance_id
                    )))
                }
                None => None,
            };
            Ok(UtteranceInput {
                posterior: post.clone(),
                start_s: u.start_s,
                end_s: u.end_s,
                reference,
            })
        })
        .collect()
}

#[derive(Serialize)]
struct TranscriptLine<'a> {
    conversation_id: &'a str,
    utterance_id: String,
    text: String,
    tokens: Vec<TokenId>,
    am_log_prob: f64,
    lm_score: f64,
    combined: f64,
}

fn cmd_decode(
    manifest: &Path,
    weights: &Path,
    params: &ConversationParams,
    out: &Option<PathBuf>,
) -> Result<()> {
    let model = container::load_weights(weights)?;
    let vocab = vocab_for(&model)?;
    let corpus = load_corpus(manifest)?;
    let need_ref = params.history == HistoryMode::GroundTruth;

    // Conversations are independent; within one, decoding is sequential.
    let decoded: Vec<(String, Vec<xdec::decoder::UtteranceResult>)> = corpus
        .par_iter()
        .map(|loaded| {
            let inputs = conversation_inputs(loaded, &vocab, need_ref)?;
            let results = decode_conversation(&model, &inputs, params)?;
            Ok((loaded.conversation.conversation_id.clone(), results))
        })
        .collect::<Result<Vec<_>>>()?;

    let mut buf = String::new();
    for (conversation_id, results) in &decoded {
        for r in results {
            let line = TranscriptLine {
                conversation_id,
                utterance_id: r.utterance_id.clone(),
                text: vocab.detokenize(&r.tokens)?,
                tokens: r.tokens.clone(),
                am_log_prob: r.am_log_prob,
                lm_score: r.lm_score,
                combined: r.combined,
            };
            buf.push_str(&serde_json::to_string(&line)?);
            buf.push('\n');
        }
    }
    write_out(out, &buf)
}

/// Sequential rescoring over one conversation, carrying the top rescored
/// hypothesis' LM state across boundaries.
fn rescore_conversation(
    model: &Model,
    vocab: &Vocab,
    loaded: &LoadedConversation,
    width: usize,
    nbest: usize,
    rp: &RescoreParams,
    context_tokens: usize,
) -> Result<Vec<NBestList>> {
    let toks = SpecialTokens::for_vocab_size(model.cfg.vocab_size);
    let fresh = bos_state(model)?;
    let mut state = fresh.clone();
    let mut lists = Vec::new();
    for post in &loaded.posteriors {
        let list = generate_nbest(post, model, width, nbest)?;
        let scored = tlm_score_nbest(&list, model, &state)?;
        let mut ranked = rescore(&scored, rp)?;
        for e in &mut ranked.entries {
            e.text = Some(vocab.detokenize(&e.tokens)?);
        }
        let top_tokens = ranked
            .entries
            .first()
            .map(|e| e.tokens.clone())
            .unwrap_or_default();
        lists.push(ranked);
        state = if context_tokens == 0 {
            fresh.clone()
        } else {
            let advanced = if top_tokens.is_empty() {
                state.clone()
            } else {
                state.advance(model, &top_tokens)?.1
            };
            advanced
                .end_utterance(model, &toks)?
                .truncate(context_tokens)?
        };
    }
    Ok(lists)
}

fn cmd_rescore(
    manifest: &Path,
    weights: &Path,
    width: usize,
    nbest: usize,
    rp: &RescoreParams,
    context_tokens: usize,
    out: &Option<PathBuf>,
) -> Result<()> {
    let model = container::load_weights(weights)?;
    let vocab = vocab_for(&model)?;
    let corpus = load_corpus(manifest)?;
    let lists: Vec<Vec<NBestList>> = corpus
        .par_iter()
        .map(|loaded| {
            rescore_conversation(&model, &vocab, loaded, width, nbest, rp, context_tokens)
        })
        .collect::<Result<Vec<_>>>()?;
    let mut buf = String::new();
    for conv_lists in &lists {
        for list in conv_lists {
            buf.push_str(&serde_json::to_string(list)?);
            buf.push('\n');
        }
    }
    write_out(out, &buf)
}

fn reference_conversations(
    corpus: &[LoadedConversation],
    vocab: &Vocab,
) -> Result<Vec<Vec<Vec<TokenId>>>> {
    corpus
        .iter()
        .map(|loaded| {
            loaded
                .conversation
                .utterances
                .iter()
                .map(|u| {
                    let text = u.reference.as_ref().ok_or_else(|| {
                        Error::Input(format!(
                            "utterance {} lacks a reference transcript",
                            u.utterance_id
                        ))
                    })?;
                    vocab.tokenize(text)
                })
                .collect()
        })
        .collect()
}

fn cmd_ppl(manifest: &Path, weights: &Path, contexts: &str, out: &Option<PathBuf>) -> Result<()> {
    let model = container::load_weights(weights)?;
    let vocab = vocab_for(&model)?;
    let corpus = load_corpus(manifest)?;
    let conversations = reference_conversations(&corpus, &vocab)?;
    let dataset = manifest
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| "manifest".into());

    let mut reports = Vec::new();
    for part in contexts.split(',') {
        let ctx: usize = part
            .trim()
            .parse()
            .map_err(|_| Error::Input(format!("bad context size {part:?}")))?;
        let r = perplexity(&model, &conversations, ctx)?;
        reports.push(EvalReport {
            dataset: dataset.clone(),
            context_tokens: ctx,
            metric: "ppl".into(),
            value: r.value,
            token_count: r.token_count,
            word_count: 0,
        });
    }
    print!("{}", format_report_table(&reports));
    if out.is_some() {
        let mut buf = String::new();
        for r in &reports {
            buf.push_str(&serde_json::to_string(r)?);
            buf.push('\n');
        }
        write_out(out, &buf)?;
    }
    Ok(())
}

fn read_lines(path: &Path) -> Result<Vec<String>> {
    Ok(std::fs::read_to_string(path)?
        .lines()
        .map(|s| s.to_string())
        .collect())
}

fn cmd_wer(hyp: &Path, reference: &Path, out: &Option<PathBuf>) -> Result<()> {
    let hyps = read_lines(hyp)?;
    let refs = read_lines(reference)?;
    let r = wer(&hyps, &refs)?;
    let report = EvalReport {
        dataset: reference
            .file_stem()
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_else(|| "corpus".into()),
        context_tokens: 0,
        metric: "wer".into(),
        value: r.value,
        token_count: r.hyp_words,
        word_count: r.ref_words,
    };
    print!("{}", format_report_table(std::slice::from_ref(&report)));
    if out.is_some() {
        let mut buf = serde_json::to_string(&report)?;
        buf.push('\n');
        write_out(out, &buf)?;
    }
    Ok(())
}

/// Corpus WER of decoded output against manifest references.
fn decode_wer(
    model: &Model,
    vocab: &Vocab,
    corpus: &[LoadedConversation],
    params: &ConversationParams,
) -> Result<f64> {
    let per_conv: Vec<Vec<String>> = corpus
        .par_iter()
        .map(|loaded| {
            let inputs = conversation_inputs(loaded, vocab, false)?;
            let results = decode_conversation(model, &inputs, params)?;
            results
                .iter()
                .map(|r| vocab.detokenize(&r.tokens))
                .collect::<Result<Vec<_>>>()
        })
        .collect::<Result<Vec<_>>>()?;
    let mut hyps = Vec::new();
    let mut refs = Vec::new();
    for (loaded, texts) in corpus.iter().zip(per_conv) {
        for (u, text) in loaded.conversation.utterances.iter().zip(texts) {
            let r = u.reference.as_ref().ok_or_else(|| {
                Error::Input(format!("utterance {} lacks a reference", u.utterance_id))
            })?;
            refs.push(r.clone());
            hyps.push(text);
        }
    }
    Ok(wer(&hyps, &refs)?.value)
}

fn rescore_wer(
    model: &Model,
    vocab: &Vocab,
    corpus: &[LoadedConversation],
    width: usize,
    nbest: usize,
    rp: &RescoreParams,
    context_tokens: usize,
) -> Result<f64> {
    let per_conv: Vec<Vec<NBestList>> = corpus
        .par_iter()
        .map(|loaded| rescore_conversation(model, vocab, loaded, width, nbest, rp, context_tokens))
        .collect::<Result<Vec<_>>>()?;
    let mut hyps = Vec::new();
    let mut refs = Vec::new();
    for (loaded, lists) in corpus.iter().zip(per_conv) {
        for (u, list) in loaded.conversation.utterances.iter().zip(lists) {
            let r = u.reference.as_ref().ok_or_else(|| {
                Error::Input(format!("utterance {} lacks a reference", u.utterance_id))
            })?;
            refs.push(r.clone());
            hyps.push(
                list.entries
                    .first()
                    .and_then(|e| e.text.clone())
                    .unwrap_or_default(),
            );
        }
    }
    Ok(wer(&hyps, &refs)?.value)
}

#[allow(clippy::too_many_arguments)]
fn cmd_tune(
    mode: TuneMode,
    manifest: &Path,
    weights: &Path,
    trials: usize,
    seed: u64,
    context_tokens: usize,
    beam_width: usize,
    width: usize,
    nbest: usize,
    out: &Option<PathBuf>,
) -> Result<()> {
    let model = container::load_weights(weights)?;
    let vocab = vocab_for(&model)?;
    let corpus = load_corpus(manifest)?;

    let outcome = match mode {
        TuneMode::Fusion => {
            let space = SearchSpace::fusion(seed, trials);
            random_search(&space, |p| {
                let params = ConversationParams {
                    fusion: FusionParams {
                        alpha: p[0],
                        beta_bonus: p[1],
                        cutoff: p[2],
                        beam_width,
                    },
                    max_context_tokens: context_tokens,
                    history: HistoryMode::Decoded,
                    max_gap_seconds: None,
                };
                decode_wer(&model, &vocab, &corpus, &params)
            })?
        }
        TuneMode::Rescore => {
            let space = SearchSpace::rescore(seed, trials);
            random_search(&space, |p| {
                let rp = RescoreParams {
                    w_first: 1.0,
                    w_tlm: p[0],
                    length_penalty: p[1],
                    n_best_size: nbest,
                };
                rescore_wer(&model, &vocab, &corpus, width, nbest, &rp, context_tokens)
            })?
        }
    };

    println!(
        "best trial {}: params {:?} wer {:.5}",
        outcome.best_index, outcome.best_params, outcome.best_value
    );
    if out.is_some() {
        let mut buf = String::new();
        for t in &outcome.trials {
            buf.push_str(&serde_json::to_string(t)?);
            buf.push('\n');
        }
        write_out(out, &buf)?;
    }
    Ok(())
}

fn cmd_fixture(seed: u64, spec: &Option<String>, out_dir: &Path) -> Result<()> {
    let spec = match spec {
        None => FixtureSpec::default(),
        Some(s) if s.trim_start().starts_with('{') => serde_json::from_str(s)?,
        Some(path) => serde_json::from_str(&std::fs::read_to_string(path)?)?,
    };
    let fixture = make_fixture(seed, &spec)?;
    let paths = write_fixture(&fixture, out_dir)?;
    println!("manifest: {}", paths.manifest.display());
    println!("weights: {}", paths.weights.display());
    Ok(())
}

fn cmd_bench(
    weights: &Option<PathBuf>,
    batch: usize,
    cache: usize,
    attention: Option<VariantArg>,
    iterations: usize,
    out: &Option<PathBuf>,
) -> Result<()> {
    let model = match weights {
        Some(path) => container::load_weights(path)?,
        None => Model::generate(0, ModelConfig::conversational())?,
    };
    let variants: Vec<AttentionVariant> = match attention {
        Some(v) => vec![v.into()],
        None => vec![AttentionVariant::MultiQuery, AttentionVariant::MultiHead],
    };
    let mut results = Vec::new();
    for v in variants {
        let r = bench_incremental(&model, v, batch, cache, iterations)?;
        println!(
            "{}: median {:.6}s, mean {:.6}s (std {:.6}s), cache {} B/token/layer",
            r.label, r.median_s, r.mean_s, r.std_s, r.cache_bytes_per_token_per_layer
        );
        results.push(r);
    }
    if results.len() == 2 {
        println!(
            "multihead/multiquery median speedup: {:.2}x, memory ratio {:.0}x",
            results[1].median_s / results[0].median_s,
            results[1].cache_bytes_per_token_per_layer as f64
                / results[0].cache_bytes_per_token_per_layer as f64
        );
    }
    if let Some(path) = out {
        let is_csv = path.extension().map(|e| e == "csv").unwrap_or(false);
        let content = if is_csv {
            results.iter().map(|r| r.to_csv()).collect::<String>()
        } else {
            let mut s = String::new();
            for r in &results {
                s.push_str(&serde_json::to_string(r)?);
                s.push('\n');
            }
            s
        };
        std::fs::write(path, content)?;
    }
    Ok(())
}

fn run(cli: Cli) -> Result<()> {
    match cli.cmd {
        Cmd::Decode {
            manifest,
            weights,
            context_tokens,
            alpha,
            beta,
            cutoff,
            beam_width,
            history,
            max_gap_seconds,
            out,
        } => {
            let params = ConversationParams {
                fusion: FusionParams {
                    alpha,
                    beta_bonus: beta,
                    cutoff,
                    beam_width,
                },
                max_context_tokens: context_tokens,
                history: history.into(),
                max_gap_seconds,
            };
            cmd_decode(&manifest, &weights, &params, &out)
        }
        Cmd::Rescore {
            manifest,
            weights,
            width,
            nbest,
            w_first,
            w_tlm,
            length_penalty,
            context_tokens,
            out,
        } => {
            let rp = RescoreParams {
                w_first,
                w_tlm,
                length_penalty,
                n_best_size: nbest,
            };
            cmd_rescore(&manifest, &weights, width, nbest, &rp, context_tokens, &out)
        }
        Cmd::Ppl {
            manifest,
            weights,
            context_tokens,
            out,
        } => cmd_ppl(&manifest, &weights, &context_tokens, &out),
        Cmd::Wer {
            hyp,
            reference,
            out,
        } => cmd_wer(&hyp, &reference, &out),
        Cmd::Tune {
            mode,
            manifest,
            weights,
            trials,
            seed,
            context_tokens,
            beam_width,
            width,
            nbest,
            out,
        } => cmd_tune(
            mode,
            &manifest,
            &weights,
            trials,
            seed,
            context_tokens,
            beam_width,
            width,
            nbest,
            &out,
        ),
        Cmd::Fixture { seed, spec, out_dir } => cmd_fixture(seed, &spec, &out_dir),
        Cmd::Bench {
            weights,
            batch,
            cache,
            attention,
            iterations,
            out,
        } => cmd_bench(&weights, batch, cache, attention, iterations, &out),
    }
}
