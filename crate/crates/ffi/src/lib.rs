//! C ABI over the decoding toolkit: opaque handles, integer status codes
//! and explicit free functions, so other languages can drive models, LM
//! states and utterance decoding.
//!
//! Conventions: functions return [`XdecStatus`]; `XDEC_STATUS_OK` is zero.
//! On failure, a thread-local message is readable through
//! [`xdec_last_error`] until the next failing call on that thread. Output
//! pointers are written only on success. Every allocated object must be
//! released with its matching `_free` function.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::path::PathBuf;

use xdec::decoder::{decode_utterance, FusionParams};
use xdec::error::Error;
use xdec::model::{Model, ModelConfig, TokenId};
use xdec::session::{bos_state, LmState, SpecialTokens};
use xdec::vocab::Vocab;

/// Call outcome. Mirrors the CLI convention: input/format problems map to
/// `InputFormat`, search and state failures to `SearchFailure`.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum XdecStatus {
    Ok = 0,
    InvalidArgument = 1,
    InputFormat = 2,
    SearchFailure = 3,
    Internal = 4,
}

/// Opaque model handle (a validated weight store plus its vocabulary).
pub struct XdecModel {
    model: Model,
    vocab: Vocab,
}

/// Opaque cross-utterance LM state handle.
pub struct XdecState {
    state: LmState,
}

thread_local! {
    static LAST_ERROR: RefCell<CString> = RefCell::new(CString::default());
}

fn fail(status: XdecStatus, msg: impl Into<Vec<u8>>) -> XdecStatus {
    let c = CString::new(msg).unwrap_or_default();
    LAST_ERROR.with(|slot| *slot.borrow_mut() = c);
    status
}

fn fail_error(e: &Error) -> XdecStatus {
    let status = match e.exit_code() {
        2 => XdecStatus::InputFormat,
        3 => XdecStatus::SearchFailure,
        _ => XdecStatus::Internal,
    };
    fail(status, e.to_string())
}

/// Message describing the most recent failure on this thread. The pointer
/// stays valid until the next failing call on the same thread.
#[no_mangle]
pub extern "C" fn xdec_last_error() -> *const c_char {
    LAST_ERROR.with(|slot| slot.borrow().as_ptr())
}

/// Library version string (static storage).
#[no_mangle]
pub extern "C" fn xdec_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr() as *const c_char
}

unsafe fn path_from(ptr: *const c_char) -> Result<PathBuf, XdecStatus> {
    if ptr.is_null() {
        return Err(fail(XdecStatus::InvalidArgument, "null path"));
    }
    match CStr::from_ptr(ptr).to_str() {
        Ok(s) => Ok(PathBuf::from(s)),
        Err(_) => Err(fail(XdecStatus::InvalidArgument, "path is not valid UTF-8")),
    }
}

fn wrap_model(model: Model, out: *mut *mut XdecModel) -> XdecStatus {
    let vocab = match Vocab::synthetic(model.cfg.content_size()) {
        Ok(v) => v,
        Err(e) => return fail_error(&e),
    };
    let handle = Box::new(XdecModel { model, vocab });
    unsafe { *out = Box::into_raw(handle) };
    XdecStatus::Ok
}

/// Load a weights container from `path`.
///
/// # Safety
/// `path` must be a valid NUL-terminated string and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn xdec_model_load(
    path: *const c_char,
    out: *mut *mut XdecModel,
) -> XdecStatus {
    if out.is_null() {
        return fail(XdecStatus::InvalidArgument, "null output pointer");
    }
    let path = match path_from(path) {
        Ok(p) => p,
        Err(s) => return s,
    };
    match xdec::container::load_weights(&path) {
        Ok(model) => wrap_model(model, out),
        Err(e) => fail_error(&e),
    }
}

/// Fabricate a deterministic model (for tests and binding smoke checks).
///
/// # Safety
/// `out` must be a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn xdec_model_generate(
    seed: u64,
    n_layers: usize,
    d_model: usize,
    n_query_heads: usize,
    ffn_expansion: usize,
    vocab_size: usize,
    pos_bias_hidden: usize,
    out: *mut *mut XdecModel,
) -> XdecStatus {
    if out.is_null() {
        return fail(XdecStatus::InvalidArgument, "null output pointer");
    }
    let cfg = ModelConfig {
        n_layers,
        d_model,
        n_query_heads,
        ffn_expansion,
        vocab_size,
        pos_bias_hidden,
        eps_norm: 1e-6,
    };
    match Model::generate(seed, cfg) {
        Ok(model) => wrap_model(model, out),
        Err(e) => fail_error(&e),
    }
}

/// # Safety
/// `model` must come from a model constructor and not be freed twice.
#[no_mangle]
pub unsafe extern "C" fn xdec_model_free(model: *mut XdecModel) {
    if !model.is_null() {
        drop(Box::from_raw(model));
    }
}

/// Total LM vocabulary (content + BOS + SEP); zero for a null handle.
///
/// # Safety
/// `model` must be a live model handle or null.
#[no_mangle]
pub unsafe extern "C" fn xdec_model_vocab_size(model: *const XdecModel) -> usize {
    model.as_ref().map(|m| m.model.cfg.vocab_size).unwrap_or(0)
}

/// Content (non-special) vocabulary size; zero for a null handle.
///
/// # Safety
/// `model` must be a live model handle or null.
#[no_mangle]
pub unsafe extern "C" fn xdec_model_content_size(model: *const XdecModel) -> usize {
    model
        .as_ref()
        .map(|m| m.model.cfg.content_size())
        .unwrap_or(0)
}

/// Fresh BOS-seeded history state.
///
/// # Safety
/// `model` must be a live model handle; `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn xdec_state_new(
    model: *const XdecModel,
    out: *mut *mut XdecState,
) -> XdecStatus {
    let Some(m) = model.as_ref() else {
        return fail(XdecStatus::InvalidArgument, "null model");
    };
    if out.is_null() {
        return fail(XdecStatus::InvalidArgument, "null output pointer");
    }
    match bos_state(&m.model) {
        Ok(state) => {
            *out = Box::into_raw(Box::new(XdecState { state }));
            XdecStatus::Ok
        }
        Err(e) => fail_error(&e),
    }
}

/// Deep copy; branches never interfere.
///
/// # Safety
/// `state` must be a live state handle; `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn xdec_state_clone(
    state: *const XdecState,
    out: *mut *mut XdecState,
) -> XdecStatus {
    let Some(s) = state.as_ref() else {
        return fail(XdecStatus::InvalidArgument, "null state");
    };
    if out.is_null() {
        return fail(XdecStatus::InvalidArgument, "null output pointer");
    }
    *out = Box::into_raw(Box::new(XdecState {
        state: s.state.clone(),
    }));
    XdecStatus::Ok
}

/// # Safety
/// `state` must come from a state constructor and not be freed twice.
#[no_mangle]
pub unsafe extern "C" fn xdec_state_free(state: *mut XdecState) {
    if !state.is_null() {
        drop(Box::from_raw(state));
    }
}

/// Number of cached tokens; zero for a null handle.
///
/// # Safety
/// `state` must be a live state handle or null.
#[no_mangle]
pub unsafe extern "C" fn xdec_state_len(state: *const XdecState) -> usize {
    state.as_ref().map(|s| s.state.len()).unwrap_or(0)
}

/// Feed `len` tokens through the model, updating the state in place.
///
/// # Safety
/// `model` and `state` must be live handles; `tokens` must point to `len`
/// readable u32 values.
#[no_mangle]
pub unsafe extern "C" fn xdec_state_advance(
    model: *const XdecModel,
    state: *mut XdecState,
    tokens: *const u32,
    len: usize,
) -> XdecStatus {
    let Some(m) = model.as_ref() else {
        return fail(XdecStatus::InvalidArgument, "null model");
    };
    let Some(s) = state.as_mut() else {
        return fail(XdecStatus::InvalidArgument, "null state");
    };
    if tokens.is_null() && len > 0 {
        return fail(XdecStatus::InvalidArgument, "null token buffer");
    }
    let toks = std::slice::from_raw_parts(tokens, len);
    match s.state.advance(&m.model, toks) {
        Ok((_, next)) => {
            s.state = next;
            XdecStatus::Ok
        }
        Err(e) => fail_error(&e),
    }
}

/// Append the utterance separator and mark the boundary.
///
/// # Safety
/// `model` and `state` must be live handles.
#[no_mangle]
pub unsafe extern "C" fn xdec_state_end_utterance(
    model: *const XdecModel,
    state: *mut XdecState,
) -> XdecStatus {
    let Some(m) = model.as_ref() else {
        return fail(XdecStatus::InvalidArgument, "null model");
    };
    let Some(s) = state.as_mut() else {
        return fail(XdecStatus::InvalidArgument, "null state");
    };
    let toks = SpecialTokens::for_vocab_size(m.model.cfg.vocab_size);
    match s.state.end_utterance(&m.model, &toks) {
        Ok(next) => {
            s.state = next;
            XdecStatus::Ok
        }
        Err(e) => fail_error(&e),
    }
}

/// Truncate the cached history to `max_tokens`, keeping the BOS anchor.
///
/// # Safety
/// `state` must be a live state handle.
#[no_mangle]
pub unsafe extern "C" fn xdec_state_truncate(
    state: *mut XdecState,
    max_tokens: usize,
) -> XdecStatus {
    let Some(s) = state.as_mut() else {
        return fail(XdecStatus::InvalidArgument, "null state");
    };
    match s.state.truncate(max_tokens) {
        Ok(next) => {
            s.state = next;
            XdecStatus::Ok
        }
        Err(e) => fail_error(&e),
    }
}

/// Decode one posterior container with shallow fusion. `context` may be
/// null for an independent utterance. On success `*out_tokens` holds
/// `*out_len` token ids (free with [`xdec_tokens_free`]) and `*out_score`
/// the combined log score of the best hypothesis.
///
/// # Safety
/// Pointer arguments must be valid; `posterior_path` NUL-terminated.
#[no_mangle]
pub unsafe extern "C" fn xdec_decode_posterior_file(
    model: *const XdecModel,
    posterior_path: *const c_char,
    alpha: f64,
    beta: f64,
    cutoff: f64,
    beam_width: usize,
    context: *const XdecState,
    out_tokens: *mut *mut u32,
    out_len: *mut usize,
    out_score: *mut f64,
) -> XdecStatus {
    let Some(m) = model.as_ref() else {
        return fail(XdecStatus::InvalidArgument, "null model");
    };
    if out_tokens.is_null() || out_len.is_null() || out_score.is_null() {
        return fail(XdecStatus::InvalidArgument, "null output pointer");
    }
    let path = match path_from(posterior_path) {
        Ok(p) => p,
        Err(s) => return s,
    };
    let post = match xdec::container::load_posterior(&path) {
        Ok(p) => p,
        Err(e) => return fail_error(&e),
    };
    let params = FusionParams {
        alpha,
        beta_bonus: beta,
        cutoff,
        beam_width,
    };
    let fresh;
    let ctx: &LmState = match context.as_ref() {
        Some(c) => &c.state,
        None => {
            fresh = match bos_state(&m.model) {
                Ok(s) => s,
                Err(e) => return fail_error(&e),
            };
            &fresh
        }
    };
    match decode_utterance(&post, &m.model, &params, ctx) {
        Ok(out) => {
            let top = &out.hyps[0];
            let mut tokens: Vec<u32> = top.tokens.clone();
            tokens.shrink_to_fit();
            *out_len = tokens.len();
            *out_score = top.combined;
            let mut boxed = tokens.into_boxed_slice();
            *out_tokens = boxed.as_mut_ptr();
            std::mem::forget(boxed);
            XdecStatus::Ok
        }
        Err(e) => fail_error(&e),
    }
}

/// Release a token buffer returned by [`xdec_decode_posterior_file`].
///
/// # Safety
/// `tokens`/`len` must match a previous successful decode exactly.
#[no_mangle]
pub unsafe extern "C" fn xdec_tokens_free(tokens: *mut u32, len: usize) {
    if !tokens.is_null() {
        drop(Box::from_raw(std::ptr::slice_from_raw_parts_mut(tokens, len)));
    }
}

/// Render content tokens as text (free with [`xdec_string_free`]).
///
/// # Safety
/// `model` must be live; `tokens` must point to `len` readable u32 values;
/// `out` must be valid.
#[no_mangle]
pub unsafe extern "C" fn xdec_detokenize(
    model: *const XdecModel,
    tokens: *const u32,
    len: usize,
    out: *mut *mut c_char,
) -> XdecStatus {
    let Some(m) = model.as_ref() else {
        return fail(XdecStatus::InvalidArgument, "null model");
    };
    if out.is_null() || (tokens.is_null() && len > 0) {
        return fail(XdecStatus::InvalidArgument, "null pointer");
    }
    let toks: &[TokenId] = std::slice::from_raw_parts(tokens, len);
    match m.vocab.detokenize(toks) {
        Ok(text) => match CString::new(text) {
            Ok(c) => {
                *out = c.into_raw();
                XdecStatus::Ok
            }
            Err(_) => fail(XdecStatus::Internal, "text contained a NUL byte"),
        },
        Err(e) => fail_error(&e),
    }
}

/// # Safety
/// `s` must come from this library and not be freed twice.
#[no_mangle]
pub unsafe extern "C" fn xdec_string_free(s: *mut c_char) {
    if !s.is_null() {
        drop(CString::from_raw(s));
    }
}

/// Corpus word error rate between newline-separated hypothesis and
/// reference texts.
///
/// # Safety
/// `hyp` and `reference` must be NUL-terminated strings; `out` valid.
#[no_mangle]
pub unsafe extern "C" fn xdec_wer(
    hyp: *const c_char,
    reference: *const c_char,
    out: *mut f64,
) -> XdecStatus {
    if hyp.is_null() || reference.is_null() || out.is_null() {
        return fail(XdecStatus::InvalidArgument, "null pointer");
    }
    let (Ok(h), Ok(r)) = (
        CStr::from_ptr(hyp).to_str(),
        CStr::from_ptr(reference).to_str(),
    ) else {
        return fail(XdecStatus::InvalidArgument, "text is not valid UTF-8");
    };
    let hyps: Vec<String> = h.lines().map(|s| s.to_string()).collect();
    let refs: Vec<String> = r.lines().map(|s| s.to_string()).collect();
    match xdec::eval::wer(&hyps, &refs) {
        Ok(res) => {
            *out = res.value;
            XdecStatus::Ok
        }
        Err(e) => fail_error(&e),
    }
}
