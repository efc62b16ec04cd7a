//! Cross-utterance CTC decoding with an external transformer language model.
//!
//! The crate couples a decoder-only transformer LM (multi-query,
//! key-query-normalized attention with a dynamic position bias and SwiGLU
//! feed-forwards) to CTC acoustic posteriors, either during prefix beam
//! search (shallow fusion) or in a second rescoring pass. Language-model
//! state is carried across utterance boundaries through exact KV caching,
//! separator tokens and initial-token prediction, so decoding one utterance
//! can condition on the conversation so far.

pub mod bench;
pub mod container;
pub mod decoder;
pub mod error;
pub mod eval;
pub mod fixture;
pub mod manifest;
pub mod model;
pub mod rescore;
pub mod rng;
pub mod session;
pub mod tensor;
pub mod tune;
pub mod vocab;

pub use error::{Error, Result};
pub use model::{Model, ModelConfig, TokenId};
pub use session::{bos_state, LmState, SpecialTokens};
