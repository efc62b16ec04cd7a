//! Subword inventory and text handling.
//!
//! Training a byte-pair encoder is out of scope here, so the toolkit uses a
//! synthetic piece inventory with the same interface: every content token
//! maps to a unique three-letter piece, and even-numbered pieces start a new
//! word. Fixed-length pieces make segmentation unambiguous, so
//! `tokenize(detokenize(ids)) == ids` holds for any content sequence.

use std::collections::HashMap;

use crate::error::{Error, Result};
use crate::model::TokenId;
use crate::session::SpecialTokens;

#[derive(Debug, Clone)]
pub struct Vocab {
    pieces: Vec<String>,
    word_initial: Vec<bool>,
    lookup: HashMap<String, TokenId>,
    special: SpecialTokens,
}

const PIECE_LEN: usize = 3;

impl Vocab {
    /// Deterministic inventory of `content_size` pieces.
    pub fn synthetic(content_size: usize) -> Result<Self> {
        if content_size < 2 {
            return Err(Error::Input("need at least two content tokens".into()));
        }
        if content_size > 26 * 26 * 26 {
            return Err(Error::Input("content inventory limited to 17576 pieces".into()));
        }
        let mut pieces = Vec::with_capacity(content_size);
        let mut word_initial = Vec::with_capacity(content_size);
        let mut lookup = HashMap::with_capacity(content_size);
        for id in 0..content_size {
            let letters = [
                b'a' + (id % 26) as u8,
                b'a' + ((id / 26) % 26) as u8,
                b'a' + ((id / 676) % 26) as u8,
            ];
            let piece = String::from_utf8(letters.to_vec()).expect("ascii");
            lookup.insert(piece.clone(), id as TokenId);
            pieces.push(piece);
            word_initial.push(id % 2 == 0);
        }
        Ok(Self {
            pieces,
            word_initial,
            lookup,
            special: SpecialTokens::for_vocab_size(content_size + 2),
        })
    }

    /// The default 128-piece inventory.
    pub fn default_inventory() -> Self {
        Self::synthetic(128).expect("static size")
    }

    pub fn content_size(&self) -> usize {
        self.pieces.len()
    }

    /// Language-model vocabulary: content plus BOS and SEP.
    pub fn lm_vocab_size(&self) -> usize {
        self.content_size() + 2
    }

    /// Acoustic vocabulary: content plus the blank symbol.
    pub fn am_vocab_size(&self) -> usize {
        self.content_size() + 1
    }

    /// CTC blank id in the acoustic vocabulary (the index after the content).
    pub fn blank_id(&self) -> TokenId {
        self.content_size() as TokenId
    }

    pub fn special(&self) -> SpecialTokens {
        self.special
    }

    pub fn piece(&self, id: TokenId) -> Option<&str> {
        self.pieces.get(id as usize).map(|s| s.as_str())
    }

    /// Join content pieces into text; a space is inserted before each
    /// word-initial piece.
    pub fn detokenize(&self, tokens: &[TokenId]) -> Result<String> {
        let mut out = String::new();
        for &t in tokens {
            let piece = self.piece(t).ok_or(Error::Vocab {
                token: t,
                vocab: self.content_size(),
            })?;
            if self.word_initial[t as usize] && !out.is_empty() {
                out.push(' ');
            }
            out.push_str(piece);
        }
        Ok(out)
    }

    /// Inverse of `detokenize` for text over this inventory. Input is
    /// normalized first; words must decompose into whole pieces.
    pub fn tokenize(&self, text: &str) -> Result<Vec<TokenId>> {
        let text = normalize_text(text);
        let mut out = Vec::new();
        for word in text.split_whitespace() {
            if word.len() % PIECE_LEN != 0 {
                return Err(Error::Input(format!(
                    "word {word:?} does not decompose into {PIECE_LEN}-letter pieces"
                )));
            }
            for chunk in word.as_bytes().chunks(PIECE_LEN) {
                let piece = std::str::from_utf8(chunk)
                    .map_err(|_| Error::Input(format!("word {word:?} is not ascii")))?;
                let id = self
                    .lookup
                    .get(piece)
                    .ok_or_else(|| Error::Input(format!("piece {piece:?} not in inventory")))?;
                out.push(*id);
            }
        }
        Ok(out)
    }
}

/// Reference/hypothesis text normalization: lower-case, punctuation stripped
/// except apostrophes, whitespace collapsed, and the space in split
/// contractions removed ("don 't" becomes "don't").
pub fn normalize_text(s: &str) -> String {
    let mut cleaned = String::with_capacity(s.len());
    for c in s.chars() {
        let c = c.to_ascii_lowercase();
        if c.is_ascii_alphanumeric() || c == '\'' {
            cleaned.push(c);
        } else if c.is_whitespace() {
            cleaned.push(' ');
        }
    }
    let mut words: Vec<String> = Vec::new();
    for w in cleaned.split_whitespace() {
        if w.starts_with('\'') {
            if let Some(prev) = words.last_mut() {
                prev.push_str(w);
                continue;
            }
        }
        words.push(w.to_string());
    }
    words.join(" ")
}
