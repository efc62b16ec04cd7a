//! Single binary container format for tensor files.
//!
//! Layout: 8-byte magic `XDCF0001`, a little-endian u64 header length, a
//! JSON header, then a payload of little-endian 32-bit floats. The header's
//! `kind` field distinguishes weight stores from acoustic posteriors; weight
//! payloads hold the named tensors contiguously in schema order.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::decoder::AmPosterior;
use crate::error::{Error, Result};
use crate::model::{weights_schema, Model, ModelConfig, TokenId, WeightStore};
use crate::tensor::Matrix;

const MAGIC: &[u8; 8] = b"XDCF0001";

#[derive(Debug, Serialize, Deserialize)]
struct TensorEntry {
    name: String,
    shape: Vec<usize>,
    dtype: String,
    /// Byte offset from the start of the payload.
    offset: u64,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
enum Header {
    Weights {
        config: ModelConfig,
        tensors: Vec<TensorEntry>,
    },
    Posterior {
        utterance_id: String,
        frames: usize,
        vocab: usize,
        blank_id: TokenId,
    },
}

fn write_container(path: &Path, header: &Header, payload: &[f32]) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    let header_bytes = serde_json::to_vec(header)?;
    w.write_all(MAGIC)?;
    w.write_all(&(header_bytes.len() as u64).to_le_bytes())?;
    w.write_all(&header_bytes)?;
    for &v in payload {
        w.write_all(&v.to_le_bytes())?;
    }
    w.flush()?;
    Ok(())
}

fn read_container(path: &Path) -> Result<(Header, Vec<f32>)> {
    let mut r = BufReader::new(File::open(path)?);
    let mut magic = [0u8; 8];
    r.read_exact(&mut magic)
        .map_err(|_| Error::Format("file too short for magic".into()))?;
    if &magic != MAGIC {
        return Err(Error::Format("bad magic; not a container file".into()));
    }
    let mut len_bytes = [0u8; 8];
    r.read_exact(&mut len_bytes)
        .map_err(|_| Error::Format("truncated header length".into()))?;
    let header_len = u64::from_le_bytes(len_bytes) as usize;
    let mut header_bytes = vec![0u8; header_len];
    r.read_exact(&mut header_bytes)
        .map_err(|_| Error::Format("truncated header".into()))?;
    let header: Header = serde_json::from_slice(&header_bytes)
        .map_err(|e| Error::Format(format!("header: {e}")))?;
    let mut raw = Vec::new();
    r.read_to_end(&mut raw)?;
    if raw.len() % 4 != 0 {
        return Err(Error::Format("payload is not whole f32 words".into()));
    }
    let payload = raw
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
        .collect();
    Ok((header, payload))
}

/// Write a model's configuration and tensors.
pub fn save_weights(path: impl AsRef<Path>, model: &Model) -> Result<()> {
    let mut tensors = Vec::new();
    let mut payload = Vec::new();
    for (name, shape, data) in model.weights.tensors(&model.cfg) {
        tensors.push(TensorEntry {
            name,
            shape,
            dtype: "f32".into(),
            offset: (payload.len() * 4) as u64,
        });
        payload.extend_from_slice(data);
    }
    let header = Header::Weights {
        config: model.cfg.clone(),
        tensors,
    };
    write_container(path.as_ref(), &header, &payload)
}

/// Load and validate a weight container. Errors name the first offending
/// tensor.
pub fn load_weights(path: impl AsRef<Path>) -> Result<Model> {
    let (header, payload) = read_container(path.as_ref())?;
    let (config, tensors) = match header {
        Header::Weights { config, tensors } => (config, tensors),
        Header::Posterior { .. } => {
            return Err(Error::Format("expected a weights container".into()))
        }
    };
    config
        .validate()
        .map_err(|e| Error::Format(format!("header config: {e}")))?;

    let expected = weights_schema(&config);
    if tensors.len() != expected.len() {
        return Err(Error::Format(format!(
            "header lists {} tensors, schema has {}",
            tensors.len(),
            expected.len()
        )));
    }
    let mut named = std::collections::HashMap::with_capacity(tensors.len());
    for entry in &tensors {
        if entry.dtype != "f32" {
            return Err(Error::Format(format!(
                "tensor {}: unsupported dtype {}",
                entry.name, entry.dtype
            )));
        }
        if entry.offset % 4 != 0 {
            return Err(Error::Format(format!(
                "tensor {}: misaligned offset {}",
                entry.name, entry.offset
            )));
        }
        let start = (entry.offset / 4) as usize;
        let len: usize = entry.shape.iter().product();
        if start + len > payload.len() {
            return Err(Error::Format(format!(
                "truncated payload at tensor {}",
                entry.name
            )));
        }
        named.insert(
            entry.name.clone(),
            (entry.shape.clone(), payload[start..start + len].to_vec()),
        );
    }
    let store = WeightStore::from_named(&config, named)?;
    Model::new(config, store)
}

/// Write one utterance's log-softmax posteriors.
pub fn save_posterior(path: impl AsRef<Path>, post: &AmPosterior) -> Result<()> {
    let header = Header::Posterior {
        utterance_id: post.utterance_id.clone(),
        frames: post.frames(),
        vocab: post.vocab(),
        blank_id: post.blank,
    };
    write_container(path.as_ref(), &header, post.log_probs.data())
}

/// Load a posterior container; rows are re-validated to exponentiate-sum to
/// one within 1e-3 (tolerant of storage rounding).
pub fn load_posterior(path: impl AsRef<Path>) -> Result<AmPosterior> {
    let (header, payload) = read_container(path.as_ref())?;
    let (utterance_id, frames, vocab, blank_id) = match header {
        Header::Posterior {
            utterance_id,
            frames,
            vocab,
            blank_id,
        } => (utterance_id, frames, vocab, blank_id),
        Header::Weights { .. } => {
            return Err(Error::Format("expected a posterior container".into()))
        }
    };
    if payload.len() != frames * vocab {
        return Err(Error::Format(format!(
            "posterior {utterance_id}: header says {frames}x{vocab}, payload has {} values",
            payload.len()
        )));
    }
    let post = AmPosterior {
        utterance_id,
        log_probs: Matrix::from_vec(frames, vocab, payload)?,
        blank: blank_id,
    };
    post.validate(1e-3)?;
    Ok(post)
}
