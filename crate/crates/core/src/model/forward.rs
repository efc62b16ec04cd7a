//! Forward-pass kernels: layer norm, key-query-normalized multi-query
//! attention with a relative position bias, and the SwiGLU feed-forward.

use crate::error::{Error, Result};
use crate::tensor::{l2_normalize_rows, matmul, matmul_transb, softmax_rows, Matrix};

use super::{LayerWeights, Model, ModelConfig, PositionBias, TokenId};

/// Cached attention keys and values for one layer. Keys are stored already
/// L2-normalized, so continuing a sequence never re-touches old positions.
#[derive(Debug, Clone)]
pub struct LayerKv {
    pub keys: Matrix,
    pub values: Matrix,
}

impl LayerKv {
    pub fn empty(head_dim: usize) -> Self {
        Self {
            keys: Matrix::zeros(0, head_dim),
            values: Matrix::zeros(0, head_dim),
        }
    }

    pub fn len(&self) -> usize {
        self.keys.rows()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

pub fn layer_norm(x: &Matrix, p: &super::NormParams, eps: f32) -> Matrix {
    let mut out = x.clone();
    let d = x.cols();
    for i in 0..x.rows() {
        let row = out.row_mut(i);
        let mean = row.iter().map(|&v| v as f64).sum::<f64>() / d as f64;
        let var = row
            .iter()
            .map(|&v| {
                let c = v as f64 - mean;
                c * c
            })
            .sum::<f64>()
            / d as f64;
        let inv = 1.0 / (var + eps as f64).sqrt();
        for (j, v) in row.iter_mut().enumerate() {
            *v = (((*v as f64 - mean) * inv) * p.gain[j] as f64 + p.bias[j] as f64) as f32;
        }
    }
    out
}

fn silu(x: f32) -> f32 {
    let xd = x as f64;
    (xd / (1.0 + (-xd).exp())) as f32
}

/// Gated feed-forward: `down(silu(x * gate) ⊙ (x * up))`.
pub fn swiglu_ffn(x: &Matrix, layer: &LayerWeights) -> Result<Matrix> {
    let mut gated = matmul(x, &layer.ffn_gate)?;
    let up = matmul(x, &layer.ffn_up)?;
    for (g, &u) in gated.data_mut().iter_mut().zip(up.data()) {
        *g = silu(*g) * u;
    }
    matmul(&gated, &layer.ffn_down)
}

/// Additive bias per (distance, head), for integer distances `0..=max_dist`
/// between a query and an earlier key. Row `d` holds the MLP output for
/// relative distance `-(d)`.
pub fn bias_table(pb: &PositionBias, n_heads: usize, max_dist: usize) -> Matrix {
    let mut table = Matrix::zeros(max_dist + 1, n_heads);
    for d in 0..=max_dist {
        pb.eval(-(d as f32), table.row_mut(d));
    }
    table
}

/// One attention sub-layer over pre-normalized input `x`, without the
/// residual connection. Queries are split into heads and L2-normalized;
/// the single shared key/value head is read through the optional cache.
pub fn attention_layer(
    x: &Matrix,
    layer: &LayerWeights,
    bias: &PositionBias,
    cache: Option<&LayerKv>,
    cfg: &ModelConfig,
) -> Result<Matrix> {
    let t_old = cache.map(|c| c.len()).unwrap_or(0);
    if x.rows() == 0 {
        return Err(Error::Input("attention over an empty chunk".into()));
    }
    let table = bias_table(&bias.clone(), cfg.n_query_heads, t_old + x.rows() - 1);
    attention_with_kv(x, layer, &table, cache, cfg).map(|(out, _)| out)
}

/// Attention plus the newly produced key/value rows (normalized keys), for
/// callers that maintain caches.
pub(super) fn attention_with_kv(
    x: &Matrix,
    layer: &LayerWeights,
    table: &Matrix,
    cache: Option<&LayerKv>,
    cfg: &ModelConfig,
) -> Result<(Matrix, LayerKv)> {
    let hd = cfg.head_dim();
    if let Some(c) = cache {
        if c.keys.cols() != hd || c.values.cols() != hd || c.keys.rows() != c.values.rows() {
            return Err(Error::State("cache shape does not match model".into()));
        }
    }
    let t_new = x.rows();
    let t_old = cache.map(|c| c.len()).unwrap_or(0);
    let t_total = t_old + t_new;

    let q = matmul(x, &layer.wq)?;
    let k_new = l2_normalize_rows(&matmul(x, &layer.wk)?, cfg.eps_norm);
    let v_new = matmul(x, &layer.wv)?;

    let (k_full, v_full) = match cache {
        Some(c) => {
            let mut k = c.keys.clone();
            k.append_rows(&k_new);
            let mut v = c.values.clone();
            v.append_rows(&v_new);
            (k, v)
        }
        None => (k_new.clone(), v_new.clone()),
    };

    let g = layer.g;
    let mut concat = Matrix::zeros(t_new, cfg.d_model);
    for h in 0..cfg.n_query_heads {
        let qh = l2_normalize_rows(&q.col_block(h * hd, hd), cfg.eps_norm);
        let mut scores = matmul_transb(&qh, &k_full)?;
        for i in 0..t_new {
            let abs_pos = t_old + i;
            let row = scores.row_mut(i);
            for (j, s) in row.iter_mut().enumerate().take(t_total) {
                if j > abs_pos {
                    *s = f32::NEG_INFINITY;
                } else {
                    *s = g * *s + table.at(abs_pos - j, h);
                }
            }
        }
        let probs = softmax_rows(&scores)?;
        let head_out = matmul(&probs, &v_full)?;
        for i in 0..t_new {
            concat.row_mut(i)[h * hd..(h + 1) * hd].copy_from_slice(head_out.row(i));
        }
    }
    let out = matmul(&concat, &layer.wo)?;
    Ok((
        out,
        LayerKv {
            keys: k_new,
            values: v_new,
        },
    ))
}

/// Shared forward driver. With `cache = None` this is the full-sequence
/// pass; with a cache it continues the sequence, producing logits for the
/// new tokens only.
pub(super) fn forward(
    model: &Model,
    tokens: &[TokenId],
    cache: Option<&[LayerKv]>,
) -> Result<(Matrix, Vec<LayerKv>)> {
    let cfg = &model.cfg;
    let w = &model.weights;
    if tokens.is_empty() {
        return Err(Error::Input("empty token sequence".into()));
    }
    for &t in tokens {
        if t as usize >= cfg.vocab_size {
            return Err(Error::Vocab {
                token: t,
                vocab: cfg.vocab_size,
            });
        }
    }
    if let Some(c) = cache {
        if c.len() != cfg.n_layers {
            return Err(Error::State(format!(
                "cache has {} layers, model has {}",
                c.len(),
                cfg.n_layers
            )));
        }
    }
    let t_old = cache.map(|c| c.first().map(|l| l.len()).unwrap_or(0)).unwrap_or(0);

    let mut x = Matrix::zeros(tokens.len(), cfg.d_model);
    for (i, &t) in tokens.iter().enumerate() {
        x.row_mut(i).copy_from_slice(w.embed.row(t as usize));
    }

    let table = bias_table(&w.pos_bias, cfg.n_query_heads, t_old + tokens.len() - 1);
    let mut new_kv = Vec::with_capacity(cfg.n_layers);
    for (li, layer) in w.layers.iter().enumerate() {
        let layer_cache = cache.map(|c| &c[li]);
        let h = layer_norm(&x, &layer.attn_norm, cfg.eps_norm);
        let (attn, kv) = attention_with_kv(&h, layer, &table, layer_cache, cfg)?;
        x.add_assign(&attn);
        let h2 = layer_norm(&x, &layer.ffn_norm, cfg.eps_norm);
        let ffn = swiglu_ffn(&h2, layer)?;
        x.add_assign(&ffn);
        new_kv.push(kv);
    }
    let h = layer_norm(&x, &w.final_norm, cfg.eps_norm);
    let logits = matmul(&h, &w.output)?;
    Ok((logits, new_kv))
}
