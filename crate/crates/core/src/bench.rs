//! Micro-benchmarks for the inference adaptions: multi-query vs multi-head
//! attention iteration time, and cache memory accounting.
//!
//! The multi-head reference keeps one key/value buffer per query head,
//! populated by replicating the shared projection, so it computes exactly
//! the same function while paying the full per-head projection, append and
//! bandwidth cost. Both variants run through the same single-token stepper
//! to keep the timing comparison honest.

use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{bias_table, layer_norm, swiglu_ffn, Model, TokenId};
use crate::tensor::{l2_normalize_rows, matmul, Matrix};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AttentionVariant {
    MultiQuery,
    MultiHead,
}

impl AttentionVariant {
    pub fn label(&self) -> &'static str {
        match self {
            AttentionVariant::MultiQuery => "multiquery",
            AttentionVariant::MultiHead => "multihead",
        }
    }

    fn kv_heads(&self, n_query_heads: usize) -> usize {
        match self {
            AttentionVariant::MultiQuery => 1,
            AttentionVariant::MultiHead => n_query_heads,
        }
    }
}

/// Analytic cache cost: two f32 tensors of `head_dim` per kv head, per
/// token, per layer.
pub fn cache_bytes_per_token_per_layer(model: &Model, variant: AttentionVariant) -> usize {
    let kv = variant.kv_heads(model.cfg.n_query_heads);
    2 * kv * model.cfg.head_dim() * std::mem::size_of::<f32>()
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct BenchResult {
    pub label: String,
    pub batch: usize,
    pub cache_len: usize,
    pub iterations: usize,
    pub mean_s: f64,
    pub std_s: f64,
    /// Median iteration time; robust against scheduler-noise outliers and
    /// the right statistic for cross-variant comparisons.
    pub median_s: f64,
    pub cache_bytes_per_token_per_layer: usize,
}

impl BenchResult {
    pub fn to_csv(&self) -> String {
        format!(
            "label,batch,cache_len,iterations,mean_s,std_s,median_s,cache_bytes_per_token_per_layer\n{},{},{},{},{},{},{},{}\n",
            self.label,
            self.batch,
            self.cache_len,
            self.iterations,
            self.mean_s,
            self.std_s,
            self.median_s,
            self.cache_bytes_per_token_per_layer
        )
    }
}

#[derive(Clone)]
struct KvBuf {
    keys: Matrix,
    values: Matrix,
}

/// One sequence's caches: `[layer][kv_head]`.
#[derive(Clone)]
pub struct StepState {
    layers: Vec<Vec<KvBuf>>,
    len: usize,
}

impl StepState {
    pub fn new(model: &Model, variant: AttentionVariant) -> Self {
        let kv = variant.kv_heads(model.cfg.n_query_heads);
        let hd = model.cfg.head_dim();
        Self {
            layers: (0..model.cfg.n_layers)
                .map(|_| {
                    (0..kv)
                        .map(|_| KvBuf {
                            keys: Matrix::zeros(0, hd),
                            values: Matrix::zeros(0, hd),
                        })
                        .collect()
                })
                .collect(),
            len: 0,
        }
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    fn trim(&mut self, keep: usize) {
        for layer in &mut self.layers {
            for buf in layer.iter_mut() {
                buf.keys.truncate_rows(keep);
                buf.values.truncate_rows(keep);
            }
        }
        self.len = self.len.min(keep);
    }
}

/// Advance one token through every layer, appending to the caches and
/// returning the next-token logits.
pub fn step_token(model: &Model, variant: AttentionVariant, state: &mut StepState, token: TokenId) -> Result<Vec<f32>> {
    let cfg = &model.cfg;
    let w = &model.weights;
    if token as usize >= cfg.vocab_size {
        return Err(Error::Vocab {
            token,
            vocab: cfg.vocab_size,
        });
    }
    let hd = cfg.head_dim();
    let pos = state.len;
    let table = bias_table(&w.pos_bias, cfg.n_query_heads, pos);

    let mut x = Matrix::zeros(1, cfg.d_model);
    x.row_mut(0).copy_from_slice(w.embed.row(token as usize));

    for (li, layer) in w.layers.iter().enumerate() {
        let h = layer_norm(&x, &layer.attn_norm, cfg.eps_norm);
        let q = matmul(&h, &layer.wq)?;
        let bufs = &mut state.layers[li];
        // Project (and for the multi-head layout, re-project per head) the
        // shared key/value row, then append to each head's cache.
        for buf in bufs.iter_mut() {
            let k_new = l2_normalize_rows(&matmul(&h, &layer.wk)?, cfg.eps_norm);
            let v_new = matmul(&h, &layer.wv)?;
            buf.keys.append_rows(&k_new);
            buf.values.append_rows(&v_new);
        }
        let t_total = pos + 1;
        let mut concat = Matrix::zeros(1, cfg.d_model);
        for head in 0..cfg.n_query_heads {
            let kv = match variant {
                AttentionVariant::MultiQuery => &bufs[0],
                AttentionVariant::MultiHead => &bufs[head],
            };
            let qh = l2_normalize_rows(&q.col_block(head * hd, hd), cfg.eps_norm);
            let qrow = qh.row(0);
            let mut scores = Vec::with_capacity(t_total);
            for j in 0..t_total {
                let krow = kv.keys.row(j);
                let mut dot = 0.0f64;
                for d in 0..hd {
                    dot += qrow[d] as f64 * krow[d] as f64;
                }
                scores.push(layer.g as f64 * dot + table.at(pos - j, head) as f64);
            }
            let max = scores.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let mut z = 0.0f64;
            for s in scores.iter_mut() {
                *s = (*s - max).exp();
                z += *s;
            }
            let out = &mut concat.row_mut(0)[head * hd..(head + 1) * hd];
            for (j, s) in scores.iter().enumerate() {
                let weight = (s / z) as f32;
                let vrow = kv.values.row(j);
                for d in 0..hd {
                    out[d] += weight * vrow[d];
                }
            }
        }
        let attn = matmul(&concat, &layer.wo)?;
        x.add_assign(&attn);
        let h2 = layer_norm(&x, &layer.ffn_norm, cfg.eps_norm);
        let ffn = swiglu_ffn(&h2, layer)?;
        x.add_assign(&ffn);
    }
    state.len = pos + 1;
    let h = layer_norm(&x, &w.final_norm, cfg.eps_norm);
    let logits = matmul(&h, &w.output)?;
    Ok(logits.row(0).to_vec())
}

/// Steady-state single-token iteration time at a given batch size and cache
/// length. Setup (filling the caches) is excluded; each timed iteration
/// advances every batch member by one token, and caches are trimmed back
/// between iterations so every measurement sees the same history size.
pub fn bench_incremental(
    model: &Model,
    variant: AttentionVariant,
    batch: usize,
    cache_len: usize,
    iterations: usize,
) -> Result<BenchResult> {
    if iterations < 10 {
        return Err(Error::Input("need at least 10 iterations".into()));
    }
    if batch == 0 || cache_len == 0 {
        return Err(Error::Input("batch and cache must be positive".into()));
    }
    let content = model.cfg.content_size() as TokenId;
    // Fill one cache and clone it per batch member; the steady-state cost
    // being measured only depends on cache size and layout.
    let mut template = StepState::new(model, variant);
    for t in 0..cache_len {
        step_token(model, variant, &mut template, (t % content as usize) as TokenId)?;
    }
    let mut states: Vec<StepState> = (0..batch).map(|_| template.clone()).collect();

    // Two untimed warmup sweeps touch every page before measurement.
    for it in 0..2usize {
        let tok = (it % content as usize) as TokenId;
        for state in states.iter_mut() {
            step_token(model, variant, state, tok)?;
            state.trim(cache_len);
        }
    }

    let mut times = Vec::with_capacity(iterations);
    for it in 0..iterations {
        let tok = (it % content as usize) as TokenId;
        let start = Instant::now();
        for state in states.iter_mut() {
            step_token(model, variant, state, tok)?;
        }
        times.push(start.elapsed().as_secs_f64());
        for state in states.iter_mut() {
            state.trim(cache_len);
        }
    }
    let mean = times.iter().sum::<f64>() / times.len() as f64;
    let var = times.iter().map(|t| (t - mean) * (t - mean)).sum::<f64>() / times.len() as f64;
    let median = {
        let mut sorted = times.clone();
        sorted.sort_by(f64::total_cmp);
        sorted[sorted.len() / 2]
    };
    Ok(BenchResult {
        label: variant.label().to_string(),
        batch,
        cache_len,
        iterations,
        mean_s: mean,
        std_s: var.sqrt(),
        median_s: median,
        cache_bytes_per_token_per_layer: cache_bytes_per_token_per_layer(model, variant),
    })
}
