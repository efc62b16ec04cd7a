//! Named-tensor weight container and deterministic weight fabrication.

use crate::error::{Error, Result};
use crate::rng::SplitMix64;
use crate::tensor::Matrix;

use super::ModelConfig;

/// Layer-norm gain and bias.
#[derive(Debug, Clone)]
pub struct NormParams {
    pub gain: Vec<f32>,
    pub bias: Vec<f32>,
}

impl NormParams {
    pub fn identity(dim: usize) -> Self {
        Self {
            gain: vec![1.0; dim],
            bias: vec![0.0; dim],
        }
    }
}

/// Two-layer MLP mapping a signed relative distance to one additive bias
/// value per query head. Shared by every attention layer.
#[derive(Debug, Clone)]
pub struct PositionBias {
    /// Scalar-to-hidden weights, one per hidden unit.
    pub w1: Vec<f32>,
    pub b1: Vec<f32>,
    /// hidden x n_query_heads.
    pub w2: Matrix,
    pub b2: Vec<f32>,
}

impl PositionBias {
    /// Bias per query head for a relative distance `j - i` (non-positive for
    /// causal attention). Purely a function of the distance.
    pub fn eval(&self, distance: f32, out: &mut [f32]) {
        debug_assert_eq!(out.len(), self.b2.len());
        out.copy_from_slice(&self.b2);
        for (j, (&w, &b)) in self.w1.iter().zip(&self.b1).enumerate() {
            let h = ((distance as f64 * w as f64 + b as f64).tanh()) as f32;
            let row = self.w2.row(j);
            for (o, &w2) in out.iter_mut().zip(row) {
                *o += h * w2;
            }
        }
    }
}

/// Weights of one transformer layer. Keys and values are projected with a
/// single shared head (multi-query attention), so `wk`/`wv` map to
/// `head_dim` columns rather than `d_model`.
#[derive(Debug, Clone)]
pub struct LayerWeights {
    pub attn_norm: NormParams,
    pub wq: Matrix,
    pub wk: Matrix,
    pub wv: Matrix,
    pub wo: Matrix,
    /// Learned similarity gain applied to the normalized key-query products.
    pub g: f32,
    pub ffn_norm: NormParams,
    pub ffn_gate: Matrix,
    pub ffn_up: Matrix,
    pub ffn_down: Matrix,
}

/// All model parameters, addressable by tensor name for serialization.
#[derive(Debug, Clone)]
pub struct WeightStore {
    pub embed: Matrix,
    pub pos_bias: PositionBias,
    pub layers: Vec<LayerWeights>,
    pub final_norm: NormParams,
    pub output: Matrix,
    /// Per-vocabulary-entry scale for initial-token prediction.
    pub init_gamma: Vec<f32>,
    /// Per-vocabulary-entry offset for initial-token prediction.
    pub init_beta: Vec<f32>,
}

/// The canonical tensor schema implied by a configuration: names and shapes
/// in serialization order.
pub fn schema(cfg: &ModelConfig) -> Vec<(String, Vec<usize>)> {
    let d = cfg.d_model;
    let hd = cfg.head_dim();
    let f = cfg.ffn_expansion * d;
    let v = cfg.vocab_size;
    let h = cfg.pos_bias_hidden;
    let mut out = vec![
        ("embed".to_string(), vec![v, d]),
        ("pos_bias.w1".to_string(), vec![h]),
        ("pos_bias.b1".to_string(), vec![h]),
        ("pos_bias.w2".to_string(), vec![h, cfg.n_query_heads]),
        ("pos_bias.b2".to_string(), vec![cfg.n_query_heads]),
    ];
    for i in 0..cfg.n_layers {
        let p = format!("layers.{i}");
        out.push((format!("{p}.attn_norm.gain"), vec![d]));
        out.push((format!("{p}.attn_norm.bias"), vec![d]));
        out.push((format!("{p}.attn.wq"), vec![d, d]));
        out.push((format!("{p}.attn.wk"), vec![d, hd]));
        out.push((format!("{p}.attn.wv"), vec![d, hd]));
        out.push((format!("{p}.attn.wo"), vec![d, d]));
        out.push((format!("{p}.attn.g"), vec![1]));
        out.push((format!("{p}.ffn_norm.gain"), vec![d]));
        out.push((format!("{p}.ffn_norm.bias"), vec![d]));
        out.push((format!("{p}.ffn.gate"), vec![d, f]));
        out.push((format!("{p}.ffn.up"), vec![d, f]));
        out.push((format!("{p}.ffn.down"), vec![f, d]));
    }
    out.push(("final_norm.gain".to_string(), vec![d]));
    out.push(("final_norm.bias".to_string(), vec![d]));
    out.push(("output".to_string(), vec![d, v]));
    out.push(("initial.gamma".to_string(), vec![v]));
    out.push(("initial.beta".to_string(), vec![v]));
    out
}

impl WeightStore {
    /// All-zero store. Produces uniform output distributions; useful for
    /// protocol tests.
    pub fn zeros(cfg: &ModelConfig) -> Self {
        let d = cfg.d_model;
        let hd = cfg.head_dim();
        let f = cfg.ffn_expansion * d;
        let v = cfg.vocab_size;
        let zero_norm = || NormParams {
            gain: vec![0.0; d],
            bias: vec![0.0; d],
        };
        Self {
            embed: Matrix::zeros(v, d),
            pos_bias: PositionBias {
                w1: vec![0.0; cfg.pos_bias_hidden],
                b1: vec![0.0; cfg.pos_bias_hidden],
                w2: Matrix::zeros(cfg.pos_bias_hidden, cfg.n_query_heads),
                b2: vec![0.0; cfg.n_query_heads],
            },
            layers: (0..cfg.n_layers)
                .map(|_| LayerWeights {
                    attn_norm: zero_norm(),
                    wq: Matrix::zeros(d, d),
                    wk: Matrix::zeros(d, hd),
                    wv: Matrix::zeros(d, hd),
                    wo: Matrix::zeros(d, d),
                    g: 0.0,
                    ffn_norm: zero_norm(),
                    ffn_gate: Matrix::zeros(d, f),
                    ffn_up: Matrix::zeros(d, f),
                    ffn_down: Matrix::zeros(f, d),
                })
                .collect(),
            final_norm: zero_norm(),
            output: Matrix::zeros(d, v),
            init_gamma: vec![0.0; v],
            init_beta: vec![0.0; v],
        }
    }

    /// Check that every tensor has the exact shape the configuration implies.
    pub fn validate(&self, cfg: &ModelConfig) -> Result<()> {
        if self.layers.len() != cfg.n_layers {
            return Err(Error::Schema(format!(
                "store has {} layers, config expects {}",
                self.layers.len(),
                cfg.n_layers
            )));
        }
        for (name, shape, data) in self.tensors(cfg) {
            let expect: usize = shape.iter().product();
            if data.len() != expect {
                return Err(Error::Schema(format!(
                    "tensor {name} has {} values, expected {:?}",
                    data.len(),
                    shape
                )));
            }
        }
        // Matrix column counts cannot be derived from flat lengths alone.
        let d = cfg.d_model;
        let hd = cfg.head_dim();
        if self.embed.cols() != d || self.embed.rows() != cfg.vocab_size {
            return Err(Error::Schema("tensor embed has wrong shape".into()));
        }
        for (i, l) in self.layers.iter().enumerate() {
            if l.wk.cols() != hd || l.wv.cols() != hd {
                return Err(Error::Schema(format!(
                    "layers.{i}: keys/values must use a single head of width {hd}"
                )));
            }
            if l.wq.cols() != d || l.wo.cols() != d {
                return Err(Error::Schema(format!("layers.{i}: bad projection shape")));
            }
        }
        if self.output.rows() != d || self.output.cols() != cfg.vocab_size {
            return Err(Error::Schema("tensor output has wrong shape".into()));
        }
        Ok(())
    }

    /// Named views over every tensor, in schema order.
    pub fn tensors<'a>(&'a self, cfg: &ModelConfig) -> Vec<(String, Vec<usize>, &'a [f32])> {
        let mut out: Vec<(String, Vec<usize>, &[f32])> = Vec::new();
        let d = cfg.d_model;
        let hd = cfg.head_dim();
        let f = cfg.ffn_expansion * d;
        let v = cfg.vocab_size;
        out.push(("embed".into(), vec![v, d], self.embed.data()));
        out.push((
            "pos_bias.w1".into(),
            vec![cfg.pos_bias_hidden],
            &self.pos_bias.w1,
        ));
        out.push((
            "pos_bias.b1".into(),
            vec![cfg.pos_bias_hidden],
            &self.pos_bias.b1,
        ));
        out.push((
            "pos_bias.w2".into(),
            vec![cfg.pos_bias_hidden, cfg.n_query_heads],
            self.pos_bias.w2.data(),
        ));
        out.push((
            "pos_bias.b2".into(),
            vec![cfg.n_query_heads],
            &self.pos_bias.b2,
        ));
        for (i, l) in self.layers.iter().enumerate() {
            let p = format!("layers.{i}");
            out.push((format!("{p}.attn_norm.gain"), vec![d], &l.attn_norm.gain));
            out.push((format!("{p}.attn_norm.bias"), vec![d], &l.attn_norm.bias));
            out.push((format!("{p}.attn.wq"), vec![d, d], l.wq.data()));
            out.push((format!("{p}.attn.wk"), vec![d, hd], l.wk.data()));
            out.push((format!("{p}.attn.wv"), vec![d, hd], l.wv.data()));
            out.push((format!("{p}.attn.wo"), vec![d, d], l.wo.data()));
            out.push((format!("{p}.attn.g"), vec![1], std::slice::from_ref(&l.g)));
            out.push((format!("{p}.ffn_norm.gain"), vec![d], &l.ffn_norm.gain));
            out.push((format!("{p}.ffn_norm.bias"), vec![d], &l.ffn_norm.bias));
            out.push((format!("{p}.ffn.gate"), vec![d, f], l.ffn_gate.data()));
            out.push((format!("{p}.ffn.up"), vec![d, f], l.ffn_up.data()));
            out.push((format!("{p}.ffn.down"), vec![f, d], l.ffn_down.data()));
        }
        out.push(("final_norm.gain".into(), vec![d], &self.final_norm.gain));
        out.push(("final_norm.bias".into(), vec![d], &self.final_norm.bias));
        out.push(("output".into(), vec![d, v], self.output.data()));
        out.push(("initial.gamma".into(), vec![v], &self.init_gamma));
        out.push(("initial.beta".into(), vec![v], &self.init_beta));
        out
    }

    /// Build a store from named flat tensors (e.g. parsed from a weight
    /// file). Every schema tensor must be present with its exact shape;
    /// unknown names are rejected.
    pub fn from_named(
        cfg: &ModelConfig,
        mut named: std::collections::HashMap<String, (Vec<usize>, Vec<f32>)>,
    ) -> Result<Self> {
        let mut take_vec = |name: &str, shape: &[usize]| -> Result<Vec<f32>> {
            let (got_shape, data) = named
                .remove(name)
                .ok_or_else(|| Error::Format(format!("missing tensor {name}")))?;
            if got_shape != shape {
                return Err(Error::Format(format!(
                    "tensor {name}: shape {got_shape:?}, expected {shape:?}"
                )));
            }
            Ok(data)
        };
        let d = cfg.d_model;
        let hd = cfg.head_dim();
        let f = cfg.ffn_expansion * d;
        let v = cfg.vocab_size;
        let h = cfg.pos_bias_hidden;
        let heads = cfg.n_query_heads;

        let embed = Matrix::from_vec(v, d, take_vec("embed", &[v, d])?)?;
        let pos_bias = PositionBias {
            w1: take_vec("pos_bias.w1", &[h])?,
            b1: take_vec("pos_bias.b1", &[h])?,
            w2: Matrix::from_vec(h, heads, take_vec("pos_bias.w2", &[h, heads])?)?,
            b2: take_vec("pos_bias.b2", &[heads])?,
        };
        let mut layers = Vec::with_capacity(cfg.n_layers);
        for i in 0..cfg.n_layers {
            let p = format!("layers.{i}");
            layers.push(LayerWeights {
                attn_norm: NormParams {
                    gain: take_vec(&format!("{p}.attn_norm.gain"), &[d])?,
                    bias: take_vec(&format!("{p}.attn_norm.bias"), &[d])?,
                },
                wq: Matrix::from_vec(d, d, take_vec(&format!("{p}.attn.wq"), &[d, d])?)?,
                wk: Matrix::from_vec(d, hd, take_vec(&format!("{p}.attn.wk"), &[d, hd])?)?,
                wv: Matrix::from_vec(d, hd, take_vec(&format!("{p}.attn.wv"), &[d, hd])?)?,
                wo: Matrix::from_vec(d, d, take_vec(&format!("{p}.attn.wo"), &[d, d])?)?,
                g: take_vec(&format!("{p}.attn.g"), &[1])?[0],
                ffn_norm: NormParams {
                    gain: take_vec(&format!("{p}.ffn_norm.gain"), &[d])?,
                    bias: take_vec(&format!("{p}.ffn_norm.bias"), &[d])?,
                },
                ffn_gate: Matrix::from_vec(d, f, take_vec(&format!("{p}.ffn.gate"), &[d, f])?)?,
                ffn_up: Matrix::from_vec(d, f, take_vec(&format!("{p}.ffn.up"), &[d, f])?)?,
                ffn_down: Matrix::from_vec(f, d, take_vec(&format!("{p}.ffn.down"), &[f, d])?)?,
            });
        }
        let store = WeightStore {
            embed,
            pos_bias,
            layers,
            final_norm: NormParams {
                gain: take_vec("final_norm.gain", &[d])?,
                bias: take_vec("final_norm.bias", &[d])?,
            },
            output: Matrix::from_vec(d, v, take_vec("output", &[d, v])?)?,
            init_gamma: take_vec("initial.gamma", &[v])?,
            init_beta: take_vec("initial.beta", &[v])?,
        };
        if let Some(name) = named.keys().next() {
            return Err(Error::Format(format!("unexpected tensor {name}")));
        }
        store.validate(cfg)?;
        Ok(store)
    }
}

/// Fabricate a deterministic weight store.
///
/// Generator: a SplitMix64 stream seeded with `seed`, consumed in schema
/// order. Projection, embedding, position-bias and output tensors are drawn
/// from an Irwin-Hall approximate normal scaled by `1/sqrt(d_model)`.
/// Layer norms start at identity (gain 1, bias 0), the similarity gain `g`
/// at 8.0, `initial.gamma` centered at 1 and `initial.beta` at 0, mirroring
/// where training would plausibly leave them. Same seed and configuration
/// give a bit-identical store on every platform.
pub fn generate_weights(seed: u64, cfg: &ModelConfig) -> WeightStore {
    let mut rng = SplitMix64::new(seed);
    let scale = 1.0 / (cfg.d_model as f64).sqrt();
    let mut store = WeightStore::zeros(cfg);

    let fill = |rng: &mut SplitMix64, data: &mut [f32]| {
        for v in data {
            *v = (rng.next_normal() * scale) as f32;
        }
    };

    fill(&mut rng, store.embed.data_mut());
    fill(&mut rng, &mut store.pos_bias.w1);
    fill(&mut rng, &mut store.pos_bias.b1);
    fill(&mut rng, store.pos_bias.w2.data_mut());
    fill(&mut rng, &mut store.pos_bias.b2);
    for layer in &mut store.layers {
        layer.attn_norm = NormParams::identity(cfg.d_model);
        fill(&mut rng, layer.wq.data_mut());
        fill(&mut rng, layer.wk.data_mut());
        fill(&mut rng, layer.wv.data_mut());
        fill(&mut rng, layer.wo.data_mut());
        layer.g = 8.0;
        layer.ffn_norm = NormParams::identity(cfg.d_model);
        fill(&mut rng, layer.ffn_gate.data_mut());
        fill(&mut rng, layer.ffn_up.data_mut());
        fill(&mut rng, layer.ffn_down.data_mut());
    }
    store.final_norm = NormParams::identity(cfg.d_model);
    fill(&mut rng, store.output.data_mut());
    for v in &mut store.init_gamma {
        *v = (1.0 + rng.next_normal() * scale) as f32;
    }
    fill(&mut rng, &mut store.init_beta);
    store
}
