//! Prediction network: token embedding, stacked LSTM, vocabulary projection.
//!
//! Row `u` of the output conditions on the first `u` labels. Row 0 is the start
//! state, fed a zero embedding instead of a dedicated start token.

use serde::{Deserialize, Serialize};

use super::lstm::{
    fill_uniform, lstm_cell_forward, lstm_layer_backward, lstm_layer_forward, LstmLayerCache, LstmWeights,
};
use crate::error::{invalid, shape_err, Result};
use crate::linalg::{gemm_nn, gemm_nt, gemm_tn, matvec_add};
use crate::rng::Rng;
use crate::scalar::Scalar;
use crate::tensor::Tensor;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DecoderConfig {
    pub embed_dim: usize,
    pub num_layers: usize,
    pub hidden_units: usize,
    /// `V + 1`; the embedding table has `V` rows since blank is never an input.
    pub output_dim: usize,
    /// Inverted-dropout rate on the last LSTM output; training only.
    #[serde(default)]
    pub dropout: f64,
}

impl DecoderConfig {
    pub fn validate(&self) -> Result<()> {
        if self.num_layers == 0 || self.hidden_units == 0 || self.embed_dim == 0 {
            return Err(invalid!("decoder needs at least one layer, unit and embedding dimension"));
        }
        if self.output_dim < 2 {
            return Err(invalid!("decoder output must cover at least one label plus blank"));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(invalid!("dropout {} outside [0, 1)", self.dropout));
        }
        Ok(())
    }

    pub fn vocab_size(&self) -> usize {
        self.output_dim - 1
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct DecoderParams<S> {
    pub config: DecoderConfig,
    /// `[V, E]`
    pub embedding: Tensor<S>,
    pub layers: Vec<LstmWeights<S>>,
    /// `[V+1, H]`
    pub proj_w: Tensor<S>,
    /// `[V+1]`
    pub proj_b: Tensor<S>,
}

impl<S: Scalar> DecoderParams<S> {
    pub fn zeros(config: &DecoderConfig) -> Result<Self> {
        config.validate()?;
        let h = config.hidden_units;
        Ok(Self {
            config: config.clone(),
            embedding: Tensor::zeros(&[config.vocab_size(), config.embed_dim]),
            layers: (0..config.num_layers)
                .map(|l| LstmWeights::zeros(if l == 0 { config.embed_dim } else { h }, h))
                .collect(),
            proj_w: Tensor::zeros(&[config.output_dim, h]),
            proj_b: Tensor::zeros(&[config.output_dim]),
        })
    }

    pub fn init(config: &DecoderConfig, rng: &mut Rng) -> Result<Self> {
        let mut p = Self::zeros(config)?;
        fill_uniform(&mut p.embedding, rng);
        let h = config.hidden_units;
        for (l, layer) in p.layers.iter_mut().enumerate() {
            *layer = LstmWeights::init(if l == 0 { config.embed_dim } else { h }, h, rng);
        }
        fill_uniform(&mut p.proj_w, rng);
        Ok(p)
    }

    pub fn zeros_like(&self) -> Self {
        Self::zeros(&self.config).expect("config already validated")
    }

    pub fn tensors(&self) -> Vec<(String, &Tensor<S>)> {
        let mut out = vec![("embedding".to_string(), &self.embedding)];
        for (l, layer) in self.layers.iter().enumerate() {
            for (name, t) in layer.tensors() {
                out.push((format!("layer{l}.{name}"), t));
            }
        }
        out.push(("proj.w".into(), &self.proj_w));
        out.push(("proj.b".into(), &self.proj_b));
        out
    }

    pub fn tensors_mut(&mut self) -> Vec<(String, &mut Tensor<S>)> {
        let mut out = vec![("embedding".to_string(), &mut self.embedding)];
        for (l, layer) in self.layers.iter_mut().enumerate() {
            for (name, t) in layer.tensors_mut() {
                out.push((format!("layer{l}.{name}"), t));
            }
        }
        out.push(("proj.w".into(), &mut self.proj_w));
        out.push(("proj.b".into(), &mut self.proj_b));
        out
    }

    fn embed_sequence(&self, tokens: &[usize]) -> Result<Vec<S>> {
        let e = self.config.embed_dim;
        let v = self.config.vocab_size();
        let mut x = vec![S::zero(); (tokens.len() + 1) * e];
        for (u, &tok) in tokens.iter().enumerate() {
            if tok >= v {
                return Err(invalid!("token {tok} out of range for vocabulary of {v}"));
            }
            x[(u + 1) * e..(u + 2) * e].copy_from_slice(self.embedding.row(tok));
        }
        Ok(x)
    }
}

/// Draws an inverted-dropout mask `[rows, H]` (entries 0 or `1/(1-p)`).
pub fn dropout_mask<S: Scalar>(rows: usize, hidden: usize, rate: f64, rng: &mut Rng) -> Vec<S> {
    let keep = S::of(1.0 / (1.0 - rate));
    (0..rows * hidden).map(|_| if rng.uniform() < rate { S::zero() } else { keep }).collect()
}

#[derive(Clone, Debug)]
pub struct DecoderCache<S> {
    tokens: Vec<usize>,
    layers: Vec<LstmLayerCache<S>>,
    mask: Option<Vec<S>>,
    /// Last-layer output after dropout, the projection input.
    top: Vec<S>,
}

/// Teacher-forced pass over `tokens`, returning `[U+1, V+1]` logits.
pub fn decoder_forward<S: Scalar>(
    params: &DecoderParams<S>,
    tokens: &[usize],
    mask: Option<Vec<S>>,
) -> Result<(Tensor<S>, DecoderCache<S>)> {
    let rows = tokens.len() + 1;
    let h = params.config.hidden_units;
    if let Some(m) = &mask {
        if m.len() != rows * h {
            return Err(shape_err!("dropout mask has {} values, expected {}", m.len(), rows * h));
        }
    }
    let mut x = params.embed_sequence(tokens)?;
    let mut caches = Vec::with_capacity(params.layers.len());
    for layer in &params.layers {
        let cache = lstm_layer_forward(layer, &x, rows)?;
        x = cache.hidden.clone();
        caches.push(cache);
    }
    if let Some(m) = &mask {
        for (v, &k) in x.iter_mut().zip(m) {
            *v *= k;
        }
    }
    let v1 = params.config.output_dim;
    let mut logits = Vec::with_capacity(rows * v1);
    for _ in 0..rows {
        logits.extend_from_slice(params.proj_b.data());
    }
    gemm_nt(rows, v1, h, &x, params.proj_w.data(), S::one(), &mut logits);
    Ok((Tensor::from_vec(&[rows, v1], logits)?, DecoderCache { tokens: tokens.to_vec(), layers: caches, mask, top: x }))
}

pub fn decoder_backward<S: Scalar>(
    params: &DecoderParams<S>,
    cache: &DecoderCache<S>,
    d_logits: &Tensor<S>,
    grads: &mut DecoderParams<S>,
) -> Result<()> {
    let rows = cache.tokens.len() + 1;
    let h = params.config.hidden_units;
    let v1 = params.config.output_dim;
    if d_logits.shape() != [rows, v1] {
        return Err(shape_err!("decoder gradient shape {:?} != [{rows}, {v1}]", d_logits.shape()));
    }
    gemm_tn(v1, h, rows, d_logits.data(), &cache.top, S::one(), grads.proj_w.data_mut());
    for row in d_logits.data().chunks_exact(v1) {
        for (b, &g) in grads.proj_b.data_mut().iter_mut().zip(row) {
            *b += g;
        }
    }
    let mut d_hidden = vec![S::zero(); rows * h];
    gemm_nn(rows, h, v1, d_logits.data(), params.proj_w.data(), S::zero(), &mut d_hidden);
    if let Some(m) = &cache.mask {
        for (d, &k) in d_hidden.iter_mut().zip(m) {
            *d *= k;
        }
    }
    for l in (0..params.layers.len()).rev() {
        if let Some(d) = lstm_layer_backward(&params.layers[l], &cache.layers[l], &d_hidden, &mut grads.layers[l], true)
        {
            d_hidden = d;
        }
    }
    let e = params.config.embed_dim;
    for (u, &tok) in cache.tokens.iter().enumerate() {
        let src = &d_hidden[(u + 1) * e..(u + 2) * e];
        for (g, &d) in grads.embedding.row_mut(tok).iter_mut().zip(src) {
            *g += d;
        }
    }
    Ok(())
}

/// Recurrent state of the prediction network during inference.
#[derive(Clone, Debug, PartialEq)]
pub struct DecoderState<S> {
    h: Vec<Vec<S>>,
    c: Vec<Vec<S>>,
}

impl<S: Scalar> DecoderState<S> {
    pub fn initial(params: &DecoderParams<S>) -> Self {
        let h = params.config.hidden_units;
        let n = params.layers.len();
        Self { h: vec![vec![S::zero(); h]; n], c: vec![vec![S::zero(); h]; n] }
    }
}

/// One inference step: feeds `token` (`None` = start symbol) and returns the
/// `V+1` logits with the advanced state.
pub fn decoder_step<S: Scalar>(
    params: &DecoderParams<S>,
    state: &DecoderState<S>,
    token: Option<usize>,
) -> Result<(Vec<S>, DecoderState<S>)> {
    let e = params.config.embed_dim;
    let mut x = match token {
        None => vec![S::zero(); e],
        Some(t) if t < params.config.vocab_size() => params.embedding.row(t).to_vec(),
        Some(t) => return Err(invalid!("token {t} out of range")),
    };
    let mut next = state.clone();
    for (l, layer) in params.layers.iter().enumerate() {
        let (h, c, _) = lstm_cell_forward(&x, &state.h[l], &state.c[l], layer)?;
        next.h[l] = h.clone();
        next.c[l] = c;
        x = h;
    }
    let mut logits = params.proj_b.data().to_vec();
    matvec_add(params.proj_w.data(), params.config.hidden_units, &x, &mut logits);
    Ok((logits, next))
}
