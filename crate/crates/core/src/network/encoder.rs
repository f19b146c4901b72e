//! Stacked-LSTM acoustic encoder with optional frame-stacking time reduction
//! and a vocabulary-sized output projection.

use serde::{Deserialize, Serialize};

use super::lstm::{fill_uniform, lstm_layer_backward, lstm_layer_forward, LstmLayerCache, LstmWeights};
use crate::error::{invalid, shape_err, Result};
use crate::linalg::{gemm_nn, gemm_nt, gemm_tn};
use crate::rng::Rng;
use crate::scalar::Scalar;
use crate::tensor::Tensor;

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct EncoderConfig {
    pub num_layers: usize,
    pub hidden_units: usize,
    pub input_dim: usize,
    /// Reduction is applied to the output of this many LSTM layers
    /// (1-based; `Some(2)` reduces between the second and third layer).
    pub time_reduction_after_layer: Option<usize>,
    pub time_reduction_factor: usize,
    /// `V + 1`
    pub output_dim: usize,
}

impl EncoderConfig {
    pub fn validate(&self) -> Result<()> {
        if self.num_layers == 0 || self.hidden_units == 0 || self.input_dim == 0 {
            return Err(invalid!("encoder needs at least one layer, unit and input feature"));
        }
        if self.output_dim < 2 {
            return Err(invalid!("encoder output must cover at least one label plus blank"));
        }
        if let Some(after) = self.time_reduction_after_layer {
            if after == 0 || after >= self.num_layers {
                return Err(invalid!("time reduction after layer {after} must lie in [1, {})", self.num_layers));
            }
            if self.time_reduction_factor < 1 {
                return Err(invalid!("time reduction factor must be positive"));
            }
        }
        Ok(())
    }

    fn factor(&self) -> usize {
        if self.time_reduction_after_layer.is_some() {
            self.time_reduction_factor
        } else {
            1
        }
    }

    /// Encoder output length for `frames` input frames.
    pub fn output_frames(&self, frames: usize) -> usize {
        frames.div_ceil(self.factor())
    }

    fn layer_input_dim(&self, layer: usize) -> usize {
        match (layer, self.time_reduction_after_layer) {
            (0, _) => self.input_dim,
            (l, Some(after)) if l == after => self.hidden_units * self.time_reduction_factor,
            _ => self.hidden_units,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct EncoderParams<S> {
    pub config: EncoderConfig,
    pub layers: Vec<LstmWeights<S>>,
    /// `[V+1, H]`
    pub proj_w: Tensor<S>,
    /// `[V+1]`
    pub proj_b: Tensor<S>,
}

impl<S: Scalar> EncoderParams<S> {
    pub fn zeros(config: &EncoderConfig) -> Result<Self> {
        config.validate()?;
        let layers = (0..config.num_layers)
            .map(|l| LstmWeights::zeros(config.layer_input_dim(l), config.hidden_units))
            .collect();
        Ok(Self {
            config: config.clone(),
            layers,
            proj_w: Tensor::zeros(&[config.output_dim, config.hidden_units]),
            proj_b: Tensor::zeros(&[config.output_dim]),
        })
    }

    pub fn init(config: &EncoderConfig, rng: &mut Rng) -> Result<Self> {
        let mut p = Self::zeros(config)?;
        for (l, layer) in p.layers.iter_mut().enumerate() {
            *layer = LstmWeights::init(config.layer_input_dim(l), config.hidden_units, rng);
        }
        fill_uniform(&mut p.proj_w, rng);
        Ok(p)
    }

    pub fn zeros_like(&self) -> Self {
        Self::zeros(&self.config).expect("config already validated")
    }

    /// Named tensors in a fixed order.
    pub fn tensors(&self) -> Vec<(String, &Tensor<S>)> {
        let mut out = Vec::new();
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
        let mut out = Vec::new();
        for (l, layer) in self.layers.iter_mut().enumerate() {
            for (name, t) in layer.tensors_mut() {
                out.push((format!("layer{l}.{name}"), t));
            }
        }
        out.push(("proj.w".into(), &mut self.proj_w));
        out.push(("proj.b".into(), &mut self.proj_b));
        out
    }
}

/// Stacks `factor` consecutive frames along the feature axis; a short final
/// group is completed with zero frames. `[T, d] -> [ceil(T/f), f·d]`.
pub fn time_reduce<S: Scalar>(frames: &[S], steps: usize, dim: usize, factor: usize) -> (Vec<S>, usize) {
    let out_steps = steps.div_ceil(factor);
    let mut out = vec![S::zero(); out_steps * factor * dim];
    out[..steps * dim].copy_from_slice(&frames[..steps * dim]);
    (out, out_steps)
}

/// Gradient of [`time_reduce`]: drops the zero-padding positions.
pub fn time_reduce_backward<S: Scalar>(grad: &[S], steps: usize, dim: usize) -> Vec<S> {
    grad[..steps * dim].to_vec()
}

#[derive(Clone, Debug)]
pub struct EncoderOutput<S> {
    /// `[T', V+1]` logits `h^enc_t`
    pub logits: Tensor<S>,
    pub reduced_length: usize,
}

#[derive(Clone, Debug)]
pub struct EncoderCache<S> {
    layers: Vec<LstmLayerCache<S>>,
    /// Sequence length entering each layer.
    steps_in: Vec<usize>,
}

pub fn encoder_forward<S: Scalar>(
    params: &EncoderParams<S>,
    frames: &Tensor<S>,
) -> Result<(EncoderOutput<S>, EncoderCache<S>)> {
    let cfg = &params.config;
    if frames.rank() != 2 || frames.dim(1) != cfg.input_dim {
        return Err(shape_err!("encoder expects [T, {}] frames, got {:?}", cfg.input_dim, frames.shape()));
    }
    if frames.dim(0) == 0 {
        return Err(invalid!("encoder input has no frames"));
    }
    let hidden = cfg.hidden_units;
    let mut steps = frames.dim(0);
    let mut x = frames.data().to_vec();
    let mut caches = Vec::with_capacity(cfg.num_layers);
    let mut steps_in = Vec::with_capacity(cfg.num_layers);
    for (l, layer) in params.layers.iter().enumerate() {
        if cfg.time_reduction_after_layer == Some(l) {
            let (reduced, n) = time_reduce(&x, steps, hidden, cfg.time_reduction_factor);
            x = reduced;
            steps = n;
        }
        steps_in.push(steps);
        let cache = lstm_layer_forward(layer, &x, steps)?;
        x = cache.hidden.clone();
        caches.push(cache);
    }
    let v1 = cfg.output_dim;
    let mut logits = Vec::with_capacity(steps * v1);
    for _ in 0..steps {
        logits.extend_from_slice(params.proj_b.data());
    }
    gemm_nt(steps, v1, hidden, &x, params.proj_w.data(), S::one(), &mut logits);
    Ok((
        EncoderOutput { logits: Tensor::from_vec(&[steps, v1], logits)?, reduced_length: steps },
        EncoderCache { layers: caches, steps_in },
    ))
}

/// Accumulates parameter gradients for `∂L/∂logits` into `grads`.
pub fn encoder_backward<S: Scalar>(
    params: &EncoderParams<S>,
    cache: &EncoderCache<S>,
    d_logits: &Tensor<S>,
    grads: &mut EncoderParams<S>,
) -> Result<()> {
    let cfg = &params.config;
    let hidden = cfg.hidden_units;
    let v1 = cfg.output_dim;
    let last = cache.layers.last().expect("encoder has layers");
    let steps = last.steps;
    if d_logits.shape() != [steps, v1] {
        return Err(shape_err!("encoder gradient shape {:?} != [{steps}, {v1}]", d_logits.shape()));
    }
    gemm_tn(v1, hidden, steps, d_logits.data(), &last.hidden, S::one(), grads.proj_w.data_mut());
    for row in d_logits.data().chunks_exact(v1) {
        for (b, &g) in grads.proj_b.data_mut().iter_mut().zip(row) {
            *b += g;
        }
    }
    let mut d_hidden = vec![S::zero(); steps * hidden];
    gemm_nn(steps, hidden, v1, d_logits.data(), params.proj_w.data(), S::zero(), &mut d_hidden);
    for l in (0..cfg.num_layers).rev() {
        let need_input = l > 0;
        let d_in =
            lstm_layer_backward(&params.layers[l], &cache.layers[l], &d_hidden, &mut grads.layers[l], need_input);
        match d_in {
            Some(d) if cfg.time_reduction_after_layer == Some(l) => {
                d_hidden = time_reduce_backward(&d, cache.steps_in[l - 1], hidden);
            }
            Some(d) => d_hidden = d,
            None => {}
        }
    }
    Ok(())
}
