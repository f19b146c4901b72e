use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::network::ParamSet;
use crate::scalar::Scalar;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    /// Global gradient-norm clip; `None` disables clipping.
    pub clip_norm: Option<f64>,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self { beta1: 0.9, beta2: 0.999, eps: 1e-8, clip_norm: Some(5.0) }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct AdamState<P> {
    pub m: P,
    pub v: P,
    pub steps: u64,
}

impl<P> AdamState<P> {
    pub fn new<S: Scalar>(params: &P) -> Self
    where
        P: ParamSet<S>,
    {
        Self { m: params.zeros_like(), v: params.zeros_like(), steps: 0 }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct UpdateStats {
    /// Pre-clip global gradient norm.
    pub grad_norm: f64,
    /// Factor applied to the gradients (1 when not clipped).
    pub clip_scale: f64,
}

/// Clip factor for a gradient of global norm `norm`.
pub fn clip_scale(norm: f64, clip: Option<f64>) -> f64 {
    match clip {
        Some(c) if norm > c => c / norm,
        _ => 1.0,
    }
}

/// One Adam update with bias correction, after global-norm clipping.
pub fn optimizer_step<S: Scalar, P: ParamSet<S>>(
    params: &mut P,
    grads: &P,
    state: &mut AdamState<P>,
    lr: f64,
    config: &AdamConfig,
) -> Result<UpdateStats> {
    let norm = grads.sum_sq().sqrt();
    if !norm.is_finite() {
        return Err(Error::Diverged(format!("non-finite gradient norm {norm}")));
    }
    let scale = clip_scale(norm, config.clip_norm);
    state.steps += 1;
    let t = state.steps as i32;
    let (b1, b2) = (config.beta1, config.beta2);
    let c1 = 1.0 - b1.powi(t);
    let c2 = 1.0 - b2.powi(t);
    let mut p_all = params.named_mut();
    let mut m_all = state.m.named_mut();
    let mut v_all = state.v.named_mut();
    for (i, (_, g)) in grads.named().into_iter().enumerate() {
        let p = p_all[i].1.data_mut();
        let m = m_all[i].1.data_mut();
        let v = v_all[i].1.data_mut();
        for (j, &gj) in g.data().iter().enumerate() {
            let gj = gj.f64() * scale;
            let mj = b1 * m[j].f64() + (1.0 - b1) * gj;
            let vj = b2 * v[j].f64() + (1.0 - b2) * gj * gj;
            m[j] = S::of(mj);
            v[j] = S::of(vj);
            let update = lr * (mj / c1) / ((vj / c2).sqrt() + config.eps);
            p[j] = S::of(p[j].f64() - update);
        }
    }
    Ok(UpdateStats { grad_norm: norm, clip_scale: scale })
}
