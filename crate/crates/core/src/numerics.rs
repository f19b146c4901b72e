//! Log-space and information-theoretic primitives.
//!
//! Inputs may be any [`Scalar`]; every reduction accumulates in `f64`.

use crate::error::{invalid, Error, Result};
use crate::scalar::Scalar;

/// `ln Σ exp(v_i)` via the max-shift identity.
pub fn log_sum_exp<S: Scalar>(v: &[S]) -> Result<f64> {
    if v.is_empty() {
        return Err(Error::EmptyReduction);
    }
    Ok(log_sum_exp_f64(v.iter().map(|x| x.f64())))
}

/// Infallible variant for internal callers that tolerate `-inf` entries.
/// Returns `-inf` for an empty or all-`-inf` input.
pub fn log_sum_exp_f64(v: impl Iterator<Item = f64> + Clone) -> f64 {
    let max = v.clone().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return f64::NEG_INFINITY;
    }
    let mut count = 0usize;
    let mut sum = 0.0;
    for x in v {
        sum += (x - max).exp();
        count += 1;
    }
    if count == 1 {
        return max;
    }
    max + sum.ln()
}

#[inline]
pub fn log_add_exp(a: f64, b: f64) -> f64 {
    if a == f64::NEG_INFINITY {
        return b;
    }
    if b == f64::NEG_INFINITY {
        return a;
    }
    let (hi, lo) = if a >= b { (a, b) } else { (b, a) };
    hi + (lo - hi).exp().ln_1p()
}

/// Log-softmax into an `f64` buffer.
pub fn log_softmax_into<S: Scalar>(v: &[S], out: &mut [f64]) {
    debug_assert_eq!(v.len(), out.len());
    let lse = log_sum_exp_f64(v.iter().map(|x| x.f64()));
    for (o, x) in out.iter_mut().zip(v) {
        *o = x.f64() - lse;
    }
}

pub fn log_softmax<S: Scalar>(v: &[S]) -> Vec<f64> {
    let mut out = vec![0.0; v.len()];
    log_softmax_into(v, &mut out);
    out
}

/// Softmax computed in `f64` and returned in the input's precision.
pub fn softmax<S: Scalar>(v: &[S]) -> Vec<S> {
    softmax_f64(v).into_iter().map(S::of).collect()
}

pub fn softmax_f64<S: Scalar>(v: &[S]) -> Vec<f64> {
    let max = v.iter().fold(f64::NEG_INFINITY, |m, x| m.max(x.f64()));
    let exps: Vec<f64> = v.iter().map(|x| (x.f64() - max).exp()).collect();
    let z: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / z).collect()
}

/// Shannon entropy in nats, with `0 · ln 0 := 0`.
pub fn entropy<S: Scalar>(p: &[S]) -> Result<f64> {
    if p.is_empty() {
        return Err(Error::EmptyReduction);
    }
    let mut total = 0.0;
    let mut h = 0.0;
    for (i, &x) in p.iter().enumerate() {
        let x = x.f64();
        if !(x >= 0.0) {
            return Err(invalid!("negative probability {x} at index {i}"));
        }
        total += x;
        if x > 0.0 {
            h -= x * x.ln();
        }
    }
    if (total - 1.0).abs() > 1e-4 {
        return Err(invalid!("probabilities sum to {total}"));
    }
    Ok(h)
}

/// Entropy of `softmax(logits)` without materializing the probabilities twice.
pub fn softmax_entropy<S: Scalar>(logits: &[S]) -> f64 {
    let lp = log_softmax(logits);
    lp.iter().map(|&l| if l == f64::NEG_INFINITY { 0.0 } else { -l.exp() * l }).sum()
}

/// Indices of the `k` largest entries in rank order; ties go to the lower index.
pub fn top_k_indices<S: Scalar>(v: &[S], k: usize) -> Result<Vec<usize>> {
    if k == 0 || k > v.len() {
        return Err(invalid!("k = {k} outside [1, {}]", v.len()));
    }
    let mut idx: Vec<usize> = (0..v.len()).collect();
    // Stable sort keeps lower indices first among equal values.
    idx.sort_by(|&a, &b| v[b].partial_cmp(&v[a]).unwrap_or(std::cmp::Ordering::Equal));
    idx.truncate(k);
    Ok(idx)
}

/// Index of the maximum; ties go to the lower index.
pub fn argmax<S: Scalar>(v: &[S]) -> usize {
    let mut best = 0;
    for (i, x) in v.iter().enumerate().skip(1) {
        if *x > v[best] {
            best = i;
        }
    }
    best
}
