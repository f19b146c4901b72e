//! Transducer loss over the `T' × (U+1)` alignment lattice.
//!
//! Node `(t, u)` means `t` frames consumed and `u` labels emitted. From a node
//! the path either emits blank (moving to `t + 1`) or the next label `y_{u+1}`
//! (moving to `u + 1`). Every complete path ends with a blank out of
//! `(T'-1, U)`. All recursions and gradients run in `f64`.

use crate::error::{invalid, shape_err, Error, Result};
use crate::numerics::{log_add_exp, log_softmax_into};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// Target labels for one utterance. The blank is always the last class.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct LabelSequence {
    tokens: Vec<usize>,
    num_classes: usize,
}

impl LabelSequence {
    /// `num_classes` counts the blank, i.e. it is `V + 1`.
    pub fn new(tokens: Vec<usize>, num_classes: usize) -> Result<Self> {
        if num_classes < 2 {
            return Err(invalid!("need at least one label plus blank, got {num_classes} classes"));
        }
        if let Some(&bad) = tokens.iter().find(|&&t| t >= num_classes - 1) {
            return Err(invalid!("token {bad} out of range for vocabulary of {}", num_classes - 1));
        }
        Ok(Self { tokens, num_classes })
    }

    pub fn tokens(&self) -> &[usize] {
        &self.tokens
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn blank(&self) -> usize {
        self.num_classes - 1
    }

    pub fn num_classes(&self) -> usize {
        self.num_classes
    }
}

fn check_shape(shape: &[usize], labels: &LabelSequence) -> Result<(usize, usize, usize)> {
    if shape.len() != 3 {
        return Err(shape_err!("lattice logits must be rank 3, got {:?}", shape));
    }
    let (frames, nodes_u, classes) = (shape[0], shape[1], shape[2]);
    if frames == 0 {
        return Err(invalid!("lattice needs at least one frame"));
    }
    if nodes_u != labels.len() + 1 {
        return Err(shape_err!("lattice has {} label positions, labels need {}", nodes_u, labels.len() + 1));
    }
    if classes != labels.num_classes() {
        return Err(shape_err!("lattice has {} classes, labels expect {}", classes, labels.num_classes()));
    }
    Ok((frames, nodes_u, classes))
}

/// Per-node log-softmax of joint logits `[T', U+1, V+1]`.
pub fn lattice_log_probs<S: Scalar>(logits: &Tensor<S>) -> Result<Tensor<f64>> {
    if logits.rank() != 3 {
        return Err(shape_err!("lattice logits must be rank 3, got {:?}", logits.shape()));
    }
    let classes = logits.dim(2);
    let mut out = Tensor::zeros(logits.shape());
    for (src, dst) in logits.data().chunks_exact(classes).zip(out.data_mut().chunks_exact_mut(classes)) {
        log_softmax_into(src, dst);
    }
    Ok(out)
}

/// Forward variables `alpha[t, u]` and the total log-likelihood.
pub fn forward_alphas(log_probs: &Tensor<f64>, labels: &LabelSequence) -> Result<(Tensor<f64>, f64)> {
    let (frames, nodes_u, classes) = check_shape(log_probs.shape(), labels)?;
    let lp = |t: usize, u: usize, k: usize| log_probs.data()[(t * nodes_u + u) * classes + k];
    let blank = labels.blank();
    let y = labels.tokens();
    let mut alpha = Tensor::filled(&[frames, nodes_u], f64::NEG_INFINITY);
    let a = alpha.data_mut();
    a[0] = 0.0;
    for t in 0..frames {
        for u in 0..nodes_u {
            if t == 0 && u == 0 {
                continue;
            }
            let from_blank = if t > 0 { a[(t - 1) * nodes_u + u] + lp(t - 1, u, blank) } else { f64::NEG_INFINITY };
            let from_emit = if u > 0 { a[t * nodes_u + u - 1] + lp(t, u - 1, y[u - 1]) } else { f64::NEG_INFINITY };
            a[t * nodes_u + u] = log_add_exp(from_blank, from_emit);
        }
    }
    let ll = a[frames * nodes_u - 1] + lp(frames - 1, nodes_u - 1, blank);
    Ok((alpha, ll))
}

/// Backward variables `beta[t, u]`, including the terminal blank.
pub fn backward_betas(log_probs: &Tensor<f64>, labels: &LabelSequence) -> Result<Tensor<f64>> {
    let (frames, nodes_u, classes) = check_shape(log_probs.shape(), labels)?;
    let lp = |t: usize, u: usize, k: usize| log_probs.data()[(t * nodes_u + u) * classes + k];
    let blank = labels.blank();
    let y = labels.tokens();
    let mut beta = Tensor::filled(&[frames, nodes_u], f64::NEG_INFINITY);
    let b = beta.data_mut();
    for t in (0..frames).rev() {
        for u in (0..nodes_u).rev() {
            let idx = t * nodes_u + u;
            if t == frames - 1 && u == nodes_u - 1 {
                b[idx] = lp(t, u, blank);
                continue;
            }
            let via_blank = if t + 1 < frames { b[idx + nodes_u] + lp(t, u, blank) } else { f64::NEG_INFINITY };
            let via_emit = if u + 1 < nodes_u { b[idx + 1] + lp(t, u, y[u]) } else { f64::NEG_INFINITY };
            b[idx] = log_add_exp(via_blank, via_emit);
        }
    }
    Ok(beta)
}

/// `∂(-ln P(y|x)) / ∂logits[t, u, k]` from the occupancy identity.
pub fn loss_grad_logits(
    log_probs: &Tensor<f64>,
    alpha: &Tensor<f64>,
    beta: &Tensor<f64>,
    log_likelihood: f64,
    labels: &LabelSequence,
) -> Result<Tensor<f64>> {
    let (frames, nodes_u, classes) = check_shape(log_probs.shape(), labels)?;
    if alpha.shape() != [frames, nodes_u] || beta.shape() != [frames, nodes_u] {
        return Err(shape_err!("alpha/beta tables do not match the lattice"));
    }
    let blank = labels.blank();
    let y = labels.tokens();
    let (a, b) = (alpha.data(), beta.data());
    let mut grad = Tensor::zeros(log_probs.shape());
    for t in 0..frames {
        for u in 0..nodes_u {
            let node = t * nodes_u + u;
            let lp = &log_probs.data()[node * classes..(node + 1) * classes];
            let g = &mut grad.data_mut()[node * classes..(node + 1) * classes];
            let occupancy = (a[node] + b[node] - log_likelihood).exp();
            for (gk, &l) in g.iter_mut().zip(lp) {
                *gk = l.exp() * occupancy;
            }
            let after_blank = if t + 1 < frames {
                b[node + nodes_u]
            } else if u + 1 == nodes_u {
                0.0
            } else {
                f64::NEG_INFINITY
            };
            g[blank] -= (a[node] + lp[blank] + after_blank - log_likelihood).exp();
            if u + 1 < nodes_u {
                g[y[u]] -= (a[node] + lp[y[u]] + b[node + 1] - log_likelihood).exp();
            }
        }
    }
    Ok(grad)
}

/// A fully evaluated lattice: log-probabilities, forward/backward tables and
/// the gradient of the negative log-likelihood with respect to the logits.
#[derive(Clone, Debug)]
pub struct JointLattice {
    pub log_probs: Tensor<f64>,
    pub alpha: Tensor<f64>,
    pub beta: Tensor<f64>,
    pub grad_logits: Tensor<f64>,
    log_likelihood: f64,
}

impl JointLattice {
    pub fn evaluate<S: Scalar>(logits: &Tensor<S>, labels: &LabelSequence) -> Result<Self> {
        check_shape(logits.shape(), labels)?;
        if !logits.is_finite() {
            return Err(Error::Diverged("non-finite joint logits".into()));
        }
        let log_probs = lattice_log_probs(logits)?;
        let (alpha, log_likelihood) = forward_alphas(&log_probs, labels)?;
        let beta = backward_betas(&log_probs, labels)?;
        let grad_logits = loss_grad_logits(&log_probs, &alpha, &beta, log_likelihood, labels)?;
        Ok(Self { log_probs, alpha, beta, grad_logits, log_likelihood })
    }

    pub fn log_likelihood(&self) -> f64 {
        self.log_likelihood
    }

    pub fn loss(&self) -> f64 {
        -self.log_likelihood
    }

    pub fn frames(&self) -> usize {
        self.alpha.dim(0)
    }
}

/// Negative log-likelihood `-ln P(y|x)` summed over all alignments.
pub fn transducer_loss<S: Scalar>(logits: &Tensor<S>, labels: &LabelSequence) -> Result<f64> {
    let log_probs = lattice_log_probs(logits)?;
    let (_, ll) = forward_alphas(&log_probs, labels)?;
    Ok(-ll)
}

pub const ORACLE_MAX_FRAMES: usize = 6;
pub const ORACLE_MAX_LABELS: usize = 4;

/// Exhaustive-alignment oracle: enumerates every blank/label interleaving,
/// multiplies plain probabilities and sums them in `f64`.
///
/// Shares no code with the dynamic program above, including the softmax.
pub fn brute_force_loss<S: Scalar>(logits: &Tensor<S>, labels: &LabelSequence) -> Result<f64> {
    let (frames, nodes_u, classes) = check_shape(logits.shape(), labels)?;
    if frames > ORACLE_MAX_FRAMES || labels.len() > ORACLE_MAX_LABELS {
        return Err(Error::OracleLimit(format!(
            "T'={frames}, U={} exceeds T'<={ORACLE_MAX_FRAMES}, U<={ORACLE_MAX_LABELS}",
            labels.len()
        )));
    }
    let probs: Vec<f64> = logits
        .data()
        .chunks_exact(classes)
        .flat_map(|row| {
            let exps: Vec<f64> = row.iter().map(|x| x.f64().exp()).collect();
            let z: f64 = exps.iter().sum();
            exps.into_iter().map(move |e| e / z)
        })
        .collect();
    let p = |t: usize, u: usize, k: usize| probs[(t * nodes_u + u) * classes + k];

    fn walk(
        t: usize,
        u: usize,
        acc: f64,
        frames: usize,
        labels: &[usize],
        blank: usize,
        p: &dyn Fn(usize, usize, usize) -> f64,
    ) -> f64 {
        let last_u = labels.len();
        if t == frames - 1 && u == last_u {
            return acc * p(t, u, blank);
        }
        let mut total = 0.0;
        if t + 1 < frames {
            total += walk(t + 1, u, acc * p(t, u, blank), frames, labels, blank, p);
        }
        if u < last_u {
            total += walk(t, u + 1, acc * p(t, u, labels[u]), frames, labels, blank, p);
        }
        total
    }

    let total = walk(0, 0, 1.0, frames, labels.tokens(), labels.blank(), &p);
    Ok(-total.ln())
}

/// Number of alignments through a `T' × (U+1)` lattice: `C(T'-1+U, U)`.
pub fn alignment_count(frames: usize, labels: usize) -> u64 {
    let (n, k) = ((frames - 1 + labels) as u64, labels as u64);
    (0..k).fold(1u64, |acc, i| acc * (n - i) / (i + 1))
}
