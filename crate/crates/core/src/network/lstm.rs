//! LSTM cell and single-layer sequence kernels with explicit backward passes.
//!
//! Gate layout inside every `4H` block is `[input, forget, candidate, output]`.

use crate::error::{shape_err, Result};
use crate::linalg::{axpy, gemm_nn, gemm_nt, gemm_tn, matvec_add, matvec_t_add};
use crate::rng::Rng;
use crate::scalar::Scalar;
use crate::tensor::Tensor;

#[derive(Clone, Debug, PartialEq)]
pub struct LstmWeights<S> {
    /// `[4H, I]`
    pub w_ih: Tensor<S>,
    /// `[4H, H]`
    pub w_hh: Tensor<S>,
    /// `[4H]`
    pub bias: Tensor<S>,
}

impl<S: Scalar> LstmWeights<S> {
    pub fn zeros(input_dim: usize, hidden: usize) -> Self {
        Self {
            w_ih: Tensor::zeros(&[4 * hidden, input_dim]),
            w_hh: Tensor::zeros(&[4 * hidden, hidden]),
            bias: Tensor::zeros(&[4 * hidden]),
        }
    }

    /// Uniform `±1/√fan_in` weights, forget-gate bias 1, other biases 0.
    pub fn init(input_dim: usize, hidden: usize, rng: &mut Rng) -> Self {
        let mut w = Self::zeros(input_dim, hidden);
        fill_uniform(&mut w.w_ih, rng);
        fill_uniform(&mut w.w_hh, rng);
        for b in &mut w.bias.data_mut()[hidden..2 * hidden] {
            *b = S::one();
        }
        w
    }

    pub fn hidden(&self) -> usize {
        self.w_hh.dim(1)
    }

    pub fn input_dim(&self) -> usize {
        self.w_ih.dim(1)
    }

    pub fn tensors(&self) -> [(&'static str, &Tensor<S>); 3] {
        [("w_ih", &self.w_ih), ("w_hh", &self.w_hh), ("bias", &self.bias)]
    }

    pub fn tensors_mut(&mut self) -> [(&'static str, &mut Tensor<S>); 3] {
        [("w_ih", &mut self.w_ih), ("w_hh", &mut self.w_hh), ("bias", &mut self.bias)]
    }
}

/// Uniform `(-a, a)` with `a = 1/√(columns)`, i.e. the fan-in of a `[out, in]` matrix.
pub(crate) fn fill_uniform<S: Scalar>(t: &mut Tensor<S>, rng: &mut Rng) {
    let fan_in = t.shape().last().copied().unwrap_or(1).max(1);
    let a = 1.0 / (fan_in as f64).sqrt();
    for v in t.data_mut() {
        *v = S::of(rng.uniform_range(-a, a));
    }
}

#[inline]
fn sigmoid<S: Scalar>(x: S) -> S {
    S::one() / (S::one() + (-x).exp())
}

/// Turns gate pre-activations into activations in place and advances the cell.
#[inline]
fn activate<S: Scalar>(gates: &mut [S], c_prev: &[S], c: &mut [S], tanh_c: &mut [S], h: &mut [S]) {
    let hidden = c.len();
    let (i_g, rest) = gates.split_at_mut(hidden);
    let (f_g, rest) = rest.split_at_mut(hidden);
    let (g_g, o_g) = rest.split_at_mut(hidden);
    for j in 0..hidden {
        i_g[j] = sigmoid(i_g[j]);
        f_g[j] = sigmoid(f_g[j]);
        g_g[j] = g_g[j].tanh();
        o_g[j] = sigmoid(o_g[j]);
        c[j] = f_g[j] * c_prev[j] + i_g[j] * g_g[j];
        tanh_c[j] = c[j].tanh();
        h[j] = o_g[j] * tanh_c[j];
    }
}

/// Backward through one step. `dh` is the total gradient reaching `h_t`, `dc` the
/// gradient carried into `c_t` from the future; on return `dc` holds
/// `∂/∂c_{t-1}` and `dgates` the pre-activation gradients.
#[inline]
fn step_backward<S: Scalar>(gates: &[S], c_prev: &[S], tanh_c: &[S], dh: &[S], dc: &mut [S], dgates: &mut [S]) {
    let hidden = dh.len();
    let one = S::one();
    for j in 0..hidden {
        let (i, f, g, o) = (gates[j], gates[hidden + j], gates[2 * hidden + j], gates[3 * hidden + j]);
        let d_o = dh[j] * tanh_c[j];
        let d_c = dc[j] + dh[j] * o * (one - tanh_c[j] * tanh_c[j]);
        dgates[j] = d_c * g * i * (one - i);
        dgates[hidden + j] = d_c * c_prev[j] * f * (one - f);
        dgates[2 * hidden + j] = d_c * i * (one - g * g);
        dgates[3 * hidden + j] = d_o * o * (one - o);
        dc[j] = d_c * f;
    }
}

/// Saved activations of one cell step.
#[derive(Clone, Debug)]
pub struct LstmCellCache<S> {
    pub x: Vec<S>,
    pub h_prev: Vec<S>,
    pub c_prev: Vec<S>,
    pub gates: Vec<S>,
    pub tanh_c: Vec<S>,
}

pub fn lstm_cell_forward<S: Scalar>(
    x: &[S],
    h_prev: &[S],
    c_prev: &[S],
    w: &LstmWeights<S>,
) -> Result<(Vec<S>, Vec<S>, LstmCellCache<S>)> {
    let hidden = w.hidden();
    if x.len() != w.input_dim() || h_prev.len() != hidden || c_prev.len() != hidden {
        return Err(shape_err!(
            "cell expects x[{}], h[{hidden}], c[{hidden}]; got x[{}], h[{}], c[{}]",
            w.input_dim(),
            x.len(),
            h_prev.len(),
            c_prev.len()
        ));
    }
    let mut gates = w.bias.data().to_vec();
    matvec_add(w.w_ih.data(), w.input_dim(), x, &mut gates);
    matvec_add(w.w_hh.data(), hidden, h_prev, &mut gates);
    let (mut h, mut c, mut tanh_c) = (vec![S::zero(); hidden], vec![S::zero(); hidden], vec![S::zero(); hidden]);
    activate(&mut gates, c_prev, &mut c, &mut tanh_c, &mut h);
    let cache = LstmCellCache { x: x.to_vec(), h_prev: h_prev.to_vec(), c_prev: c_prev.to_vec(), gates, tanh_c };
    Ok((h, c, cache))
}

/// Returns `(dx, dh_prev, dc_prev)` and accumulates weight gradients into `grads`.
pub fn lstm_cell_backward<S: Scalar>(
    w: &LstmWeights<S>,
    cache: &LstmCellCache<S>,
    dh: &[S],
    dc: &[S],
    grads: &mut LstmWeights<S>,
) -> (Vec<S>, Vec<S>, Vec<S>) {
    let hidden = w.hidden();
    let mut dc_prev = dc.to_vec();
    let mut dgates = vec![S::zero(); 4 * hidden];
    step_backward(&cache.gates, &cache.c_prev, &cache.tanh_c, dh, &mut dc_prev, &mut dgates);
    let input = w.input_dim();
    for (r, &dg) in dgates.iter().enumerate() {
        axpy(dg, &cache.x, &mut grads.w_ih.data_mut()[r * input..(r + 1) * input]);
        axpy(dg, &cache.h_prev, &mut grads.w_hh.data_mut()[r * hidden..(r + 1) * hidden]);
        grads.bias.data_mut()[r] += dg;
    }
    let mut dx = vec![S::zero(); input];
    matvec_t_add(w.w_ih.data(), input, &dgates, &mut dx);
    let mut dh_prev = vec![S::zero(); hidden];
    matvec_t_add(w.w_hh.data(), hidden, &dgates, &mut dh_prev);
    (dx, dh_prev, dc_prev)
}

/// Activations of a full sequence pass through one layer (zero initial state).
#[derive(Clone, Debug)]
pub struct LstmLayerCache<S> {
    pub steps: usize,
    /// `[T, I]`
    pub input: Vec<S>,
    /// `[T, 4H]` activated gates
    pub gates: Vec<S>,
    /// `[T, H]`
    pub cells: Vec<S>,
    /// `[T, H]`
    pub tanh_c: Vec<S>,
    /// `[T, H]`
    pub hidden: Vec<S>,
}

/// Runs the layer over `steps` rows of `input` (`[T, I]`), returning `[T, H]`.
pub fn lstm_layer_forward<S: Scalar>(w: &LstmWeights<S>, input: &[S], steps: usize) -> Result<LstmLayerCache<S>> {
    let (in_dim, hidden) = (w.input_dim(), w.hidden());
    if input.len() != steps * in_dim {
        return Err(shape_err!("layer expects [{steps}, {in_dim}] input, got {} values", input.len()));
    }
    let g4 = 4 * hidden;
    let mut gates = Vec::with_capacity(steps * g4);
    for _ in 0..steps {
        gates.extend_from_slice(w.bias.data());
    }
    gemm_nt(steps, g4, in_dim, input, w.w_ih.data(), S::one(), &mut gates);
    let mut cells = vec![S::zero(); steps * hidden];
    let mut tanh_c = vec![S::zero(); steps * hidden];
    let mut hs = vec![S::zero(); steps * hidden];
    let zeros = vec![S::zero(); hidden];
    for t in 0..steps {
        let (done_h, cur_h) = hs.split_at_mut(t * hidden);
        let (done_c, cur_c) = cells.split_at_mut(t * hidden);
        let h_prev = if t == 0 { &zeros[..] } else { &done_h[(t - 1) * hidden..] };
        let c_prev = if t == 0 { &zeros[..] } else { &done_c[(t - 1) * hidden..] };
        let g = &mut gates[t * g4..(t + 1) * g4];
        matvec_add(w.w_hh.data(), hidden, h_prev, g);
        activate(g, c_prev, &mut cur_c[..hidden], &mut tanh_c[t * hidden..(t + 1) * hidden], &mut cur_h[..hidden]);
    }
    Ok(LstmLayerCache { steps, input: input.to_vec(), gates, cells, tanh_c, hidden: hs })
}

/// Backward through a layer given `∂L/∂h_t` for every step. Accumulates weight
/// gradients and returns `∂L/∂input` when `need_input_grad` is set.
pub fn lstm_layer_backward<S: Scalar>(
    w: &LstmWeights<S>,
    cache: &LstmLayerCache<S>,
    d_hidden: &[S],
    grads: &mut LstmWeights<S>,
    need_input_grad: bool,
) -> Option<Vec<S>> {
    let (in_dim, hidden, steps) = (w.input_dim(), w.hidden(), cache.steps);
    let g4 = 4 * hidden;
    let mut dgates = vec![S::zero(); steps * g4];
    let mut dh = vec![S::zero(); hidden];
    let mut carry_h = vec![S::zero(); hidden];
    let mut dc = vec![S::zero(); hidden];
    let zeros = vec![S::zero(); hidden];
    for t in (0..steps).rev() {
        for j in 0..hidden {
            dh[j] = d_hidden[t * hidden + j] + carry_h[j];
        }
        let c_prev = if t == 0 { &zeros[..] } else { &cache.cells[(t - 1) * hidden..t * hidden] };
        let dg = &mut dgates[t * g4..(t + 1) * g4];
        step_backward(
            &cache.gates[t * g4..(t + 1) * g4],
            c_prev,
            &cache.tanh_c[t * hidden..(t + 1) * hidden],
            &dh,
            &mut dc,
            dg,
        );
        carry_h.iter_mut().for_each(|v| *v = S::zero());
        if t > 0 {
            matvec_t_add(w.w_hh.data(), hidden, dg, &mut carry_h);
        }
    }
    gemm_tn(g4, in_dim, steps, &dgates, &cache.input, S::one(), grads.w_ih.data_mut());
    if steps > 1 {
        gemm_tn(
            g4,
            hidden,
            steps - 1,
            &dgates[g4..],
            &cache.hidden[..(steps - 1) * hidden],
            S::one(),
            grads.w_hh.data_mut(),
        );
    }
    let db = grads.bias.data_mut();
    for row in dgates.chunks_exact(g4) {
        for (b, &g) in db.iter_mut().zip(row) {
            *b += g;
        }
    }
    need_input_grad.then(|| {
        let mut dx = vec![S::zero(); steps * in_dim];
        gemm_nn(steps, in_dim, g4, &dgates, w.w_ih.data(), S::zero(), &mut dx);
        dx
    })
}
