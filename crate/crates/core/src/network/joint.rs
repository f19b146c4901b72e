use crate::error::{shape_err, Result};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// `out[t, u, k] = tanh(enc[t, k] + dec[u, k])`
pub fn joint_forward<S: Scalar>(enc: &Tensor<S>, dec: &Tensor<S>) -> Result<Tensor<S>> {
    if enc.rank() != 2 || dec.rank() != 2 || enc.dim(1) != dec.dim(1) {
        return Err(shape_err!("joint inputs {:?} and {:?} disagree", enc.shape(), dec.shape()));
    }
    let (frames, rows, k) = (enc.dim(0), dec.dim(0), enc.dim(1));
    let mut out = Tensor::zeros(&[frames, rows, k]);
    let data = out.data_mut();
    for t in 0..frames {
        let e = enc.row(t);
        for u in 0..rows {
            let d = dec.row(u);
            let o = &mut data[(t * rows + u) * k..(t * rows + u + 1) * k];
            for j in 0..k {
                o[j] = (e[j] + d[j]).tanh();
            }
        }
    }
    Ok(out)
}

/// Given the forward output and `∂L/∂out`, returns `(∂L/∂enc, ∂L/∂dec)`.
pub fn joint_backward<S: Scalar>(out: &Tensor<S>, d_out: &Tensor<S>) -> Result<(Tensor<S>, Tensor<S>)> {
    if out.shape() != d_out.shape() || out.rank() != 3 {
        return Err(shape_err!("joint gradient {:?} does not match output {:?}", d_out.shape(), out.shape()));
    }
    let (frames, rows, k) = (out.dim(0), out.dim(1), out.dim(2));
    let mut d_enc = Tensor::zeros(&[frames, k]);
    let mut d_dec = Tensor::zeros(&[rows, k]);
    for t in 0..frames {
        for u in 0..rows {
            let base = (t * rows + u) * k;
            let o = &out.data()[base..base + k];
            let g = &d_out.data()[base..base + k];
            let de = d_enc.row_mut(t);
            for j in 0..k {
                de[j] += g[j] * (S::one() - o[j] * o[j]);
            }
            let dd = d_dec.row_mut(u);
            for j in 0..k {
                dd[j] += g[j] * (S::one() - o[j] * o[j]);
            }
        }
    }
    Ok((d_enc, d_dec))
}
