//! Dense row-major kernels used by the recurrent layers.

use crate::scalar::Scalar;

/// `c (m×n) = a (m×k) · bᵀ (b is n×k) + beta·c`
pub fn gemm_nt<S: Scalar>(m: usize, n: usize, k: usize, a: &[S], b: &[S], beta: S, c: &mut [S]) {
    assert!(a.len() >= m * k && b.len() >= n * k && c.len() >= m * n);
    if m == 0 || n == 0 {
        return;
    }
    unsafe {
        S::gemm_raw(
            m,
            k,
            n,
            S::one(),
            a.as_ptr(),
            k as isize,
            1,
            b.as_ptr(),
            1,
            k as isize,
            beta,
            c.as_mut_ptr(),
            n as isize,
            1,
        )
    }
}

/// `c (m×n) = a (m×k) · b (k×n) + beta·c`
pub fn gemm_nn<S: Scalar>(m: usize, n: usize, k: usize, a: &[S], b: &[S], beta: S, c: &mut [S]) {
    assert!(a.len() >= m * k && b.len() >= k * n && c.len() >= m * n);
    if m == 0 || n == 0 {
        return;
    }
    unsafe {
        S::gemm_raw(
            m,
            k,
            n,
            S::one(),
            a.as_ptr(),
            k as isize,
            1,
            b.as_ptr(),
            n as isize,
            1,
            beta,
            c.as_mut_ptr(),
            n as isize,
            1,
        )
    }
}

/// `c (m×n) = aᵀ · b + beta·c` where `a` is k×m and `b` is k×n.
pub fn gemm_tn<S: Scalar>(m: usize, n: usize, k: usize, a: &[S], b: &[S], beta: S, c: &mut [S]) {
    assert!(a.len() >= k * m && b.len() >= k * n && c.len() >= m * n);
    if m == 0 || n == 0 {
        return;
    }
    unsafe {
        S::gemm_raw(
            m,
            k,
            n,
            S::one(),
            a.as_ptr(),
            1,
            m as isize,
            b.as_ptr(),
            n as isize,
            1,
            beta,
            c.as_mut_ptr(),
            n as isize,
            1,
        )
    }
}

/// Dot product with eight independent accumulators so the loop vectorizes.
#[inline]
pub fn dot<S: Scalar>(a: &[S], b: &[S]) -> S {
    debug_assert_eq!(a.len(), b.len());
    let mut acc = [S::zero(); 8];
    let chunks = a.len() / 8;
    for c in 0..chunks {
        let (x, y) = (&a[c * 8..c * 8 + 8], &b[c * 8..c * 8 + 8]);
        for l in 0..8 {
            acc[l] += x[l] * y[l];
        }
    }
    let mut tail = S::zero();
    for i in chunks * 8..a.len() {
        tail += a[i] * b[i];
    }
    ((acc[0] + acc[1]) + (acc[2] + acc[3])) + ((acc[4] + acc[5]) + (acc[6] + acc[7])) + tail
}

/// `y += W x` for row-major `W` (rows × cols).
#[inline]
pub fn matvec_add<S: Scalar>(w: &[S], cols: usize, x: &[S], y: &mut [S]) {
    for (row, out) in w.chunks_exact(cols).zip(y.iter_mut()) {
        *out += dot(row, x);
    }
}

/// `y += Wᵀ v` for row-major `W` (rows × cols).
#[inline]
pub fn matvec_t_add<S: Scalar>(w: &[S], cols: usize, v: &[S], y: &mut [S]) {
    for (row, &scale) in w.chunks_exact(cols).zip(v.iter()) {
        if scale != S::zero() {
            axpy(scale, row, y);
        }
    }
}

#[inline]
pub fn axpy<S: Scalar>(alpha: S, x: &[S], y: &mut [S]) {
    for (yi, &xi) in y.iter_mut().zip(x) {
        *yi += alpha * xi;
    }
}
