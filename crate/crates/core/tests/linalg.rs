use codert::linalg::*;

fn naive(m: usize, n: usize, k: usize, a: impl Fn(usize, usize) -> f64, b: impl Fn(usize, usize) -> f64) -> Vec<f64> {
    let mut c = vec![0.0; m * n];
    for i in 0..m {
        for j in 0..n {
            c[i * n + j] = (0..k).map(|p| a(i, p) * b(p, j)).sum();
        }
    }
    c
}

#[test]
fn gemm_variants_match_naive_products() {
    let (m, n, k) = (3, 4, 5);
    let a: Vec<f64> = (0..m * k).map(|i| (i as f64 * 0.37).sin()).collect();
    let b: Vec<f64> = (0..k * n).map(|i| (i as f64 * 0.11).cos()).collect();
    let bt: Vec<f64> = (0..n * k).map(|i| b[(i % k) * n + i / k]).collect();
    let at: Vec<f64> = (0..k * m).map(|i| a[(i % m) * k + i / m]).collect();
    let expect = naive(m, n, k, |i, p| a[i * k + p], |p, j| b[p * n + j]);

    let mut c = vec![0.0; m * n];
    gemm_nn(m, n, k, &a, &b, 0.0, &mut c);
    assert!(c.iter().zip(&expect).all(|(x, y)| (x - y).abs() < 1e-12));
    let mut c = vec![0.0; m * n];
    gemm_nt(m, n, k, &a, &bt, 0.0, &mut c);
    assert!(c.iter().zip(&expect).all(|(x, y)| (x - y).abs() < 1e-12));
    let mut c = vec![1.0; m * n];
    gemm_tn(m, n, k, &at, &b, 1.0, &mut c);
    assert!(c.iter().zip(&expect).all(|(x, y)| (x - 1.0 - y).abs() < 1e-12));
}

#[test]
fn matvec_pair_is_consistent() {
    let w: Vec<f64> = (0..12).map(|i| i as f64 - 5.0).collect();
    let x = [1.0, -2.0, 0.5, 3.0];
    let mut y = vec![0.0; 3];
    matvec_add(&w, 4, &x, &mut y);
    let v = [0.5, 1.0, -1.0];
    let mut z = vec![0.0; 4];
    matvec_t_add(&w, 4, &v, &mut z);
    // <v, Wx> == <Wᵀv, x>
    let lhs: f64 = v.iter().zip(&y).map(|(a, b)| a * b).sum();
    let rhs: f64 = z.iter().zip(&x).map(|(a, b)| a * b).sum();
    assert!((lhs - rhs).abs() < 1e-12);
    assert_eq!(dot(&w[..9], &w[3..12]), w[..9].iter().zip(&w[3..12]).map(|(a, b)| a * b).sum::<f64>());
}
