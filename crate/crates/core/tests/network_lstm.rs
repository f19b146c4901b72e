use codert::network::lstm::*;
use codert::rng::Rng;

fn random_weights(input: usize, hidden: usize, seed: u64) -> LstmWeights<f64> {
    let mut rng = Rng::new(seed);
    let mut w = LstmWeights::init(input, hidden, &mut rng);
    for v in w.bias.data_mut() {
        *v += 0.3 * rng.normal();
    }
    w
}

#[test]
fn zero_weights_give_zero_state() {
    let w = LstmWeights::<f64>::zeros(3, 4);
    let (h, c, cache) = lstm_cell_forward(&[1.0, -2.0, 0.5], &[0.0; 4], &[0.0; 4], &w).unwrap();
    assert!(h.iter().chain(&c).all(|&v| v == 0.0));
    assert!(cache.gates[..4].iter().all(|&g| g == 0.5));
}

#[test]
fn saturated_forget_gate_carries_state() {
    let mut w = LstmWeights::<f64>::zeros(2, 3);
    for (r, b) in w.bias.data_mut().iter_mut().enumerate() {
        *b = if (3..6).contains(&r) { 20.0 } else { -20.0 };
    }
    let c_prev = [0.7, -1.3, 2.0];
    let (_, c, _) = lstm_cell_forward(&[0.4, 0.9], &[0.1, 0.2, 0.3], &c_prev, &w).unwrap();
    for (a, b) in c.iter().zip(&c_prev) {
        assert!((a - b).abs() < 1e-6);
    }
}

#[test]
fn cell_rejects_bad_dimensions() {
    let w = LstmWeights::<f64>::zeros(2, 3);
    assert!(lstm_cell_forward(&[0.0; 3], &[0.0; 3], &[0.0; 3], &w).is_err());
}

#[test]
fn cell_backward_matches_finite_differences() {
    let w = random_weights(3, 4, 9);
    let mut rng = Rng::new(10);
    let x: Vec<f64> = (0..3).map(|_| rng.normal()).collect();
    let h0: Vec<f64> = (0..4).map(|_| 0.5 * rng.normal()).collect();
    let c0: Vec<f64> = (0..4).map(|_| 0.5 * rng.normal()).collect();
    let rh: Vec<f64> = (0..4).map(|_| rng.normal()).collect();
    let rc: Vec<f64> = (0..4).map(|_| rng.normal()).collect();
    let objective = |w: &LstmWeights<f64>, x: &[f64], h0: &[f64], c0: &[f64]| {
        let (h, c, _) = lstm_cell_forward(x, h0, c0, w).unwrap();
        h.iter().zip(&rh).map(|(a, b)| a * b).sum::<f64>() + c.iter().zip(&rc).map(|(a, b)| a * b).sum::<f64>()
    };
    let (_, _, cache) = lstm_cell_forward(&x, &h0, &c0, &w).unwrap();
    let mut grads = LstmWeights::zeros(3, 4);
    let (dx, dh0, dc0) = lstm_cell_backward(&w, &cache, &rh, &rc, &mut grads);
    let h = 1e-6;
    let check = |analytic: f64, plus: f64, minus: f64| {
        let fd = (plus - minus) / (2.0 * h);
        let rel = (analytic - fd).abs() / analytic.abs().max(fd.abs()).max(1e-6);
        assert!(rel < 1e-4, "analytic {analytic} fd {fd}");
    };
    for i in 0..3 {
        let (mut p, mut m) = (x.clone(), x.clone());
        p[i] += h;
        m[i] -= h;
        check(dx[i], objective(&w, &p, &h0, &c0), objective(&w, &m, &h0, &c0));
    }
    for i in 0..4 {
        let (mut p, mut m) = (h0.clone(), h0.clone());
        p[i] += h;
        m[i] -= h;
        check(dh0[i], objective(&w, &x, &p, &c0), objective(&w, &x, &m, &c0));
        let (mut p, mut m) = (c0.clone(), c0.clone());
        p[i] += h;
        m[i] -= h;
        check(dc0[i], objective(&w, &x, &h0, &p), objective(&w, &x, &h0, &m));
    }
    for which in 0..3 {
        for i in 0..grads.tensors()[which].1.len() {
            let mut p = w.clone();
            p.tensors_mut()[which].1.data_mut()[i] += h;
            let mut m = w.clone();
            m.tensors_mut()[which].1.data_mut()[i] -= h;
            check(grads.tensors()[which].1.data()[i], objective(&p, &x, &h0, &c0), objective(&m, &x, &h0, &c0));
        }
    }
}

#[test]
fn layer_matches_repeated_cell_steps() {
    let w = random_weights(3, 5, 2);
    let mut rng = Rng::new(3);
    let steps = 4;
    let input: Vec<f64> = (0..steps * 3).map(|_| rng.normal()).collect();
    let cache = lstm_layer_forward(&w, &input, steps).unwrap();
    let (mut h, mut c) = (vec![0.0; 5], vec![0.0; 5]);
    for t in 0..steps {
        let (nh, nc, _) = lstm_cell_forward(&input[t * 3..(t + 1) * 3], &h, &c, &w).unwrap();
        h = nh;
        c = nc;
        for j in 0..5 {
            assert!((cache.hidden[t * 5 + j] - h[j]).abs() < 1e-12);
        }
    }
}

#[test]
fn layer_backward_matches_finite_differences() {
    let w = random_weights(3, 4, 12);
    let mut rng = Rng::new(13);
    let steps = 5;
    let input: Vec<f64> = (0..steps * 3).map(|_| rng.normal()).collect();
    let r: Vec<f64> = (0..steps * 4).map(|_| rng.normal()).collect();
    let objective = |w: &LstmWeights<f64>, input: &[f64]| {
        let cache = lstm_layer_forward(w, input, steps).unwrap();
        cache.hidden.iter().zip(&r).map(|(a, b)| a * b).sum::<f64>()
    };
    let cache = lstm_layer_forward(&w, &input, steps).unwrap();
    let mut grads = LstmWeights::zeros(3, 4);
    let dx = lstm_layer_backward(&w, &cache, &r, &mut grads, true).unwrap();
    let h = 1e-6;
    for i in 0..input.len() {
        let (mut p, mut m) = (input.clone(), input.clone());
        p[i] += h;
        m[i] -= h;
        let fd = (objective(&w, &p) - objective(&w, &m)) / (2.0 * h);
        assert!((dx[i] - fd).abs() / dx[i].abs().max(fd.abs()).max(1e-6) < 1e-4);
    }
    for which in 0..3 {
        for i in 0..grads.tensors()[which].1.len() {
            let mut p = w.clone();
            p.tensors_mut()[which].1.data_mut()[i] += h;
            let mut m = w.clone();
            m.tensors_mut()[which].1.data_mut()[i] -= h;
            let fd = (objective(&p, &input) - objective(&m, &input)) / (2.0 * h);
            let a = grads.tensors()[which].1.data()[i];
            assert!((a - fd).abs() / a.abs().max(fd.abs()).max(1e-6) < 1e-4, "{which}/{i}: {a} vs {fd}");
        }
    }
}
