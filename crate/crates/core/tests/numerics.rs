use codert::numerics::*;
use codert::Error;
use proptest::prelude::*;

// Frozen from a 40-digit mpmath evaluation of the direct definitions.
const LSE_123: f64 = 3.407_605_964_444_380_3;
const SOFTMAX_123: [f64; 3] = [0.090_030_573_170_380_46, 0.244_728_471_054_797_65, 0.665_240_955_774_821_9];
const ENTROPY_SOFTMAX_123: f64 = 0.832_395_581_839_938_9;

#[test]
fn log_sum_exp_cases() {
    assert!((log_sum_exp(&[0.0f64, 0.0]).unwrap() - std::f64::consts::LN_2).abs() < 1e-15);
    for x in [-700.0, -3.5, 0.0, 12.25, 800.0] {
        assert_eq!(log_sum_exp(&[x]).unwrap(), x);
    }
    assert!((log_sum_exp(&[1.0f32, 2.0, 3.0]).unwrap() - LSE_123).abs() < 1e-7);
    assert!((log_sum_exp(&[1.0f64, 2.0, 3.0]).unwrap() - LSE_123).abs() < 1e-14);
    assert!(matches!(log_sum_exp::<f64>(&[]), Err(Error::EmptyReduction)));
}

#[test]
fn softmax_cases() {
    assert_eq!(softmax(&[0.0f64; 4]), vec![0.25; 4]);
    let uniform = softmax(&vec![1.7f64; 4001]);
    assert!(uniform.iter().all(|p| (p - 1.0 / 4001.0).abs() < 1e-15));
    let p = softmax(&[1.0f64, 2.0, 3.0]);
    for (a, b) in p.iter().zip(SOFTMAX_123) {
        assert!((a - b).abs() < 1e-15);
    }
}

#[test]
fn entropy_cases() {
    assert_eq!(entropy(&[0.0f64, 1.0, 0.0]).unwrap(), 0.0);
    let u = vec![1.0f64 / 4001.0; 4001];
    assert!((entropy(&u).unwrap() - 4001f64.ln()).abs() < 1e-9);
    assert!((entropy(&softmax(&[1.0f64, 2.0, 3.0])).unwrap() - ENTROPY_SOFTMAX_123).abs() < 1e-14);
    assert!((softmax_entropy(&[1.0f64, 2.0, 3.0]) - ENTROPY_SOFTMAX_123).abs() < 1e-14);
    assert!(entropy(&[-0.1f64, 1.1]).is_err());
}

#[test]
fn top_k_cases() {
    assert_eq!(top_k_indices(&[5.0f64, 1.0, 9.0], 1).unwrap(), vec![2]);
    let mut all = top_k_indices(&[0.3f64, -1.0, 2.0, 0.3], 4).unwrap();
    all.sort();
    assert_eq!(all, vec![0, 1, 2, 3]);
    assert_eq!(top_k_indices(&[3.0f64, 3.0, 1.0], 1).unwrap(), vec![0]);
    assert!(top_k_indices(&[1.0f64], 0).is_err());
    assert!(top_k_indices(&[1.0f64], 2).is_err());
}

fn vec_strategy() -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(-30.0f64..30.0, 1..40)
}

proptest! {
    #[test]
    fn log_sum_exp_is_bracketed(v in vec_strategy()) {
        let lse = log_sum_exp(&v).unwrap();
        let max = v.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        prop_assert!(lse >= max);
        prop_assert!(lse <= max + (v.len() as f64).ln() + 1e-12);
    }

    #[test]
    fn softmax_is_shift_invariant(v in vec_strategy(), c in -50.0f64..50.0) {
        let a = softmax(&v);
        let shifted: Vec<f64> = v.iter().map(|x| x + c).collect();
        let b = softmax(&shifted);
        let sum: f64 = a.iter().sum();
        prop_assert!((sum - 1.0).abs() < 1e-6);
        for (x, y) in a.iter().zip(&b) {
            prop_assert!((x - y).abs() < 1e-6);
        }
        // order preserving
        for i in 0..v.len() {
            for j in 0..v.len() {
                if v[i] < v[j] { prop_assert!(a[i] <= a[j]); }
            }
        }
    }

    #[test]
    fn sharpening_lowers_entropy(v in prop::collection::vec(-5.0f64..5.0, 2..20), factor in 1.1f64..4.0) {
        let spread = v.iter().cloned().fold(f64::NEG_INFINITY, f64::max)
            - v.iter().cloned().fold(f64::INFINITY, f64::min);
        prop_assume!(spread > 1e-3);
        let sharp: Vec<f64> = v.iter().map(|x| x * factor).collect();
        prop_assert!(softmax_entropy(&sharp) < softmax_entropy(&v));
    }

    #[test]
    fn top_k_full_is_permutation(v in vec_strategy()) {
        let mut idx = top_k_indices(&v, v.len()).unwrap();
        idx.sort();
        prop_assert_eq!(idx, (0..v.len()).collect::<Vec<_>>());
    }
}
