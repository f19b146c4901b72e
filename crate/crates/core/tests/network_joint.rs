use codert::network::joint::*;
use codert::Tensor;

#[test]
fn zero_decoder_is_tanh_of_encoder() {
    let enc = Tensor::from_rows(&[vec![0.3f64, -1.0, 2.0], vec![0.0, 0.5, -0.2]]).unwrap();
    let dec = Tensor::zeros(&[3, 3]);
    let out = joint_forward(&enc, &dec).unwrap();
    for t in 0..2 {
        for u in 0..3 {
            for k in 0..3 {
                assert_eq!(out.at(&[t, u, k]), enc.at(&[t, k]).tanh());
            }
        }
    }
}

#[test]
fn saturation_and_symmetry() {
    let enc = Tensor::from_rows(&[vec![20.0f64, 0.1]]).unwrap();
    let dec = Tensor::from_rows(&[vec![0.0f64, -0.4]]).unwrap();
    let out = joint_forward(&enc, &dec).unwrap();
    assert!((out.at(&[0, 0, 0]) - 1.0).abs() < 1e-12);
    let swapped = joint_forward(&dec, &enc).unwrap();
    assert_eq!(out.data(), swapped.data());
    assert!(out.data().iter().all(|v| v.abs() <= 1.0));
}

#[test]
fn rejects_mismatched_vocab() {
    assert!(joint_forward(&Tensor::<f64>::zeros(&[2, 3]), &Tensor::zeros(&[2, 4])).is_err());
}
