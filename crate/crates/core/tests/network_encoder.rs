use codert::network::encoder::*;
use codert::rng::Rng;
use codert::Tensor;

fn cfg(layers: usize, after: Option<usize>) -> EncoderConfig {
    EncoderConfig {
        num_layers: layers,
        hidden_units: 4,
        input_dim: 3,
        time_reduction_after_layer: after,
        time_reduction_factor: 2,
        output_dim: 5,
    }
}

#[test]
fn time_reduce_shapes() {
    let f: Vec<f64> = (0..12).map(f64::from).collect();
    let (out, n) = time_reduce(&f, 4, 3, 2);
    assert_eq!(n, 2);
    assert_eq!(out.len(), 12);
    assert_eq!(&out[..6], &[0.0, 1.0, 2.0, 3.0, 4.0, 5.0]);
    let (out, n) = time_reduce(&f[..3], 1, 3, 2);
    assert_eq!((n, out), (1, vec![0.0, 1.0, 2.0, 0.0, 0.0, 0.0]));
    let five: Vec<f64> = vec![1.0; 15];
    assert_eq!(time_reduce(&five, 5, 3, 2).1, 3);
}

#[test]
fn config_validation() {
    assert!(cfg(2, Some(2)).validate().is_err());
    assert!(cfg(2, Some(0)).validate().is_err());
    assert!(cfg(2, Some(1)).validate().is_ok());
    assert!(cfg(0, None).validate().is_err());
}

#[test]
fn zero_parameters_give_zero_logits() {
    let p = EncoderParams::<f64>::zeros(&cfg(2, Some(1))).unwrap();
    let frames = Tensor::filled(&[5, 3], 0.7);
    let (out, _) = encoder_forward(&p, &frames).unwrap();
    assert_eq!(out.logits.shape(), &[3, 5]);
    assert!(out.logits.data().iter().all(|&v| v == 0.0));
}

#[test]
fn default_student_shape_halves_frames() {
    let c = EncoderConfig {
        num_layers: 4,
        hidden_units: 6,
        input_dim: 4,
        time_reduction_after_layer: Some(2),
        time_reduction_factor: 2,
        output_dim: 7,
    };
    let p = EncoderParams::<f32>::init(&c, &mut Rng::new(1)).unwrap();
    let (out, _) = encoder_forward(&p, &Tensor::filled(&[10, 4], 0.1)).unwrap();
    assert_eq!(out.reduced_length, 5);
    assert_eq!(c.output_frames(10), 5);
    assert_eq!(p.layers[2].input_dim(), 12);
}

#[test]
fn rejects_wrong_feature_dim() {
    let p = EncoderParams::<f64>::zeros(&cfg(1, None)).unwrap();
    assert!(encoder_forward(&p, &Tensor::zeros(&[4, 2])).is_err());
}
