use codert::data::SequenceBatch;
use codert::diagnostics::{confusion_table, entropy_histograms, ts_error_curve};
use codert::distill::{
    baseline_step, encoder_distill_grad, encoder_distill_loss, masked_distill, topk_masked_distill_loss, TopKSource,
};
use codert::gradcheck::toy;
use codert::lattice::{brute_force_loss, transducer_loss, LabelSequence};
use codert::network::{batch_loss, encoder_forward, init_params, joint_forward, model_forward, EncoderChoice};
use codert::numerics::softmax_entropy;
use codert::rng::Rng;
use codert::trainer::{MetricRecord, StepRecord};
use codert::Tensor;
use proptest::prelude::*;

fn lattice_case() -> impl Strategy<Value = (Tensor<f64>, LabelSequence)> {
    (1usize..=4, 0usize..=3, 2usize..=4).prop_flat_map(|(frames, u, classes)| {
        let n = frames * (u + 1) * classes;
        (prop::collection::vec(-4.0f64..4.0, n), prop::collection::vec(0..classes - 1, u)).prop_map(
            move |(logits, tokens)| {
                (
                    Tensor::from_vec(&[frames, u + 1, classes], logits).unwrap(),
                    LabelSequence::new(tokens, classes).unwrap(),
                )
            },
        )
    })
}

/// Copies the batch with every padded position overwritten.
fn poison_padding(batch: &SequenceBatch<f64>, value: f64) -> SequenceBatch<f64> {
    let mut out = batch.clone();
    let d = batch.feature_dim();
    for (b, &len) in batch.feature_lengths.iter().enumerate() {
        for v in &mut out.features.row_mut(b)[len * d..] {
            *v = value;
        }
    }
    out
}

fn single(batch: &SequenceBatch<f64>, b: usize) -> SequenceBatch<f64> {
    let frames = batch.frames(b);
    let len = frames.dim(0);
    SequenceBatch {
        features: Tensor::from_vec(&[1, len, batch.feature_dim()], frames.data().to_vec()).unwrap(),
        feature_lengths: vec![len],
        labels: vec![batch.labels[b].clone()],
        label_lengths: vec![batch.label_lengths[b]],
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn lattice_matches_path_enumeration((logits, labels) in lattice_case()) {
        let dp = transducer_loss(&logits, &labels).unwrap();
        let brute = brute_force_loss(&logits, &labels).unwrap();
        prop_assert!((dp - brute).abs() < 1e-6, "{} vs {}", dp, brute);
    }

    #[test]
    fn slice_shift_is_invisible((logits, labels) in lattice_case(), pick in 0usize..1000, c in -30.0f64..30.0) {
        let (frames, nodes, classes) = (logits.dim(0), logits.dim(1), logits.dim(2));
        let slice = pick % (frames * nodes);
        let mut shifted = logits.clone();
        for v in &mut shifted.data_mut()[slice * classes..(slice + 1) * classes] {
            *v += c;
        }
        let a = transducer_loss(&logits, &labels).unwrap();
        let b = transducer_loss(&shifted, &labels).unwrap();
        prop_assert!((a - b).abs() < 1e-9 * (1.0 + a.abs()));
    }

    #[test]
    fn joint_values_stay_inside_the_open_interval(
        enc in prop::collection::vec(-6.0f64..6.0, 12),
        dec in prop::collection::vec(-6.0f64..6.0, 8),
    ) {
        let e = Tensor::from_vec(&[3, 4], enc).unwrap();
        let d = Tensor::from_vec(&[2, 4], dec).unwrap();
        let j = joint_forward(&e, &d).unwrap();
        prop_assert_eq!(j.shape(), &[3, 2, 4][..]);
        prop_assert!(j.data().iter().all(|v| v.abs() < 1.0));
    }

    #[test]
    fn student_and_teacher_share_the_output_length(frames in 1usize..40, seed in 0u64..1000) {
        let mut rng = Rng::new(seed);
        let x = Tensor::from_vec(&[frames, toy::INPUT_DIM], (0..frames * toy::INPUT_DIM).map(|_| rng.normal()).collect()).unwrap();
        let dec = toy::decoder_config(0.0);
        let mut tcfg = toy::encoder_config(8, true);
        tcfg.num_layers = 3;
        let s = init_params::<f64>(&toy::encoder_config(6, true), &dec, seed, EncoderChoice::Student).unwrap();
        let t = init_params::<f64>(&tcfg, &dec, seed, EncoderChoice::Teacher).unwrap();
        let (so, _) = encoder_forward(&s.encoder, &x).unwrap();
        let (to, _) = encoder_forward(&t.encoder, &x).unwrap();
        prop_assert_eq!(so.logits.dim(0), to.logits.dim(0));
        prop_assert_eq!(so.logits.dim(0), frames.div_ceil(2));
    }

    #[test]
    fn padding_never_changes_the_loss(seed in 0u64..10_000, size in 2usize..5, junk in -1e3f64..1e3) {
        let mut rng = Rng::new(seed);
        let model = toy::rnnt(seed, seed % 2 == 0, 0.0).unwrap();
        let batch = toy::batch(&mut rng, size, 6, 3);
        let padded = batch_loss(model.view(), &poison_padding(&batch, junk)).unwrap();
        let per: f64 = (0..size).map(|b| batch_loss(model.view(), &single(&batch, b)).unwrap()).sum::<f64>() / size as f64;
        prop_assert!((padded - per).abs() < 1e-5 * (1.0 + per.abs()), "{} vs {}", padded, per);
    }

    #[test]
    fn batch_loss_is_the_mean_of_single_losses(seed in 0u64..10_000) {
        let mut rng = Rng::new(seed);
        let model = toy::rnnt(seed, true, 0.0).unwrap();
        let batch = toy::batch(&mut rng, 2, 6, 3);
        let pair = baseline_step(&model, &batch, None).unwrap().losses.total;
        let a = baseline_step(&model, &single(&batch, 0), None).unwrap().losses.total;
        let b = baseline_step(&model, &single(&batch, 1), None).unwrap().losses.total;
        prop_assert!((pair - (a + b) / 2.0).abs() < 1e-6);
    }

    #[test]
    fn forward_pass_is_bit_reproducible(seed in 0u64..10_000) {
        let mut rng = Rng::new(seed);
        let model = toy::rnnt(seed, true, 0.0).unwrap();
        let batch = toy::batch(&mut rng, 3, 6, 3);
        let a = model_forward(model.view(), &batch).unwrap();
        let b = model_forward(model.view(), &batch).unwrap();
        for (x, y) in a.iter().zip(&b) {
            prop_assert_eq!(&x.joint, &y.joint);
            prop_assert_eq!(x.loss().to_bits(), y.loss().to_bits());
        }
    }

    #[test]
    fn distill_loss_is_nonnegative_and_vanishes_only_on_equality(
        s in prop::collection::vec(-3.0f64..3.0, 15),
        t in prop::collection::vec(-3.0f64..3.0, 15),
        valid in 1usize..=3,
        k in 1usize..=5,
    ) {
        let st = Tensor::from_vec(&[3, 5], s.clone()).unwrap();
        let tt = Tensor::from_vec(&[3, 5], t.clone()).unwrap();
        let full = encoder_distill_loss(&st, &tt, valid).unwrap();
        prop_assert!(full >= 0.0);
        prop_assert_eq!(full == 0.0, s[..valid * 5] == t[..valid * 5]);
        prop_assert_eq!(encoder_distill_loss(&st, &st, valid).unwrap(), 0.0);
        prop_assert!(topk_masked_distill_loss(&st, &tt, valid, k).unwrap() >= 0.0);
        prop_assert_eq!(topk_masked_distill_loss(&st, &tt, valid, 5).unwrap().to_bits(), full.to_bits());
        for source in [TopKSource::Teacher, TopKSource::Student, TopKSource::Union] {
            prop_assert_eq!(masked_distill(&st, &st, valid, Some(k), source).unwrap().0, 0.0);
        }
        let g = encoder_distill_grad(&st, &tt, valid).unwrap();
        for r in 0..3 {
            for c in 0..5 {
                let expect = if r < valid { 2.0 * (s[r * 5 + c] - t[r * 5 + c]) / (valid as f64 * 5.0) } else { 0.0 };
                prop_assert!((g.at(&[r, c]) - expect).abs() < 1e-15);
            }
        }
    }

    #[test]
    fn entropies_lie_between_zero_and_log_classes(v in prop::collection::vec(-50.0f64..50.0, 2..40)) {
        let h = softmax_entropy(&v);
        prop_assert!(h >= 0.0 && h <= (v.len() as f64).ln() + 1e-12);
    }

    #[test]
    fn model_entropies_and_confusion_masses_are_bounded(seed in 0u64..10_000, stretch in 0.5f64..6.0) {
        use codert::network::ParamSet;
        let mut rng = Rng::new(seed);
        let mut model = toy::rnnt(seed, false, 0.0).unwrap();
        model.scale(stretch);
        let batch = toy::batch(&mut rng, 4, 6, 3);
        let max = (toy::CLASSES as f64).ln();
        let report = entropy_histograms(model.view(), &batch).unwrap();
        for c in [&report.encoder, &report.decoder, &report.joint] {
            prop_assert!(c.mean >= 0.0 && c.mean <= max + 1e-12);
            prop_assert_eq!(c.histogram.counts.iter().sum::<u64>(), c.histogram.total);
        }
        for top in 1..=toy::CLASSES {
            let table = confusion_table(model.view(), &batch, top).unwrap();
            let mut refs: Vec<usize> = table.rows.iter().map(|r| r.ref_token).collect();
            refs.dedup();
            for r in refs {
                let masses: Vec<f64> = table.rows.iter().filter(|x| x.ref_token == r).map(|x| x.mass).collect();
                prop_assert_eq!(masses.len(), top);
                prop_assert!(masses.iter().all(|&m| m >= 0.0));
                prop_assert!(masses.windows(2).all(|w| w[0] >= w[1]));
                let sum: f64 = masses.iter().sum();
                prop_assert!(sum <= 1.0 + 1e-12);
                if top == toy::CLASSES {
                    prop_assert!((sum - 1.0).abs() < 1e-12);
                }
            }
        }
    }

    #[test]
    fn error_curves_are_a_pure_function_of_the_logs(
        a in prop::collection::vec(prop::option::of(0.0f64..10.0), 1..30),
        b in prop::collection::vec(prop::option::of(0.0f64..10.0), 1..30),
        window in 1usize..10,
    ) {
        let log = |v: &[Option<f64>]| -> Vec<MetricRecord> {
            v.iter()
                .enumerate()
                .map(|(i, m)| MetricRecord::Step(StepRecord {
                    step: i as u64 + 1,
                    lr: 1e-3,
                    loss_rnnt_s: Some(1.0),
                    loss_rnnt_t: None,
                    loss_distill: None,
                    loss_total: 1.0,
                    grad_norm_s: None,
                    grad_norm_t: None,
                    grad_norm_dec: None,
                    ts_encoder_mse: *m,
                }))
                .collect()
        };
        let runs = vec![("a".to_string(), log(&a)), ("b".to_string(), log(&b))];
        let first = ts_error_curve(&runs, window);
        let second = ts_error_curve(&runs.clone(), window);
        match (first, second) {
            (Ok(x), Ok(y)) => {
                prop_assert_eq!(x.to_csv(), y.to_csv());
                prop_assert_eq!(x.summary_csv(), y.summary_csv());
                prop_assert_eq!(x, y);
            }
            (Err(x), Err(y)) => prop_assert_eq!(x.to_string(), y.to_string()),
            _ => prop_assert!(false, "results differ"),
        }
    }
}
