use codert::diagnostics::*;
use codert::gradcheck::toy;
use codert::network::Transducer;
use codert::network::{DecoderParams, EncoderParams};
use codert::rng::Rng;
use codert::trainer::MetricRecord;
use codert::trainer::StepRecord;

#[test]
fn zero_model_is_maximally_uncertain() {
    let enc = EncoderParams::<f64>::zeros(&toy::encoder_config(8, true)).unwrap();
    let dec = DecoderParams::<f64>::zeros(&toy::decoder_config(0.0)).unwrap();
    let batch = toy::batch(&mut Rng::new(1), 4, 6, 3);
    let r = entropy_histograms(Transducer { encoder: &enc, decoder: &dec }, &batch).unwrap();
    let max = (toy::CLASSES as f64).ln();
    for c in [&r.encoder, &r.decoder, &r.joint] {
        assert!((c.mean - max).abs() < 1e-12);
        assert_eq!(c.histogram.counts[ENTROPY_BINS - 1], c.histogram.total);
    }
    let frames: usize = (0..4).map(|b| batch.feature_lengths[b].div_ceil(2)).sum();
    assert_eq!(r.encoder.histogram.total as usize, frames);
    let dec_rows: usize = batch.label_lengths.iter().map(|u| u + 1).sum();
    assert_eq!(r.decoder.histogram.total as usize, dec_rows);
    let nodes: usize = (0..4).map(|b| batch.feature_lengths[b].div_ceil(2) * (batch.label_lengths[b] + 1)).sum();
    assert_eq!(r.joint.histogram.total as usize, nodes);
}

#[test]
fn confusion_masses_partition_with_full_list() {
    let model = toy::rnnt(3, true, 0.0).unwrap();
    let batch = toy::batch(&mut Rng::new(2), 5, 6, 3);
    let table = confusion_table(model.view(), &batch, toy::CLASSES).unwrap();
    let refs: std::collections::BTreeSet<usize> = table.rows.iter().map(|r| r.ref_token).collect();
    for r in refs {
        let rows: Vec<&ConfusionRow> = table.rows.iter().filter(|x| x.ref_token == r).collect();
        assert_eq!(rows.len(), toy::CLASSES);
        assert!((rows.iter().map(|x| x.mass).sum::<f64>() - 1.0).abs() < 1e-9);
        assert!(rows.windows(2).all(|w| w[0].mass >= w[1].mass));
    }
    let three = confusion_table(model.view(), &batch, 3).unwrap();
    assert!(three.rows.iter().all(|r| r.rank <= 3));
    assert!(confusion_table(model.view(), &batch, 0).is_err());
}

#[test]
fn forced_alignment_is_monotone_and_complete() {
    let model = toy::rnnt(4, false, 0.0).unwrap();
    let batch = toy::batch(&mut Rng::new(3), 6, 6, 3);
    for b in 0..batch.len() {
        let fwd = codert::network::utterance_forward(model.view(), &batch.frames(b), &batch.labels[b], None).unwrap();
        let frames = greedy_forced_alignment(&fwd.lattice, &batch.labels[b]);
        assert_eq!(frames.len(), batch.labels[b].len());
        assert!(frames.windows(2).all(|w| w[0] <= w[1]));
        assert!(frames.iter().all(|&t| t < fwd.lattice.frames()));
    }
}

fn step(step: u64, mse: Option<f64>) -> MetricRecord {
    MetricRecord::Step(StepRecord {
        step,
        lr: 1e-3,
        loss_rnnt_s: Some(1.0),
        loss_rnnt_t: None,
        loss_distill: None,
        loss_total: 1.0,
        grad_norm_s: None,
        grad_norm_t: None,
        grad_norm_dec: None,
        ts_encoder_mse: mse,
    })
}

#[test]
fn error_curves_align_and_validate() {
    let a: Vec<MetricRecord> = (1..=4).map(|s| step(s, Some(s as f64))).collect();
    let b: Vec<MetricRecord> = (2..=3).map(|s| step(s, Some(10.0))).collect();
    let c = ts_error_curve(&[("a".into(), a.clone()), ("b".into(), b)], 2).unwrap();
    assert_eq!(c.steps, vec![1, 2, 3, 4]);
    assert_eq!(c.series[1], vec![None, Some(10.0), Some(10.0), None]);
    assert_eq!(c.final_means, vec![3.5, 10.0]);
    assert!(c.to_csv().starts_with("step,a,b\n1,1,\n"));
    let same = ts_error_curve(&[("x".into(), a.clone()), ("y".into(), a)], 2).unwrap();
    assert_eq!(same.series[0], same.series[1]);
    let err = ts_error_curve(&[("broken".into(), vec![step(1, None)])], 1).unwrap_err();
    assert!(err.to_string().contains("broken"));
}

#[test]
fn histogram_bookkeeping() {
    let mut h = Histogram::uniform(0.0, 1.0, 4);
    for x in [0.0, 0.3, 0.99, 1.0, 2.0, -1.0] {
        h.add(x);
    }
    assert_eq!(h.counts, vec![2, 1, 0, 3]);
    assert_eq!(h.total, 6);
    assert_eq!(h.to_csv().lines().count(), 5);
}
