use codert::data::*;

fn small_spec() -> TaskSpec {
    TaskSpec { vocab_size: 6, confusion_pairs: vec![(0, 1, 1.0)], ..TaskSpec::default() }
}

#[test]
fn generation_is_deterministic() {
    let a = generate_corpus(&small_spec(), 20).unwrap();
    let b = generate_corpus(&small_spec(), 20).unwrap();
    assert_eq!(a, b);
    let other = generate_corpus(&TaskSpec { seed: 2, ..small_spec() }, 20).unwrap();
    assert_ne!(a, other);
}

#[test]
fn full_overlap_makes_prototypes_identical() {
    let protos = prototypes(&small_spec()).unwrap();
    assert_eq!(protos[0], protos[1]);
    assert_ne!(protos[2], protos[3]);
}

#[test]
fn noiseless_separable_task_is_classified_perfectly() {
    let spec = TaskSpec { noise_sigma: 0.0, confusion_pairs: vec![], vocab_size: 10, ..TaskSpec::default() };
    let protos = prototypes(&spec).unwrap();
    let corpus = generate_corpus(&spec, 30).unwrap();
    let d = spec.feature_dim;
    let (mut correct, mut total) = (0, 0);
    for u in &corpus.utterances {
        let mut t = 0;
        for &tok in &u.tokens {
            for f in 0..protos[tok].dim(0) {
                let frame = u.features.row(t + f);
                let nearest = (0..spec.vocab_size)
                    .flat_map(|k| (0..protos[k].dim(0)).map(move |r| (k, r)))
                    .map(|(k, r)| {
                        let p = protos[k].row(r);
                        let dist: f64 = (0..d).map(|i| (p[i] - frame[i] as f64).powi(2)).sum();
                        (dist, k)
                    })
                    .fold((f64::INFINITY, 0), |best, x| if x.0 < best.0 { x } else { best });
                correct += usize::from(nearest.1 == tok);
                total += 1;
            }
            t += protos[tok].dim(0);
        }
    }
    assert_eq!(correct, total);
}

#[test]
fn batches_partition_the_corpus() {
    let corpus = generate_corpus(&small_spec(), 23).unwrap();
    let batches: Vec<SequenceBatch<f32>> = make_batches(&corpus, 5, 9).unwrap();
    assert_eq!(batches.len(), 5);
    assert_eq!(batches.iter().map(|b| b.len()).sum::<usize>(), 23);
    assert_eq!(batches.last().unwrap().len(), 3);
    for b in &batches {
        let t_max = b.features.dim(1);
        for (i, &len) in b.feature_lengths.iter().enumerate() {
            assert!(b.features.row(i)[len * 8..t_max * 8].iter().all(|&v| v == 0.0));
        }
    }
    let again: Vec<SequenceBatch<f32>> = make_batches(&corpus, 5, 9).unwrap();
    assert_eq!(batches, again);
    let empty = Corpus { spec: small_spec(), utterances: vec![] };
    assert!(make_batches::<f32>(&empty, 4, 0).is_err());
}

#[test]
fn splits_are_disjoint_and_reproducible() {
    let corpus = generate_corpus(&small_spec(), 40).unwrap();
    let (train, dev, test) = split(&corpus, [1.0, 0.0, 0.0], 3).unwrap();
    assert_eq!((train.len(), dev.len(), test.len()), (40, 0, 0));
    let a = split_assignment(40, [0.5, 0.25, 0.25], 3).unwrap();
    assert_eq!(a, split_assignment(40, [0.5, 0.25, 0.25], 3).unwrap());
    assert_eq!(a.iter().filter(|&&s| s == Split::Train).count(), 20);
    assert_eq!(a.iter().filter(|&&s| s == Split::Dev).count(), 10);
    assert!(split_assignment(4, [0.5, 0.6, -0.1], 0).is_err());
    assert!(split_assignment(4, [0.5, 0.2, 0.2], 0).is_err());
}

#[test]
fn corpus_files_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let corpus = generate_corpus(&small_spec(), 7).unwrap();
    let assignment = split_assignment(7, [0.6, 0.2, 0.2], 1).unwrap();
    save_corpus(dir.path(), &corpus, &assignment).unwrap();
    let (loaded, splits) = load_corpus(dir.path()).unwrap();
    assert_eq!(loaded, corpus);
    assert_eq!(splits, assignment);
}

#[test]
fn spec_validation() {
    assert!(TaskSpec { vocab_size: 1, ..TaskSpec::default() }.validate().is_err());
    assert!(TaskSpec { duration_range: [0, 2], ..TaskSpec::default() }.validate().is_err());
    assert!(TaskSpec { confusion_pairs: vec![(0, 0, 0.5)], ..TaskSpec::default() }.validate().is_err());
    assert!(TaskSpec { confusion_pairs: vec![(0, 1, 1.5)], ..TaskSpec::default() }.validate().is_err());
}
