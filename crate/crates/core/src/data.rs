//! Synthetic "toy acoustic" corpora.
//!
//! Every token owns a fixed prototype: a short sequence of Gaussian feature
//! frames. An utterance is the concatenation of its tokens' prototypes plus iid
//! Gaussian noise. Confusion pairs `(a, b, overlap)` make token `b`'s prototype
//! a blend of `a`'s and a fresh draw, so the two become acoustically similar.

use std::fs;
use std::io::{BufWriter, Write};
use std::path::Path;

use byteorder::{LittleEndian, ReadBytesExt, WriteBytesExt};
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::lattice::LabelSequence;
use crate::rng::{Rng, Stream};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TaskSpec {
    /// Number of non-blank tokens `V`.
    pub vocab_size: usize,
    pub feature_dim: usize,
    /// Inclusive range of prototype lengths in frames.
    pub duration_range: [usize; 2],
    pub noise_sigma: f64,
    /// `(a, b, overlap)` triples; `b` is blended toward `a`.
    pub confusion_pairs: Vec<(usize, usize, f64)>,
    /// Inclusive range of utterance lengths in tokens.
    pub utterance_len_range: [usize; 2],
    pub seed: u64,
}

impl Default for TaskSpec {
    fn default() -> Self {
        Self {
            vocab_size: 32,
            feature_dim: 8,
            duration_range: [2, 5],
            noise_sigma: 0.3,
            confusion_pairs: vec![(0, 1, 0.9), (2, 3, 0.9), (4, 5, 0.8), (6, 7, 0.8)],
            utterance_len_range: [3, 8],
            seed: 1,
        }
    }
}

impl TaskSpec {
    pub fn validate(&self) -> Result<()> {
        if self.vocab_size < 2 {
            return Err(invalid!("vocab_size must be at least 2"));
        }
        if self.feature_dim == 0 {
            return Err(invalid!("feature_dim must be positive"));
        }
        let [dmin, dmax] = self.duration_range;
        if dmin < 1 || dmin > dmax {
            return Err(invalid!("duration_range {:?} must satisfy 1 <= min <= max", self.duration_range));
        }
        let [lmin, lmax] = self.utterance_len_range;
        if lmin > lmax {
            return Err(invalid!("utterance_len_range {:?} has min > max", self.utterance_len_range));
        }
        if !(self.noise_sigma >= 0.0 && self.noise_sigma.is_finite()) {
            return Err(invalid!("noise_sigma must be a finite non-negative number"));
        }
        for &(a, b, overlap) in &self.confusion_pairs {
            if a >= self.vocab_size || b >= self.vocab_size || a == b {
                return Err(invalid!("confusion pair ({a}, {b}) is not two distinct tokens"));
            }
            if !(0.0..=1.0).contains(&overlap) {
                return Err(invalid!("overlap {overlap} outside [0, 1]"));
            }
        }
        Ok(())
    }

    pub fn num_classes(&self) -> usize {
        self.vocab_size + 1
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Utterance {
    /// `[T, d]`
    pub features: Tensor<f32>,
    pub tokens: Vec<usize>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Corpus {
    pub spec: TaskSpec,
    pub utterances: Vec<Utterance>,
}

impl Corpus {
    pub fn len(&self) -> usize {
        self.utterances.len()
    }

    pub fn is_empty(&self) -> bool {
        self.utterances.is_empty()
    }

    fn subset(&self, indices: &[usize]) -> Corpus {
        Corpus { spec: self.spec.clone(), utterances: indices.iter().map(|&i| self.utterances[i].clone()).collect() }
    }
}

/// Per-token prototype frame sequences `[duration, d]`, in `f64`.
pub fn prototypes(spec: &TaskSpec) -> Result<Vec<Tensor<f64>>> {
    spec.validate()?;
    let mut rng = Rng::stream(spec.seed, Stream::Prototypes);
    let [dmin, dmax] = spec.duration_range;
    let mut durations: Vec<usize> = (0..spec.vocab_size).map(|_| rng.int_inclusive(dmin, dmax)).collect();
    for &(a, b, _) in &spec.confusion_pairs {
        durations[b] = durations[a];
    }
    let d = spec.feature_dim;
    let mut protos: Vec<Tensor<f64>> = durations
        .iter()
        .map(|&len| Tensor::from_vec(&[len, d], (0..len * d).map(|_| rng.normal()).collect()).expect("shape"))
        .collect();
    for &(a, b, overlap) in &spec.confusion_pairs {
        let source = protos[a].clone();
        for (pb, &pa) in protos[b].data_mut().iter_mut().zip(source.data()) {
            *pb = overlap * pa + (1.0 - overlap) * *pb;
        }
    }
    Ok(protos)
}

pub fn generate_corpus(spec: &TaskSpec, num_utterances: usize) -> Result<Corpus> {
    let protos = prototypes(spec)?;
    let mut rng = Rng::stream(spec.seed, Stream::Utterances);
    let d = spec.feature_dim;
    let [lmin, lmax] = spec.utterance_len_range;
    let mut utterances = Vec::with_capacity(num_utterances);
    for _ in 0..num_utterances {
        let len = rng.int_inclusive(lmin, lmax);
        let tokens: Vec<usize> = (0..len).map(|_| rng.below(spec.vocab_size)).collect();
        let frames: usize = tokens.iter().map(|&t| protos[t].dim(0)).sum();
        let mut data = Vec::with_capacity(frames * d);
        for &t in &tokens {
            for &v in protos[t].data() {
                data.push((v + spec.noise_sigma * rng.normal()) as f32);
            }
        }
        utterances.push(Utterance { features: Tensor::from_vec(&[frames, d], data)?, tokens });
    }
    Ok(Corpus { spec: spec.clone(), utterances })
}

/// A zero-padded minibatch. Padding never reaches any recursion: every
/// consumer slices utterances by their true lengths.
#[derive(Clone, Debug, PartialEq)]
pub struct SequenceBatch<S> {
    /// `[B, T_max, d]`
    pub features: Tensor<S>,
    pub feature_lengths: Vec<usize>,
    pub labels: Vec<LabelSequence>,
    pub label_lengths: Vec<usize>,
}

impl<S: Scalar> SequenceBatch<S> {
    pub fn from_utterances(utts: &[&Utterance], num_classes: usize) -> Result<Self> {
        if utts.is_empty() {
            return Err(invalid!("cannot batch zero utterances"));
        }
        let d = utts[0].features.dim(1);
        let t_max = utts.iter().map(|u| u.features.dim(0)).max().unwrap_or(0);
        let mut features = Tensor::zeros(&[utts.len(), t_max, d]);
        for (b, u) in utts.iter().enumerate() {
            let dst = &mut features.row_mut(b)[..u.features.len()];
            for (o, &v) in dst.iter_mut().zip(u.features.data()) {
                *o = S::of(v as f64);
            }
        }
        let labels =
            utts.iter().map(|u| LabelSequence::new(u.tokens.clone(), num_classes)).collect::<Result<Vec<_>>>()?;
        Ok(Self {
            features,
            feature_lengths: utts.iter().map(|u| u.features.dim(0)).collect(),
            label_lengths: utts.iter().map(|u| u.tokens.len()).collect(),
            labels,
        })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn feature_dim(&self) -> usize {
        self.features.dim(2)
    }

    /// Unpadded `[T_b, d]` frames of utterance `b`.
    pub fn frames(&self, b: usize) -> Tensor<S> {
        let d = self.feature_dim();
        let len = self.feature_lengths[b];
        Tensor::from_vec(&[len, d], self.features.row(b)[..len * d].to_vec()).expect("length within padded row")
    }
}

/// Shuffles with `shuffle_seed` and cuts into batches; the last partial batch is kept.
pub fn make_batches<S: Scalar>(corpus: &Corpus, batch_size: usize, shuffle_seed: u64) -> Result<Vec<SequenceBatch<S>>> {
    if corpus.is_empty() {
        return Err(invalid!("cannot batch an empty corpus"));
    }
    if batch_size == 0 {
        return Err(invalid!("batch_size must be at least 1"));
    }
    let mut order: Vec<usize> = (0..corpus.len()).collect();
    Rng::stream(shuffle_seed, Stream::Shuffle).shuffle(&mut order);
    ordered_batches(corpus, &order, batch_size)
}

/// Batches in corpus order, no shuffling.
pub fn sequential_batches<S: Scalar>(corpus: &Corpus, batch_size: usize) -> Result<Vec<SequenceBatch<S>>> {
    if corpus.is_empty() || batch_size == 0 {
        return Err(invalid!("need a non-empty corpus and positive batch size"));
    }
    ordered_batches(corpus, &(0..corpus.len()).collect::<Vec<_>>(), batch_size)
}

fn ordered_batches<S: Scalar>(corpus: &Corpus, order: &[usize], batch_size: usize) -> Result<Vec<SequenceBatch<S>>> {
    order
        .chunks(batch_size)
        .map(|idx| {
            let utts: Vec<&Utterance> = idx.iter().map(|&i| &corpus.utterances[i]).collect();
            SequenceBatch::from_utterances(&utts, corpus.spec.num_classes())
        })
        .collect()
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Dev,
    Test,
}

impl Split {
    pub fn name(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Dev => "dev",
            Split::Test => "test",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "train" => Some(Split::Train),
            "dev" => Some(Split::Dev),
            "test" => Some(Split::Test),
            _ => None,
        }
    }
}

/// Deterministic disjoint assignment of utterance indices to splits.
pub fn split_assignment(n: usize, fractions: [f64; 3], seed: u64) -> Result<Vec<Split>> {
    if fractions.iter().any(|f| !(0.0..=1.0).contains(f)) {
        return Err(invalid!("split fractions {fractions:?} must lie in [0, 1]"));
    }
    if (fractions.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
        return Err(invalid!("split fractions {fractions:?} must sum to 1"));
    }
    let mut order: Vec<usize> = (0..n).collect();
    Rng::stream(seed, Stream::Split).shuffle(&mut order);
    let n_train = (fractions[0] * n as f64).round() as usize;
    let n_dev = ((fractions[1] * n as f64).round() as usize).min(n - n_train);
    let mut out = vec![Split::Test; n];
    for (rank, &i) in order.iter().enumerate() {
        out[i] = if rank < n_train {
            Split::Train
        } else if rank < n_train + n_dev {
            Split::Dev
        } else {
            Split::Test
        };
    }
    Ok(out)
}

pub fn split(corpus: &Corpus, fractions: [f64; 3], seed: u64) -> Result<(Corpus, Corpus, Corpus)> {
    let assignment = split_assignment(corpus.len(), fractions, seed)?;
    Ok(apply_split(corpus, &assignment))
}

pub fn apply_split(corpus: &Corpus, assignment: &[Split]) -> (Corpus, Corpus, Corpus) {
    let pick = |s: Split| -> Vec<usize> { (0..corpus.len()).filter(|&i| assignment[i] == s).collect() };
    (corpus.subset(&pick(Split::Train)), corpus.subset(&pick(Split::Dev)), corpus.subset(&pick(Split::Test)))
}

pub const CORPUS_FORMAT_VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
struct CorpusHeader {
    format_version: u32,
    task: TaskSpec,
    num_utterances: usize,
    feature_dim: usize,
}

/// Writes `header.json`, `frames.bin` (little-endian f32, row-major),
/// `frames.idx` (`offset_in_floats num_frames` per line), `labels.txt` and
/// `splits.txt` into `dir`.
pub fn save_corpus(dir: &Path, corpus: &Corpus, assignment: &[Split]) -> Result<()> {
    if assignment.len() != corpus.len() {
        return Err(invalid!("split assignment covers {} of {} utterances", assignment.len(), corpus.len()));
    }
    fs::create_dir_all(dir)?;
    let header = CorpusHeader {
        format_version: CORPUS_FORMAT_VERSION,
        task: corpus.spec.clone(),
        num_utterances: corpus.len(),
        feature_dim: corpus.spec.feature_dim,
    };
    fs::write(dir.join("header.json"), serde_json::to_string_pretty(&header)? + "\n")?;
    let mut frames = BufWriter::new(fs::File::create(dir.join("frames.bin"))?);
    let mut index = String::new();
    let mut labels = String::new();
    let mut splits = String::new();
    let mut offset = 0usize;
    for (u, s) in corpus.utterances.iter().zip(assignment) {
        for &v in u.features.data() {
            frames.write_f32::<LittleEndian>(v)?;
        }
        index.push_str(&format!("{} {}\n", offset, u.features.dim(0)));
        offset += u.features.len();
        let line: Vec<String> = u.tokens.iter().map(usize::to_string).collect();
        labels.push_str(&line.join(" "));
        labels.push('\n');
        splits.push_str(s.name());
        splits.push('\n');
    }
    frames.flush()?;
    fs::write(dir.join("frames.idx"), index)?;
    fs::write(dir.join("labels.txt"), labels)?;
    fs::write(dir.join("splits.txt"), splits)?;
    Ok(())
}

pub fn load_corpus(dir: &Path) -> Result<(Corpus, Vec<Split>)> {
    let header: CorpusHeader = serde_json::from_str(&fs::read_to_string(dir.join("header.json"))?)?;
    if header.format_version != CORPUS_FORMAT_VERSION {
        return Err(Error::Corpus(format!("unsupported corpus version {}", header.format_version)));
    }
    header.task.validate()?;
    let d = header.feature_dim;
    let raw = fs::read(dir.join("frames.bin"))?;
    if raw.len() % 4 != 0 {
        return Err(Error::Corpus("frames.bin is not a whole number of f32 values".into()));
    }
    let mut cursor = std::io::Cursor::new(raw);
    let mut floats = Vec::new();
    while let Ok(v) = cursor.read_f32::<LittleEndian>() {
        floats.push(v);
    }
    let index = fs::read_to_string(dir.join("frames.idx"))?;
    let labels = fs::read_to_string(dir.join("labels.txt"))?;
    let splits = fs::read_to_string(dir.join("splits.txt"))?;
    let mut utterances = Vec::with_capacity(header.num_utterances);
    let mut assignment = Vec::with_capacity(header.num_utterances);
    for ((idx_line, label_line), split_line) in index.lines().zip(labels.lines()).zip(splits.lines()) {
        let mut parts = idx_line.split_whitespace().map(str::parse::<usize>);
        let (Some(Ok(offset)), Some(Ok(frames))) = (parts.next(), parts.next()) else {
            return Err(Error::Corpus(format!("bad index line {idx_line:?}")));
        };
        let end = offset + frames * d;
        if end > floats.len() {
            return Err(Error::Corpus("index points past the end of frames.bin".into()));
        }
        let tokens = label_line
            .split_whitespace()
            .map(|t| t.parse::<usize>().map_err(|_| Error::Corpus(format!("bad token {t:?}"))))
            .collect::<Result<Vec<_>>>()?;
        if let Some(&t) = tokens.iter().find(|&&t| t >= header.task.vocab_size) {
            return Err(Error::Corpus(format!("token {t} outside vocabulary")));
        }
        utterances.push(Utterance { features: Tensor::from_vec(&[frames, d], floats[offset..end].to_vec())?, tokens });
        assignment
            .push(Split::parse(split_line.trim()).ok_or_else(|| Error::Corpus(format!("bad split {split_line:?}")))?);
    }
    if utterances.len() != header.num_utterances {
        return Err(Error::Corpus(format!(
            "header promises {} utterances, found {}",
            header.num_utterances,
            utterances.len()
        )));
    }
    Ok((Corpus { spec: header.task, utterances }, assignment))
}
