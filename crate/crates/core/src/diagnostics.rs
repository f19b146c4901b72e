//! Entropy densities of the three model components, encoder confusion
//! tables, and teacher-student encoder error curves.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use crate::data::SequenceBatch;
use crate::error::{invalid, Result};
use crate::lattice::{JointLattice, LabelSequence};
use crate::network::decoder::decoder_forward;
use crate::network::encoder::encoder_forward;
use crate::network::joint::joint_forward;
use crate::network::Transducer;
use crate::numerics::{log_softmax, softmax_entropy, softmax_f64};
use crate::scalar::Scalar;
use crate::tensor::Tensor;
use crate::trainer::{MetricRecord, StepRecord};

pub const ENTROPY_BINS: usize = 64;

#[derive(Clone, Debug, PartialEq)]
pub struct Histogram {
    pub bin_edges: Vec<f64>,
    pub counts: Vec<u64>,
    pub total: u64,
}

impl Histogram {
    pub fn uniform(lo: f64, hi: f64, bins: usize) -> Self {
        let bin_edges = (0..=bins).map(|i| lo + (hi - lo) * i as f64 / bins as f64).collect();
        Self { bin_edges, counts: vec![0; bins], total: 0 }
    }

    /// Values outside the range land in the nearest edge bin.
    pub fn add(&mut self, x: f64) {
        let bins = self.counts.len();
        let (lo, hi) = (self.bin_edges[0], self.bin_edges[bins]);
        let pos = ((x - lo) / (hi - lo) * bins as f64).floor();
        let idx = if pos.is_nan() { 0 } else { (pos.max(0.0) as usize).min(bins - 1) };
        self.counts[idx] += 1;
        self.total += 1;
    }

    /// `bin_left_nats,bin_right_nats,count`
    pub fn to_csv(&self) -> String {
        let mut out = String::from("bin_left_nats,bin_right_nats,count\n");
        for (i, c) in self.counts.iter().enumerate() {
            let _ = writeln!(out, "{},{},{}", self.bin_edges[i], self.bin_edges[i + 1], c);
        }
        out
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ComponentEntropy {
    pub histogram: Histogram,
    pub mean: f64,
}

impl ComponentEntropy {
    fn from_values(values: &[f64], max: f64) -> Self {
        let mut histogram = Histogram::uniform(0.0, max, ENTROPY_BINS);
        for &v in values {
            histogram.add(v);
        }
        let mean = if values.is_empty() { 0.0 } else { values.iter().sum::<f64>() / values.len() as f64 };
        Self { histogram, mean }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct EntropyReport {
    pub encoder: ComponentEntropy,
    pub decoder: ComponentEntropy,
    pub joint: ComponentEntropy,
}

/// Softmax entropies (nats) of every valid encoder frame, decoder step and
/// joint lattice node in `batch`.
pub fn entropy_histograms<S: Scalar>(model: Transducer<'_, S>, batch: &SequenceBatch<S>) -> Result<EntropyReport> {
    let (mut enc_h, mut dec_h, mut joint_h) = (Vec::new(), Vec::new(), Vec::new());
    for b in 0..batch.len() {
        let (enc, _) = encoder_forward(model.encoder, &batch.frames(b))?;
        let (dec, _) = decoder_forward(model.decoder, batch.labels[b].tokens(), None)?;
        let joint = joint_forward(&enc.logits, &dec)?;
        enc_h.extend((0..enc.logits.dim(0)).map(|t| softmax_entropy(enc.logits.row(t))));
        dec_h.extend((0..dec.dim(0)).map(|u| softmax_entropy(dec.row(u))));
        let v1 = joint.dim(2);
        joint_h.extend(joint.data().chunks(v1).map(softmax_entropy));
    }
    let max = (model.decoder.config.output_dim as f64).ln();
    Ok(EntropyReport {
        encoder: ComponentEntropy::from_values(&enc_h, max),
        decoder: ComponentEntropy::from_values(&dec_h, max),
        joint: ComponentEntropy::from_values(&joint_h, max),
    })
}

/// Greedy path through the lattice: at each node take the more probable of
/// blank and the next label, as long as the path can still finish. Returns the
/// frame at which each label is emitted.
pub fn greedy_forced_alignment(lattice: &JointLattice, labels: &LabelSequence) -> Vec<usize> {
    let frames = lattice.frames();
    let u_max = labels.len();
    let (mut t, mut u) = (0, 0);
    let mut emit_frames = Vec::with_capacity(u_max);
    while u < u_max {
        let lp = lattice.log_probs.lane(t * (u_max + 1) + u);
        let emit = t + 1 == frames || lp[labels.tokens()[u]] >= lp[labels.blank()];
        if emit {
            emit_frames.push(t);
            u += 1;
        } else {
            t += 1;
        }
    }
    emit_frames
}

#[derive(Clone, Debug, PartialEq)]
pub struct ConfusionRow {
    pub ref_token: usize,
    pub rank: usize,
    pub token: usize,
    pub mass: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ConfusionTable {
    pub rows: Vec<ConfusionRow>,
    /// Fraction of attributed frames whose encoder argmax is the reference token.
    pub top1_accuracy: f64,
    pub frames: usize,
}

impl ConfusionTable {
    /// Listed tokens for `reference`, in rank order.
    pub fn top_tokens(&self, reference: usize) -> Vec<usize> {
        self.rows.iter().filter(|r| r.ref_token == reference).map(|r| r.token).collect()
    }

    /// `ref_token\trank\ttoken\tmass`
    pub fn to_tsv(&self) -> String {
        let mut out = String::from("ref_token\trank\ttoken\tmass\n");
        for r in &self.rows {
            let _ = writeln!(out, "{}\t{}\t{}\t{:.6}", r.ref_token, r.rank, r.token, r.mass);
        }
        out
    }
}

/// For each reference token, the encoder softmax averaged over the frames the
/// greedy forced path attributes to it, reduced to its `top_n` entries.
pub fn confusion_table<S: Scalar>(
    model: Transducer<'_, S>,
    batch: &SequenceBatch<S>,
    top_n: usize,
) -> Result<ConfusionTable> {
    let v1 = model.decoder.config.output_dim;
    if top_n == 0 || top_n > v1 {
        return Err(invalid!("top_n {top_n} outside [1, {v1}]"));
    }
    let mut sums: BTreeMap<usize, (Vec<f64>, usize)> = BTreeMap::new();
    let (mut hits, mut frames) = (0usize, 0usize);
    for b in 0..batch.len() {
        let labels = &batch.labels[b];
        let (enc, _) = encoder_forward(model.encoder, &batch.frames(b))?;
        let (dec, _) = decoder_forward(model.decoder, labels.tokens(), None)?;
        let lattice = JointLattice::evaluate(&joint_forward(&enc.logits, &dec)?, labels)?;
        for (u, t) in greedy_forced_alignment(&lattice, labels).into_iter().enumerate() {
            let r = labels.tokens()[u];
            let p = softmax_f64(enc.logits.row(t));
            let best = (0..v1).fold(0, |best, k| if p[k] > p[best] { k } else { best });
            hits += usize::from(best == r);
            frames += 1;
            let entry = sums.entry(r).or_insert_with(|| (vec![0.0; v1], 0));
            for (acc, x) in entry.0.iter_mut().zip(&p) {
                *acc += x;
            }
            entry.1 += 1;
        }
    }
    let mut rows = Vec::new();
    for (r, (mass, n)) in sums {
        let avg: Vec<f64> = mass.iter().map(|m| m / n as f64).collect();
        let mut order: Vec<usize> = (0..v1).collect();
        order.sort_by(|&a, &b| avg[b].partial_cmp(&avg[a]).unwrap_or(std::cmp::Ordering::Equal));
        for (rank, &k) in order.iter().take(top_n).enumerate() {
            rows.push(ConfusionRow { ref_token: r, rank: rank + 1, token: k, mass: avg[k] });
        }
    }
    let top1_accuracy = if frames == 0 { 0.0 } else { hits as f64 / frames as f64 };
    Ok(ConfusionTable { rows, top1_accuracy, frames })
}

/// `ts_encoder_mse` series of several runs aligned on step.
#[derive(Clone, Debug, PartialEq)]
pub struct ErrorCurves {
    pub names: Vec<String>,
    pub steps: Vec<u64>,
    /// `series[run][i]` at `steps[i]`; `None` where a run has no record.
    pub series: Vec<Vec<Option<f64>>>,
    /// Mean over each run's last `window` step records.
    pub final_means: Vec<f64>,
}

impl ErrorCurves {
    pub fn to_csv(&self) -> String {
        let mut out = String::from("step");
        for n in &self.names {
            let _ = write!(out, ",{n}");
        }
        out.push('\n');
        for (i, step) in self.steps.iter().enumerate() {
            let _ = write!(out, "{step}");
            for s in &self.series {
                match s[i] {
                    Some(v) => {
                        let _ = write!(out, ",{v}");
                    }
                    None => out.push(','),
                }
            }
            out.push('\n');
        }
        out
    }

    pub fn summary_csv(&self) -> String {
        let mut out = String::from("run,final_window_mean_mse\n");
        for (n, m) in self.names.iter().zip(&self.final_means) {
            let _ = writeln!(out, "{n},{m}");
        }
        out
    }
}

/// Aligns the teacher-student encoder error of each named log by step.
pub fn ts_error_curve(runs: &[(String, Vec<MetricRecord>)], window: usize) -> Result<ErrorCurves> {
    let mut per_run: Vec<BTreeMap<u64, f64>> = Vec::with_capacity(runs.len());
    let mut final_means = Vec::with_capacity(runs.len());
    for (name, records) in runs {
        let steps: Vec<&StepRecord> = records
            .iter()
            .filter_map(|r| match r {
                MetricRecord::Step(s) => Some(s),
                _ => None,
            })
            .collect();
        if steps.is_empty() {
            return Err(invalid!("run {name} has no step records"));
        }
        let mut map = BTreeMap::new();
        for s in &steps {
            let v = s.ts_encoder_mse.ok_or_else(|| invalid!("run {name} lacks ts_encoder_mse at step {}", s.step))?;
            map.insert(s.step, v);
        }
        let tail: Vec<f64> = map.values().rev().take(window.max(1)).copied().collect();
        final_means.push(tail.iter().sum::<f64>() / tail.len() as f64);
        per_run.push(map);
    }
    let mut all: Vec<u64> = per_run.iter().flat_map(|m| m.keys().copied()).collect();
    all.sort_unstable();
    all.dedup();
    let series = per_run.iter().map(|m| all.iter().map(|s| m.get(s).copied()).collect()).collect();
    Ok(ErrorCurves { names: runs.iter().map(|(n, _)| n.clone()).collect(), steps: all, series, final_means })
}

/// A gnuplot script plotting `csv` columns 2.. against column 1.
pub fn gnuplot_script(csv_file: &str, columns: &[String], xlabel: &str, ylabel: &str) -> String {
    let mut out = String::new();
    let _ = writeln!(out, "set datafile separator ','");
    let _ = writeln!(out, "set key autotitle columnhead");
    let _ = writeln!(out, "set xlabel '{xlabel}'");
    let _ = writeln!(out, "set ylabel '{ylabel}'");
    let plots: Vec<String> = (0..columns.len())
        .map(|i| format!("'{csv_file}' using 1:{} with lines title '{}'", i + 2, columns[i]))
        .collect();
    let _ = writeln!(out, "plot {}", plots.join(", \\\n     "));
    out
}

/// Gnuplot script for entropy histogram CSVs (bin centres against counts).
pub fn entropy_gnuplot(files: &[(String, String)]) -> String {
    let mut out = String::from("set datafile separator ','\nset xlabel 'entropy (nats)'\nset ylabel 'count'\n");
    let plots: Vec<String> = files
        .iter()
        .map(|(f, name)| format!("'{f}' every ::1 using (($1+$2)/2):3 with steps title '{name}'"))
        .collect();
    let _ = writeln!(out, "plot {}", plots.join(", \\\n     "));
    out
}

/// Log-softmax helper kept for symmetry with the lattice kernels.
pub fn component_log_probs<S: Scalar>(logits: &Tensor<S>) -> Vec<Vec<f64>> {
    (0..logits.dim(0)).map(|r| log_softmax(logits.row(r))).collect()
}
