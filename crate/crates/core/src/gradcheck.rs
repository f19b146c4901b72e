//! Central finite-difference checks of analytic parameter gradients, plus the
//! toy model shapes the oracles run on.

use crate::data::SequenceBatch;
use crate::error::Result;
use crate::lattice::LabelSequence;
use crate::network::{init_params, CoLearnParams, DecoderConfig, EncoderChoice, EncoderConfig, ParamSet, RnntParams};
use crate::rng::Rng;
use crate::tensor::Tensor;

/// `|a - n| / max(|a|, |n|, floor)`
pub fn relative_error(analytic: f64, numeric: f64, floor: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(floor)
}

#[derive(Clone, Debug, PartialEq)]
pub struct GradSample {
    pub name: String,
    pub index: usize,
    pub analytic: f64,
    pub numeric: f64,
    pub rel_error: f64,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct GradReport {
    pub checked: usize,
    pub worst: Option<GradSample>,
}

impl GradReport {
    pub fn max_rel_error(&self) -> f64 {
        self.worst.as_ref().map_or(0.0, |w| w.rel_error)
    }

    pub fn passes(&self, tol: f64) -> bool {
        self.max_rel_error() < tol
    }

    pub fn merge(&mut self, other: GradReport) {
        self.checked += other.checked;
        if other.max_rel_error() > self.max_rel_error() || self.worst.is_none() {
            self.worst = other.worst.or(self.worst.take());
        }
    }
}

#[derive(Clone, Copy, Debug)]
pub struct CheckSettings {
    pub step: f64,
    pub floor: f64,
    /// Coordinates probed per tensor (all of them when the tensor is smaller).
    pub per_tensor: usize,
}

impl Default for CheckSettings {
    fn default() -> Self {
        Self { step: 1e-5, floor: 1e-5, per_tensor: 6 }
    }
}

/// Compares `analytic` against central differences of `loss` at sampled coordinates.
pub fn check_param_grads<P, F>(
    params: &P,
    analytic: &P,
    loss: F,
    settings: CheckSettings,
    rng: &mut Rng,
) -> Result<GradReport>
where
    P: ParamSet<f64>,
    F: Fn(&P) -> Result<f64>,
{
    let grads: Vec<(String, Tensor<f64>)> = analytic.named().into_iter().map(|(n, t)| (n, t.clone())).collect();
    let mut report = GradReport::default();
    let mut probe = params.clone();
    for (ti, (name, grad)) in grads.iter().enumerate() {
        let n = grad.len();
        let picks: Vec<usize> = if n <= settings.per_tensor {
            (0..n).collect()
        } else {
            (0..settings.per_tensor).map(|_| rng.below(n)).collect()
        };
        for idx in picks {
            let original = probe.named()[ti].1.data()[idx];
            set_coord(&mut probe, ti, idx, original + settings.step);
            let up = loss(&probe)?;
            set_coord(&mut probe, ti, idx, original - settings.step);
            let down = loss(&probe)?;
            set_coord(&mut probe, ti, idx, original);
            let numeric = (up - down) / (2.0 * settings.step);
            let a = grad.data()[idx];
            let rel = relative_error(a, numeric, settings.floor);
            report.checked += 1;
            if report.worst.as_ref().is_none_or(|w| rel > w.rel_error) {
                report.worst =
                    Some(GradSample { name: name.clone(), index: idx, analytic: a, numeric, rel_error: rel });
            }
        }
    }
    Ok(report)
}

fn set_coord<P: ParamSet<f64>>(p: &mut P, tensor: usize, idx: usize, value: f64) {
    let mut named = p.named_mut();
    named[tensor].1.data_mut()[idx] = value;
}

/// Toy shapes for the oracles: 2-layer / 8-unit encoder, 1-layer / 8-unit decoder.
pub mod toy {
    use super::*;

    pub const INPUT_DIM: usize = 3;
    pub const CLASSES: usize = 5;

    pub fn encoder_config(hidden: usize, reduce: bool) -> EncoderConfig {
        EncoderConfig {
            num_layers: 2,
            hidden_units: hidden,
            input_dim: INPUT_DIM,
            time_reduction_after_layer: reduce.then_some(1),
            time_reduction_factor: 2,
            output_dim: CLASSES,
        }
    }

    pub fn decoder_config(dropout: f64) -> DecoderConfig {
        DecoderConfig { embed_dim: 4, num_layers: 1, hidden_units: 8, output_dim: CLASSES, dropout }
    }

    pub fn rnnt(seed: u64, reduce: bool, dropout: f64) -> Result<RnntParams<f64>> {
        init_params(&encoder_config(8, reduce), &decoder_config(dropout), seed, EncoderChoice::Student)
    }

    pub fn colearn(seed: u64, dropout: f64) -> Result<CoLearnParams<f64>> {
        let student = rnnt(seed, true, dropout)?;
        let teacher = init_params(&encoder_config(8, true), &decoder_config(dropout), seed, EncoderChoice::Teacher)?;
        Ok(CoLearnParams { student: student.encoder, teacher: teacher.encoder, decoder: student.decoder })
    }

    /// Mixed-length batch with `T <= max_frames`, `U <= max_labels`.
    pub fn batch(rng: &mut Rng, size: usize, max_frames: usize, max_labels: usize) -> SequenceBatch<f64> {
        let lens: Vec<usize> = (0..size).map(|_| 1 + rng.below(max_frames)).collect();
        let t_max = *lens.iter().max().unwrap_or(&1);
        let mut features = Tensor::zeros(&[size, t_max, INPUT_DIM]);
        for (b, &len) in lens.iter().enumerate() {
            for v in &mut features.row_mut(b)[..len * INPUT_DIM] {
                *v = rng.normal();
            }
        }
        let labels: Vec<LabelSequence> = (0..size)
            .map(|_| {
                let u = rng.below(max_labels + 1);
                LabelSequence::new((0..u).map(|_| rng.below(CLASSES - 1)).collect(), CLASSES).expect("valid tokens")
            })
            .collect();
        SequenceBatch {
            features,
            feature_lengths: lens,
            label_lengths: labels.iter().map(LabelSequence::len).collect(),
            labels,
        }
    }
}
