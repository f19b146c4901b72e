//! Encoder distillation losses and the per-batch training steps that wire
//! them into co-learned, static-teacher and plain transducer training.

use serde::{Deserialize, Serialize};

use crate::data::SequenceBatch;
use crate::error::{invalid, shape_err, Result};
use crate::lattice::{JointLattice, LabelSequence};
use crate::network::decoder::{decoder_backward, decoder_forward, dropout_mask};
use crate::network::encoder::{encoder_backward, encoder_forward};
use crate::network::model::{forward_with_decoder, joint_grads, utterance_backward, utterance_forward};
use crate::network::{CoLearnParams, ParamSet, RnntParams};
use crate::numerics::top_k_indices;
use crate::parallel::map_indexed;
use crate::rng::{Rng, Stream};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DistillMode {
    ColearnSharedDecoder,
    StaticTeacherSeparate,
    ColearnNoDistill,
}

/// Whose logits pick the top-k positions of a frame.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TopKSource {
    #[default]
    Teacher,
    Student,
    Union,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DistillConfig {
    pub lambda: f64,
    pub top_k: Option<usize>,
    #[serde(default)]
    pub top_k_source: TopKSource,
    pub mode: DistillMode,
}

impl Default for DistillConfig {
    fn default() -> Self {
        Self { lambda: 1.0, top_k: None, top_k_source: TopKSource::Teacher, mode: DistillMode::ColearnSharedDecoder }
    }
}

impl DistillConfig {
    pub fn validate(&self, num_classes: usize) -> Result<()> {
        if !(self.lambda >= 0.0 && self.lambda.is_finite()) {
            return Err(invalid!("lambda must be finite and non-negative, got {}", self.lambda));
        }
        if let Some(k) = self.top_k {
            if k == 0 || k > num_classes {
                return Err(invalid!("top_k {k} outside [1, {num_classes}]"));
            }
        }
        Ok(())
    }

    /// The weight actually applied to the distillation term.
    pub fn effective_lambda(&self) -> f64 {
        match self.mode {
            DistillMode::ColearnNoDistill => 0.0,
            _ => self.lambda,
        }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct LossBundle {
    pub rnnt_student: f64,
    pub rnnt_teacher: f64,
    pub distill: f64,
    pub total: f64,
}

/// Composes the objective; the teacher term is dropped when the teacher is frozen.
pub fn total_loss(rnnt_student: f64, rnnt_teacher: f64, distill: f64, config: &DistillConfig) -> LossBundle {
    let lambda = config.effective_lambda();
    let rnnt_teacher = match config.mode {
        DistillMode::StaticTeacherSeparate => 0.0,
        _ => rnnt_teacher,
    };
    LossBundle { rnnt_student, rnnt_teacher, distill, total: rnnt_student + rnnt_teacher + lambda * distill }
}

fn check_pair<S: Scalar>(student: &Tensor<S>, teacher: &Tensor<S>, valid_len: usize) -> Result<()> {
    if student.shape() != teacher.shape() || student.rank() != 2 {
        return Err(shape_err!(
            "student {:?} and teacher {:?} encoder logits differ",
            student.shape(),
            teacher.shape()
        ));
    }
    if valid_len > student.dim(0) {
        return Err(shape_err!("valid length {valid_len} exceeds {} frames", student.dim(0)));
    }
    Ok(())
}

/// Squared error over the selected positions of each valid frame, averaged
/// first over the positions and then over frames, together with its gradient
/// with respect to the student logits. `top_k = None` selects every position,
/// so the full loss and `top_k = V+1` run the same arithmetic.
pub fn masked_distill<S: Scalar>(
    student: &Tensor<S>,
    teacher: &Tensor<S>,
    valid_len: usize,
    top_k: Option<usize>,
    source: TopKSource,
) -> Result<(f64, Tensor<S>)> {
    check_pair(student, teacher, valid_len)?;
    let v1 = student.dim(1);
    let mut grad = Tensor::zeros(student.shape());
    if valid_len == 0 {
        return Ok((0.0, grad));
    }
    let n = valid_len as f64;
    let mut loss = 0.0;
    for t in 0..valid_len {
        let (s, tt) = (student.row(t), teacher.row(t));
        let selected = match top_k {
            None => (0..v1).collect(),
            Some(k) => frame_mask(s, tt, k, source)?,
        };
        let m = selected.len() as f64;
        let frame_sum: f64 = selected.iter().map(|&k| (s[k].f64() - tt[k].f64()).powi(2)).sum();
        loss += frame_sum / m;
        let g = grad.row_mut(t);
        for &k in &selected {
            g[k] = S::of(2.0 * (s[k].f64() - tt[k].f64()) / (n * m));
        }
    }
    Ok((loss / n, grad))
}

fn frame_mask<S: Scalar>(student: &[S], teacher: &[S], k: usize, source: TopKSource) -> Result<Vec<usize>> {
    let mut idx = match source {
        TopKSource::Teacher => top_k_indices(teacher, k)?,
        TopKSource::Student => top_k_indices(student, k)?,
        TopKSource::Union => {
            let mut both = top_k_indices(teacher, k)?;
            both.extend(top_k_indices(student, k)?);
            both
        }
    };
    idx.sort_unstable();
    idx.dedup();
    Ok(idx)
}

/// Mean squared difference between student and teacher encoder logits over
/// valid frames and all `V+1` dimensions.
pub fn encoder_distill_loss<S: Scalar>(student: &Tensor<S>, teacher: &Tensor<S>, valid_len: usize) -> Result<f64> {
    Ok(masked_distill(student, teacher, valid_len, None, TopKSource::Teacher)?.0)
}

/// `∂/∂student` of [`encoder_distill_loss`]: `2(S - T) / (valid_len · (V+1))`.
pub fn encoder_distill_grad<S: Scalar>(
    student: &Tensor<S>,
    teacher: &Tensor<S>,
    valid_len: usize,
) -> Result<Tensor<S>> {
    Ok(masked_distill(student, teacher, valid_len, None, TopKSource::Teacher)?.1)
}

/// Squared error restricted to the teacher's `k` largest logits per frame.
pub fn topk_masked_distill_loss<S: Scalar>(
    student: &Tensor<S>,
    teacher: &Tensor<S>,
    valid_len: usize,
    k: usize,
) -> Result<f64> {
    Ok(masked_distill(student, teacher, valid_len, Some(k), TopKSource::Teacher)?.0)
}

pub const KL_FLOOR: f64 = 1e-12;

/// `(P(next label), P(blank), remainder)` at node `(t, u)`. At `u = U` there is
/// no next label, so its bucket is empty.
pub fn collapsed_buckets(lattice: &JointLattice, labels: &LabelSequence, t: usize, u: usize) -> [f64; 3] {
    let lp = lattice.log_probs.lane(t * (labels.len() + 1) + u);
    let blank = lp[labels.blank()].exp();
    let next = if u < labels.len() { lp[labels.tokens()[u]].exp() } else { 0.0 };
    [next, blank, (1.0 - next - blank).max(0.0)]
}

/// Mean over lattice nodes of `KL(teacher || student)` between the
/// three-bucket collapses of the two lattices.
pub fn collapsed_kl_distill(student: &JointLattice, teacher: &JointLattice, labels: &LabelSequence) -> Result<f64> {
    if student.log_probs.shape() != teacher.log_probs.shape() {
        return Err(shape_err!("lattices {:?} and {:?} differ", student.log_probs.shape(), teacher.log_probs.shape()));
    }
    let frames = student.frames();
    let nodes = frames * (labels.len() + 1);
    let mut total = 0.0;
    for t in 0..frames {
        for u in 0..=labels.len() {
            let p = collapsed_buckets(teacher, labels, t, u);
            let q = collapsed_buckets(student, labels, t, u);
            total += bucket_kl(&p, &q);
        }
    }
    Ok(total / nodes as f64)
}

/// `Σ p ln(p / max(q, floor))` with `0 ln 0 = 0`.
pub fn bucket_kl(p: &[f64; 3], q: &[f64; 3]) -> f64 {
    p.iter().zip(q).filter(|(&pi, _)| pi > 0.0).map(|(&pi, &qi)| pi * (pi / qi.max(KL_FLOOR)).ln()).sum()
}

/// Loss values and parameter gradients of one batch, with the optional
/// per-batch mean squared teacher-student encoder-logit error.
#[derive(Clone, Debug)]
pub struct StepOutput<G> {
    pub losses: LossBundle,
    pub grads: G,
    pub ts_encoder_mse: Option<f64>,
}

fn mask_for<S: Scalar>(dropout: f64, rows: usize, hidden: usize, seed: Option<u64>, index: usize) -> Option<Vec<S>> {
    match seed {
        Some(seed) if dropout > 0.0 => {
            Some(dropout_mask(rows, hidden, dropout, &mut Rng::substream(seed, Stream::Dropout, index as u64)))
        }
        _ => None,
    }
}

fn reduce<S: Scalar, G: ParamSet<S>>(parts: Vec<G>, template: &G) -> G {
    let n = parts.len();
    let mut sum = template.zeros_like();
    for p in &parts {
        sum.add_scaled(S::one(), p);
    }
    if n > 0 {
        sum.scale(S::of(1.0 / n as f64));
    }
    sum
}

fn mean(values: impl Iterator<Item = f64>, n: usize) -> f64 {
    values.sum::<f64>() / n as f64
}

/// One plain transducer step: mean loss over the batch and its gradient.
/// `dropout_seed` enables decoder dropout (when configured) for training.
pub fn baseline_step<S: Scalar>(
    model: &RnntParams<S>,
    batch: &SequenceBatch<S>,
    dropout_seed: Option<u64>,
) -> Result<StepOutput<RnntParams<S>>> {
    let per = map_indexed(batch.len(), |b| -> Result<(f64, RnntParams<S>)> {
        let labels = &batch.labels[b];
        let cfg = &model.decoder.config;
        let mask = mask_for(cfg.dropout, labels.len() + 1, cfg.hidden_units, dropout_seed, b);
        let fwd = utterance_forward(model.view(), &batch.frames(b), labels, mask)?;
        let mut grads = model.zeros_like();
        utterance_backward(model.view(), &fwd, None, &mut grads)?;
        Ok((fwd.loss(), grads))
    })
    .into_iter()
    .collect::<Result<Vec<_>>>()?;
    let loss = mean(per.iter().map(|p| p.0), per.len());
    let grads = reduce(per.into_iter().map(|p| p.1).collect(), model);
    Ok(StepOutput {
        losses: LossBundle { rnnt_student: loss, rnnt_teacher: 0.0, distill: 0.0, total: loss },
        grads,
        ts_encoder_mse: None,
    })
}

/// Student and teacher encoders against one shared decoder output. The shared
/// decoder collects both transducer gradients; only the student encoder sees
/// the distillation gradient.
pub fn colearn_step<S: Scalar>(
    params: &CoLearnParams<S>,
    batch: &SequenceBatch<S>,
    config: &DistillConfig,
    dropout_seed: Option<u64>,
) -> Result<StepOutput<CoLearnParams<S>>> {
    let lambda = config.effective_lambda();
    struct Part<S> {
        rnnt_s: f64,
        rnnt_t: f64,
        distill: f64,
        mse: f64,
        grads: CoLearnParams<S>,
    }
    let per = map_indexed(batch.len(), |b| -> Result<Part<S>> {
        let labels = &batch.labels[b];
        let frames = batch.frames(b);
        let cfg = &params.decoder.config;
        let mask = mask_for(cfg.dropout, labels.len() + 1, cfg.hidden_units, dropout_seed, b);
        let (dec, dec_cache) = decoder_forward(&params.decoder, labels.tokens(), mask)?;
        let fs = forward_with_decoder(&params.student, &frames, labels, dec.clone(), dec_cache.clone())?;
        let ft = forward_with_decoder(&params.teacher, &frames, labels, dec, dec_cache)?;
        let (s_logits, t_logits) = (&fs.encoder.logits, &ft.encoder.logits);
        let valid = s_logits.dim(0);
        let (distill, d_distill) = masked_distill(s_logits, t_logits, valid, config.top_k, config.top_k_source)?;
        let mse = if config.top_k.is_none() { distill } else { encoder_distill_loss(s_logits, t_logits, valid)? };

        let mut grads = params.zeros_like();
        let (mut d_enc_s, d_dec_s) = joint_grads(&fs)?;
        if lambda != 0.0 {
            d_enc_s.add_scaled(S::of(lambda), &d_distill);
        }
        encoder_backward(&params.student, &fs.encoder_cache, &d_enc_s, &mut grads.student)?;
        let (d_enc_t, mut d_dec) = joint_grads(&ft)?;
        encoder_backward(&params.teacher, &ft.encoder_cache, &d_enc_t, &mut grads.teacher)?;
        d_dec.add_scaled(S::one(), &d_dec_s);
        decoder_backward(&params.decoder, &fs.decoder_cache, &d_dec, &mut grads.decoder)?;
        Ok(Part { rnnt_s: fs.loss(), rnnt_t: ft.loss(), distill, mse, grads })
    })
    .into_iter()
    .collect::<Result<Vec<_>>>()?;
    let n = per.len();
    let losses = total_loss(
        mean(per.iter().map(|p| p.rnnt_s), n),
        mean(per.iter().map(|p| p.rnnt_t), n),
        mean(per.iter().map(|p| p.distill), n),
        config,
    );
    let ts = mean(per.iter().map(|p| p.mse), n);
    let grads = reduce(per.into_iter().map(|p| p.grads).collect(), params);
    Ok(StepOutput { losses, grads, ts_encoder_mse: Some(ts) })
}

/// The scalar whose gradient [`colearn_step`] returns: both transducer losses
/// plus `λ` times the distillation loss against `frozen_teacher`, which is held
/// constant. Evaluated at `frozen_teacher == params.teacher` it equals the
/// reported total; differentiating it checks the stop-gradient contract.
pub fn colearn_objective<S: Scalar>(
    params: &CoLearnParams<S>,
    frozen_teacher: &crate::network::EncoderParams<S>,
    batch: &SequenceBatch<S>,
    config: &DistillConfig,
    dropout_seed: Option<u64>,
) -> Result<f64> {
    let out = colearn_step(params, batch, config, dropout_seed)?;
    let per = map_indexed(batch.len(), |b| -> Result<f64> {
        let frames = batch.frames(b);
        let (s, _) = encoder_forward(&params.student, &frames)?;
        let (t, _) = encoder_forward(frozen_teacher, &frames)?;
        Ok(masked_distill(&s.logits, &t.logits, s.logits.dim(0), config.top_k, config.top_k_source)?.0)
    })
    .into_iter()
    .collect::<Result<Vec<_>>>()?;
    let distill = mean(per.into_iter(), batch.len());
    Ok(out.losses.rnnt_student + out.losses.rnnt_teacher + config.effective_lambda() * distill)
}

/// Student transducer step distilled toward a frozen teacher encoder. Only
/// student gradients are produced.
pub fn static_teacher_step<S: Scalar>(
    student: &RnntParams<S>,
    teacher: &RnntParams<S>,
    batch: &SequenceBatch<S>,
    config: &DistillConfig,
    dropout_seed: Option<u64>,
) -> Result<StepOutput<RnntParams<S>>> {
    let lambda = config.effective_lambda();
    let per = map_indexed(batch.len(), |b| -> Result<(f64, f64, f64, RnntParams<S>)> {
        let labels = &batch.labels[b];
        let frames = batch.frames(b);
        let cfg = &student.decoder.config;
        let mask = mask_for(cfg.dropout, labels.len() + 1, cfg.hidden_units, dropout_seed, b);
        let fwd = utterance_forward(student.view(), &frames, labels, mask)?;
        let (t_out, _) = encoder_forward(&teacher.encoder, &frames)?;
        let s_logits = &fwd.encoder.logits;
        let valid = s_logits.dim(0);
        let (distill, mut d_distill) =
            masked_distill(s_logits, &t_out.logits, valid, config.top_k, config.top_k_source)?;
        let mse = if config.top_k.is_none() { distill } else { encoder_distill_loss(s_logits, &t_out.logits, valid)? };
        d_distill.scale(S::of(lambda));
        let mut grads = student.zeros_like();
        utterance_backward(student.view(), &fwd, (lambda != 0.0).then_some(&d_distill), &mut grads)?;
        Ok((fwd.loss(), distill, mse, grads))
    })
    .into_iter()
    .collect::<Result<Vec<_>>>()?;
    let n = per.len();
    let losses = total_loss(mean(per.iter().map(|p| p.0), n), 0.0, mean(per.iter().map(|p| p.1), n), config);
    let ts = mean(per.iter().map(|p| p.2), n);
    let grads = reduce(per.into_iter().map(|p| p.3).collect(), student);
    Ok(StepOutput { losses, grads, ts_encoder_mse: Some(ts) })
}

/// Two independent transducers trained on the same batch, each with its own
/// decoder, plus the encoder-logit error between them.
pub fn separate_step<S: Scalar>(
    student: &RnntParams<S>,
    teacher: &RnntParams<S>,
    batch: &SequenceBatch<S>,
    dropout_seed: Option<u64>,
) -> Result<(StepOutput<RnntParams<S>>, StepOutput<RnntParams<S>>)> {
    let teacher_seed = dropout_seed.map(|s| s ^ 0x5eed_7eac_4e00_0000);
    let s = baseline_step(student, batch, dropout_seed)?;
    let t = baseline_step(teacher, batch, teacher_seed)?;
    let mse = encoder_mse(student, teacher, batch)?;
    Ok((StepOutput { ts_encoder_mse: Some(mse), ..s }, StepOutput { ts_encoder_mse: Some(mse), ..t }))
}

/// Mean over utterances of the full encoder-logit squared error between two encoders.
pub fn encoder_mse<S: Scalar>(
    student: &RnntParams<S>,
    teacher: &RnntParams<S>,
    batch: &SequenceBatch<S>,
) -> Result<f64> {
    encoder_pair_mse(&student.encoder, &teacher.encoder, batch)
}

pub fn encoder_pair_mse<S: Scalar>(
    student: &crate::network::EncoderParams<S>,
    teacher: &crate::network::EncoderParams<S>,
    batch: &SequenceBatch<S>,
) -> Result<f64> {
    let per = map_indexed(batch.len(), |b| -> Result<f64> {
        let frames = batch.frames(b);
        let (s, _) = encoder_forward(student, &frames)?;
        let (t, _) = encoder_forward(teacher, &frames)?;
        encoder_distill_loss(&s.logits, &t.logits, s.logits.dim(0))
    })
    .into_iter()
    .collect::<Result<Vec<_>>>()?;
    Ok(mean(per.into_iter(), batch.len()))
}
