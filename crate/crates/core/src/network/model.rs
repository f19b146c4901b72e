//! Composition of encoder, prediction network, joint and lattice into a
//! trainable transducer, plus the parameter-set plumbing shared by trainers.

use super::decoder::{decoder_backward, decoder_forward, DecoderCache, DecoderParams};
use super::encoder::{encoder_backward, encoder_forward, EncoderCache, EncoderOutput, EncoderParams};
use super::joint::{joint_backward, joint_forward};
use crate::data::SequenceBatch;
use crate::error::Result;
use crate::lattice::{JointLattice, LabelSequence};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// A collection of named tensors that can double as its own gradient buffer.
pub trait ParamSet<S: Scalar>: Clone {
    fn named(&self) -> Vec<(String, &Tensor<S>)>;
    fn named_mut(&mut self) -> Vec<(String, &mut Tensor<S>)>;
    fn zeros_like(&self) -> Self;

    fn add_scaled(&mut self, alpha: S, other: &Self) {
        for ((_, a), (_, b)) in self.named_mut().into_iter().zip(other.named()) {
            a.add_scaled(alpha, b);
        }
    }

    fn scale(&mut self, alpha: S) {
        for (_, t) in self.named_mut() {
            t.scale(alpha);
        }
    }

    fn sum_sq(&self) -> f64 {
        self.named().iter().map(|(_, t)| t.sum_sq()).sum()
    }

    fn is_finite(&self) -> bool {
        self.named().iter().all(|(_, t)| t.is_finite())
    }

    fn num_values(&self) -> usize {
        self.named().iter().map(|(_, t)| t.len()).sum()
    }
}

impl<S: Scalar> ParamSet<S> for EncoderParams<S> {
    fn named(&self) -> Vec<(String, &Tensor<S>)> {
        self.tensors()
    }
    fn named_mut(&mut self) -> Vec<(String, &mut Tensor<S>)> {
        self.tensors_mut()
    }
    fn zeros_like(&self) -> Self {
        EncoderParams::zeros_like(self)
    }
}

impl<S: Scalar> ParamSet<S> for DecoderParams<S> {
    fn named(&self) -> Vec<(String, &Tensor<S>)> {
        self.tensors()
    }
    fn named_mut(&mut self) -> Vec<(String, &mut Tensor<S>)> {
        self.tensors_mut()
    }
    fn zeros_like(&self) -> Self {
        DecoderParams::zeros_like(self)
    }
}

fn prefixed<T>(prefix: &'static str, items: Vec<(String, T)>) -> impl Iterator<Item = (String, T)> {
    items.into_iter().map(move |(n, t)| (format!("{prefix}{n}"), t))
}

/// A complete transducer with its own encoder and decoder.
#[derive(Clone, Debug, PartialEq)]
pub struct RnntParams<S> {
    pub encoder: EncoderParams<S>,
    pub decoder: DecoderParams<S>,
}

impl<S: Scalar> RnntParams<S> {
    pub fn view(&self) -> Transducer<'_, S> {
        Transducer { encoder: &self.encoder, decoder: &self.decoder }
    }
}

impl<S: Scalar> ParamSet<S> for RnntParams<S> {
    fn named(&self) -> Vec<(String, &Tensor<S>)> {
        prefixed("encoder.", self.encoder.tensors()).chain(prefixed("decoder.", self.decoder.tensors())).collect()
    }
    fn named_mut(&mut self) -> Vec<(String, &mut Tensor<S>)> {
        let (e, d) = (&mut self.encoder, &mut self.decoder);
        prefixed("encoder.", e.tensors_mut()).chain(prefixed("decoder.", d.tensors_mut())).collect()
    }
    fn zeros_like(&self) -> Self {
        Self { encoder: self.encoder.zeros_like(), decoder: self.decoder.zeros_like() }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EncoderChoice {
    Student,
    Teacher,
}

impl EncoderChoice {
    pub fn role(self) -> &'static str {
        match self {
            EncoderChoice::Student => "student",
            EncoderChoice::Teacher => "teacher",
        }
    }
}

/// Student and teacher encoders sharing one prediction network.
#[derive(Clone, Debug, PartialEq)]
pub struct CoLearnParams<S> {
    pub student: EncoderParams<S>,
    pub teacher: EncoderParams<S>,
    pub decoder: DecoderParams<S>,
}

impl<S: Scalar> CoLearnParams<S> {
    pub fn view(&self, choice: EncoderChoice) -> Transducer<'_, S> {
        let encoder = match choice {
            EncoderChoice::Student => &self.student,
            EncoderChoice::Teacher => &self.teacher,
        };
        Transducer { encoder, decoder: &self.decoder }
    }
}

impl<S: Scalar> ParamSet<S> for CoLearnParams<S> {
    fn named(&self) -> Vec<(String, &Tensor<S>)> {
        prefixed("student.encoder.", self.student.tensors())
            .chain(prefixed("teacher.encoder.", self.teacher.tensors()))
            .chain(prefixed("decoder.", self.decoder.tensors()))
            .collect()
    }
    fn named_mut(&mut self) -> Vec<(String, &mut Tensor<S>)> {
        let (s, t, d) = (&mut self.student, &mut self.teacher, &mut self.decoder);
        prefixed("student.encoder.", s.tensors_mut())
            .chain(prefixed("teacher.encoder.", t.tensors_mut()))
            .chain(prefixed("decoder.", d.tensors_mut()))
            .collect()
    }
    fn zeros_like(&self) -> Self {
        Self {
            student: self.student.zeros_like(),
            teacher: self.teacher.zeros_like(),
            decoder: self.decoder.zeros_like(),
        }
    }
}

/// Borrowed encoder + decoder pair; what inference and evaluation operate on.
#[derive(Clone, Copy, Debug)]
pub struct Transducer<'a, S> {
    pub encoder: &'a EncoderParams<S>,
    pub decoder: &'a DecoderParams<S>,
}

/// Everything the forward pass of one utterance produced.
#[derive(Clone, Debug)]
pub struct UtteranceForward<S> {
    pub encoder: EncoderOutput<S>,
    pub encoder_cache: EncoderCache<S>,
    pub decoder_logits: Tensor<S>,
    pub decoder_cache: DecoderCache<S>,
    pub joint: Tensor<S>,
    pub lattice: JointLattice,
}

impl<S: Scalar> UtteranceForward<S> {
    pub fn loss(&self) -> f64 {
        self.lattice.loss()
    }

    /// `∂L/∂joint` in the model's precision.
    pub fn joint_grad(&self) -> Tensor<S> {
        self.lattice.grad_logits.cast()
    }
}

/// Encoder + joint + lattice for an already computed decoder output.
pub(crate) fn forward_with_decoder<S: Scalar>(
    encoder: &EncoderParams<S>,
    frames: &Tensor<S>,
    labels: &LabelSequence,
    decoder_logits: Tensor<S>,
    decoder_cache: DecoderCache<S>,
) -> Result<UtteranceForward<S>> {
    let (enc_out, encoder_cache) = encoder_forward(encoder, frames)?;
    let joint = joint_forward(&enc_out.logits, &decoder_logits)?;
    let lattice = JointLattice::evaluate(&joint, labels)?;
    Ok(UtteranceForward { encoder: enc_out, encoder_cache, decoder_logits, decoder_cache, joint, lattice })
}

pub fn utterance_forward<S: Scalar>(
    model: Transducer<'_, S>,
    frames: &Tensor<S>,
    labels: &LabelSequence,
    dropout_mask: Option<Vec<S>>,
) -> Result<UtteranceForward<S>> {
    let (dec, dec_cache) = decoder_forward(model.decoder, labels.tokens(), dropout_mask)?;
    forward_with_decoder(model.encoder, frames, labels, dec, dec_cache)
}

/// Joint backward: returns `(∂L/∂enc_logits, ∂L/∂dec_logits)`.
pub fn joint_grads<S: Scalar>(fwd: &UtteranceForward<S>) -> Result<(Tensor<S>, Tensor<S>)> {
    joint_backward(&fwd.joint, &fwd.joint_grad())
}

/// Full backward for one utterance of a standalone transducer. `extra_enc_grad`
/// is added to the encoder-logit gradient (used by distillation).
pub fn utterance_backward<S: Scalar>(
    model: Transducer<'_, S>,
    fwd: &UtteranceForward<S>,
    extra_enc_grad: Option<&Tensor<S>>,
    grads: &mut RnntParams<S>,
) -> Result<()> {
    let (mut d_enc, d_dec) = joint_grads(fwd)?;
    if let Some(extra) = extra_enc_grad {
        d_enc.add_scaled(S::one(), extra);
    }
    encoder_backward(model.encoder, &fwd.encoder_cache, &d_enc, &mut grads.encoder)?;
    decoder_backward(model.decoder, &fwd.decoder_cache, &d_dec, &mut grads.decoder)
}

/// Forward pass of every utterance in the batch using its true lengths.
pub fn model_forward<S: Scalar>(
    model: Transducer<'_, S>,
    batch: &SequenceBatch<S>,
) -> Result<Vec<UtteranceForward<S>>> {
    (0..batch.len()).map(|b| utterance_forward(model, &batch.frames(b), &batch.labels[b], None)).collect()
}

/// Mean transducer loss over the batch.
pub fn batch_loss<S: Scalar>(model: Transducer<'_, S>, batch: &SequenceBatch<S>) -> Result<f64> {
    let fwd = model_forward(model, batch)?;
    Ok(fwd.iter().map(UtteranceForward::loss).sum::<f64>() / batch.len() as f64)
}
