//! Encoder, prediction network and additive joint of the transducer.

pub mod decoder;
pub mod encoder;
pub mod joint;
pub mod lstm;
pub mod model;

pub use decoder::{decoder_backward, decoder_forward, decoder_step, DecoderConfig, DecoderParams, DecoderState};
pub use encoder::{encoder_backward, encoder_forward, time_reduce, EncoderConfig, EncoderOutput, EncoderParams};
pub use joint::{joint_backward, joint_forward};
pub use lstm::{lstm_cell_backward, lstm_cell_forward, LstmWeights};
pub use model::{
    batch_loss, model_forward, utterance_backward, utterance_forward, CoLearnParams, EncoderChoice, ParamSet,
    RnntParams, Transducer, UtteranceForward,
};

use crate::error::Result;
use crate::rng::{Rng, Stream};
use crate::scalar::Scalar;

/// Deterministic initialization of a standalone transducer. The encoder draws
/// from the stream of its role so a student and a teacher seeded alike still
/// start from independent weights; the decoder has its own stream.
pub fn init_params<S: Scalar>(
    encoder: &EncoderConfig,
    decoder: &DecoderConfig,
    seed: u64,
    role: EncoderChoice,
) -> Result<RnntParams<S>> {
    Ok(RnntParams { encoder: init_encoder(encoder, seed, role)?, decoder: init_decoder(decoder, seed)? })
}

pub fn init_encoder<S: Scalar>(config: &EncoderConfig, seed: u64, role: EncoderChoice) -> Result<EncoderParams<S>> {
    let stream = match role {
        EncoderChoice::Student => Stream::InitStudent,
        EncoderChoice::Teacher => Stream::InitTeacher,
    };
    EncoderParams::init(config, &mut Rng::stream(seed, stream))
}

pub fn init_decoder<S: Scalar>(config: &DecoderConfig, seed: u64) -> Result<DecoderParams<S>> {
    DecoderParams::init(config, &mut Rng::stream(seed, Stream::InitDecoder))
}
