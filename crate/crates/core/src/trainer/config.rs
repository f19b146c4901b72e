use std::path::PathBuf;

use serde::{Deserialize, Serialize};

use super::adam::AdamConfig;
use super::schedule::LrSchedule;
use crate::data::TaskSpec;
use crate::distill::{DistillConfig, DistillMode, TopKSource};
use crate::error::{invalid, Result};
use crate::network::{DecoderConfig, EncoderChoice, EncoderConfig};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TrainMode {
    /// One transducer; `baseline_encoder` picks the student or teacher shape.
    Baseline,
    /// Student and teacher transducers with their own decoders, trained side
    /// by side on identical batches without any coupling.
    Separate,
    /// Student distilled toward a frozen teacher loaded from a checkpoint.
    Static,
    /// Student and teacher encoders sharing one decoder.
    Colearn,
}

impl TrainMode {
    pub fn name(self) -> &'static str {
        match self {
            TrainMode::Baseline => "baseline",
            TrainMode::Separate => "separate",
            TrainMode::Static => "static",
            TrainMode::Colearn => "colearn",
        }
    }
}

/// Every training knob as one flat JSON document.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub mode: TrainMode,
    pub baseline_encoder: EncoderChoice,

    /// Load the corpus (and its split) from here instead of generating it.
    pub data_dir: Option<PathBuf>,
    pub vocab_size: usize,
    pub feature_dim: usize,
    pub duration_min: usize,
    pub duration_max: usize,
    pub noise_sigma: f64,
    pub confusion_pairs: Vec<(usize, usize, f64)>,
    pub utterance_len_min: usize,
    pub utterance_len_max: usize,
    pub num_utterances: usize,
    pub split_train: f64,
    pub split_dev: f64,
    pub split_test: f64,

    pub teacher_layers: usize,
    pub teacher_units: usize,
    pub teacher_reduce_after: Option<usize>,
    pub student_layers: usize,
    pub student_units: usize,
    pub student_reduce_after: Option<usize>,
    pub time_reduction_factor: usize,
    pub decoder_embed_dim: usize,
    pub decoder_layers: usize,
    pub decoder_units: usize,
    pub decoder_dropout: f64,

    pub lambda: f64,
    pub top_k: Option<usize>,
    pub top_k_source: TopKSource,

    pub lr_warmup_start: f64,
    pub lr_peak: f64,
    pub lr_warmup_steps: u64,
    pub lr_hold_steps: u64,
    pub lr_decay_end_step: u64,
    pub lr_final: f64,

    pub optimizer: String,
    pub adam_beta1: f64,
    pub adam_beta2: f64,
    pub adam_eps: f64,
    pub clip_norm: Option<f64>,

    pub batch_size: usize,
    pub max_steps: u64,
    pub eval_every: u64,
    pub eval_beam: usize,
    /// Decode only the first N dev utterances during training evaluations.
    pub eval_max_utterances: Option<usize>,

    pub seed_data: u64,
    pub seed_init_student: u64,
    pub seed_init_teacher: u64,
    pub seed_shuffle: u64,

    pub teacher_checkpoint: Option<PathBuf>,
    pub out_dir: Option<PathBuf>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        let task = TaskSpec::default();
        Self {
            mode: TrainMode::Colearn,
            baseline_encoder: EncoderChoice::Student,
            data_dir: None,
            vocab_size: task.vocab_size,
            feature_dim: task.feature_dim,
            duration_min: task.duration_range[0],
            duration_max: task.duration_range[1],
            noise_sigma: task.noise_sigma,
            confusion_pairs: task.confusion_pairs,
            utterance_len_min: task.utterance_len_range[0],
            utterance_len_max: task.utterance_len_range[1],
            num_utterances: 2400,
            split_train: 0.8,
            split_dev: 0.1,
            split_test: 0.1,
            teacher_layers: 3,
            teacher_units: 64,
            teacher_reduce_after: Some(1),
            student_layers: 2,
            student_units: 32,
            student_reduce_after: Some(1),
            time_reduction_factor: 2,
            decoder_embed_dim: 32,
            decoder_layers: 1,
            decoder_units: 64,
            decoder_dropout: 0.0,
            lambda: 1.0,
            top_k: None,
            top_k_source: TopKSource::Teacher,
            lr_warmup_start: 1e-5,
            lr_peak: 3e-3,
            lr_warmup_steps: 100,
            lr_hold_steps: 900,
            lr_decay_end_step: 2000,
            lr_final: 1e-4,
            optimizer: "adam".into(),
            adam_beta1: 0.9,
            adam_beta2: 0.999,
            adam_eps: 1e-8,
            clip_norm: Some(5.0),
            batch_size: 16,
            max_steps: 2000,
            eval_every: 500,
            eval_beam: 6,
            eval_max_utterances: None,
            seed_data: 1,
            seed_init_student: 1,
            seed_init_teacher: 1,
            seed_shuffle: 1,
            teacher_checkpoint: None,
            out_dir: None,
        }
    }
}

impl TrainConfig {
    pub fn num_classes(&self) -> usize {
        self.vocab_size + 1
    }

    pub fn task_spec(&self) -> TaskSpec {
        TaskSpec {
            vocab_size: self.vocab_size,
            feature_dim: self.feature_dim,
            duration_range: [self.duration_min, self.duration_max],
            noise_sigma: self.noise_sigma,
            confusion_pairs: self.confusion_pairs.clone(),
            utterance_len_range: [self.utterance_len_min, self.utterance_len_max],
            seed: self.seed_data,
        }
    }

    /// Copies the task fields of `spec` (including its seed) into this config.
    pub fn set_task(&mut self, spec: &TaskSpec) {
        self.vocab_size = spec.vocab_size;
        self.feature_dim = spec.feature_dim;
        self.duration_min = spec.duration_range[0];
        self.duration_max = spec.duration_range[1];
        self.noise_sigma = spec.noise_sigma;
        self.confusion_pairs = spec.confusion_pairs.clone();
        self.utterance_len_min = spec.utterance_len_range[0];
        self.utterance_len_max = spec.utterance_len_range[1];
        self.seed_data = spec.seed;
    }

    pub fn split_fractions(&self) -> [f64; 3] {
        [self.split_train, self.split_dev, self.split_test]
    }

    pub fn encoder_config(&self, role: EncoderChoice) -> EncoderConfig {
        let (num_layers, hidden_units, after) = match role {
            EncoderChoice::Student => (self.student_layers, self.student_units, self.student_reduce_after),
            EncoderChoice::Teacher => (self.teacher_layers, self.teacher_units, self.teacher_reduce_after),
        };
        EncoderConfig {
            num_layers,
            hidden_units,
            input_dim: self.feature_dim,
            time_reduction_after_layer: after,
            time_reduction_factor: self.time_reduction_factor,
            output_dim: self.num_classes(),
        }
    }

    pub fn decoder_config(&self) -> DecoderConfig {
        DecoderConfig {
            embed_dim: self.decoder_embed_dim,
            num_layers: self.decoder_layers,
            hidden_units: self.decoder_units,
            output_dim: self.num_classes(),
            dropout: self.decoder_dropout,
        }
    }

    pub fn schedule(&self) -> LrSchedule {
        LrSchedule {
            warmup_start: self.lr_warmup_start,
            peak: self.lr_peak,
            warmup_steps: self.lr_warmup_steps,
            hold_steps: self.lr_hold_steps,
            decay_end_step: self.lr_decay_end_step,
            final_lr: self.lr_final,
        }
    }

    pub fn adam(&self) -> AdamConfig {
        AdamConfig { beta1: self.adam_beta1, beta2: self.adam_beta2, eps: self.adam_eps, clip_norm: self.clip_norm }
    }

    pub fn distill_config(&self) -> DistillConfig {
        let mode = match self.mode {
            TrainMode::Static => DistillMode::StaticTeacherSeparate,
            _ if self.lambda == 0.0 => DistillMode::ColearnNoDistill,
            _ => DistillMode::ColearnSharedDecoder,
        };
        DistillConfig { lambda: self.lambda, top_k: self.top_k, top_k_source: self.top_k_source, mode }
    }

    /// Sets the three non-data seeds.
    pub fn set_seed(&mut self, seed: u64) {
        self.seed_init_student = seed;
        self.seed_init_teacher = seed;
        self.seed_shuffle = seed;
    }

    /// Whether this mode trains or carries a teacher encoder.
    pub fn has_teacher(&self) -> bool {
        !matches!(self.mode, TrainMode::Baseline) || self.baseline_encoder == EncoderChoice::Teacher
    }

    pub fn validate(&self) -> Result<()> {
        if self.data_dir.is_none() {
            self.task_spec().validate()?;
        }
        self.encoder_config(EncoderChoice::Student).validate()?;
        self.encoder_config(EncoderChoice::Teacher).validate()?;
        self.decoder_config().validate()?;
        self.schedule().validate()?;
        self.distill_config().validate(self.num_classes())?;
        if self.optimizer != "adam" {
            return Err(invalid!("unknown optimizer {:?}; only \"adam\" is available", self.optimizer));
        }
        if !(0.0..1.0).contains(&self.adam_beta1) || !(0.0..1.0).contains(&self.adam_beta2) || self.adam_eps <= 0.0 {
            return Err(invalid!("adam hyperparameters out of range"));
        }
        if self.clip_norm.is_some_and(|c| c <= 0.0 || !c.is_finite()) {
            return Err(invalid!("clip_norm must be positive"));
        }
        if self.batch_size == 0 || self.eval_every == 0 || self.eval_beam == 0 {
            return Err(invalid!("batch_size, eval_every and eval_beam must be positive"));
        }
        let factor = |after: Option<usize>| if after.is_some() { self.time_reduction_factor } else { 1 };
        if self.has_teacher() && factor(self.student_reduce_after) != factor(self.teacher_reduce_after) {
            return Err(invalid!("student and teacher encoders must reduce time by the same factor"));
        }
        match self.mode {
            TrainMode::Static if self.teacher_checkpoint.is_none() => {
                return Err(invalid!("static mode needs teacher_checkpoint"));
            }
            TrainMode::Baseline | TrainMode::Separate if self.top_k.is_some() => {
                return Err(invalid!("top_k only applies to distillation modes"));
            }
            _ => {}
        }
        Ok(())
    }
}
