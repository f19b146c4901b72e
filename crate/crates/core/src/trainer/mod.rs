//! Optimization loop for every training mode, checkpoints and metrics.

pub mod adam;
pub mod checkpoint;
pub mod config;
pub mod metrics;
pub mod schedule;

use std::fs;
use std::path::Path;

pub use adam::{optimizer_step, AdamConfig, AdamState, UpdateStats};
pub use checkpoint::{load_checkpoint, save_checkpoint, Checkpoint};
pub use config::{TrainConfig, TrainMode};
pub use metrics::{read_metrics, EvalRecord, MetricRecord, MetricsWriter, StepRecord};
pub use schedule::{lr_at_step, LrSchedule};

use crate::data::{apply_split, generate_corpus, load_corpus, make_batches, split_assignment, Corpus, SequenceBatch};
use crate::decoding::{decode_corpus, wer};
use crate::distill::{baseline_step, colearn_step, separate_step, static_teacher_step, StepOutput};
use crate::error::{invalid, Error, Result};
use crate::network::{
    init_decoder, init_encoder, init_params, CoLearnParams, DecoderParams, EncoderChoice, EncoderParams, ParamSet,
    RnntParams, Transducer,
};
use crate::rng::{Rng, Stream};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// Where the decoder used by `role` lives in a checkpoint.
fn decoder_prefix(role: EncoderChoice, shared: bool) -> String {
    if shared {
        "decoder.".into()
    } else {
        format!("{}.decoder.", role.role())
    }
}

fn push_named<S: Scalar>(out: &mut Vec<(String, Tensor<f32>)>, prefix: &str, items: Vec<(String, &Tensor<S>)>) {
    out.extend(items.into_iter().map(|(n, t)| (format!("{prefix}{n}"), t.cast())));
}

fn rnnt_tensors(
    out: &mut Vec<(String, Tensor<f32>)>,
    prefix: &str,
    role: EncoderChoice,
    shared: bool,
    p: &RnntParams<f32>,
) {
    push_named(out, &format!("{prefix}{}.encoder.", role.role()), p.encoder.tensors());
    push_named(out, &format!("{prefix}{}", decoder_prefix(role, shared)), p.decoder.tensors());
}

/// The parameters being trained, with their optimizer state.
#[derive(Clone, Debug)]
pub enum Models {
    Single {
        role: EncoderChoice,
        model: RnntParams<f32>,
        adam: AdamState<RnntParams<f32>>,
    },
    Separate {
        student: RnntParams<f32>,
        teacher: RnntParams<f32>,
        adam_s: AdamState<RnntParams<f32>>,
        adam_t: AdamState<RnntParams<f32>>,
    },
    Static {
        student: RnntParams<f32>,
        teacher: RnntParams<f32>,
        adam: AdamState<RnntParams<f32>>,
    },
    Colearn {
        params: CoLearnParams<f32>,
        adam: AdamState<CoLearnParams<f32>>,
    },
}

impl Models {
    /// Fresh initialization for the configured mode; `Static` needs the frozen teacher.
    pub fn init(config: &TrainConfig, frozen_teacher: Option<RnntParams<f32>>) -> Result<Self> {
        let dec_cfg = config.decoder_config();
        let student = || {
            init_params(
                &config.encoder_config(EncoderChoice::Student),
                &dec_cfg,
                config.seed_init_student,
                EncoderChoice::Student,
            )
        };
        let teacher = || {
            init_params(
                &config.encoder_config(EncoderChoice::Teacher),
                &dec_cfg,
                config.seed_init_teacher,
                EncoderChoice::Teacher,
            )
        };
        Ok(match config.mode {
            TrainMode::Baseline => {
                let role = config.baseline_encoder;
                let model = match role {
                    EncoderChoice::Student => student()?,
                    EncoderChoice::Teacher => teacher()?,
                };
                Models::Single { role, adam: AdamState::new(&model), model }
            }
            TrainMode::Separate => {
                let (s, t) = (student()?, teacher()?);
                Models::Separate { adam_s: AdamState::new(&s), adam_t: AdamState::new(&t), student: s, teacher: t }
            }
            TrainMode::Static => {
                let teacher = frozen_teacher.ok_or_else(|| invalid!("static mode needs a teacher"))?;
                let s = student()?;
                Models::Static { adam: AdamState::new(&s), student: s, teacher }
            }
            TrainMode::Colearn => {
                let params = CoLearnParams {
                    student: init_encoder(
                        &config.encoder_config(EncoderChoice::Student),
                        config.seed_init_student,
                        EncoderChoice::Student,
                    )?,
                    teacher: init_encoder(
                        &config.encoder_config(EncoderChoice::Teacher),
                        config.seed_init_teacher,
                        EncoderChoice::Teacher,
                    )?,
                    decoder: init_decoder(&dec_cfg, config.seed_init_student)?,
                };
                Models::Colearn { adam: AdamState::new(&params), params }
            }
        })
    }

    /// The transducer used for `role`, if this mode has one.
    pub fn transducer(&self, role: EncoderChoice) -> Option<Transducer<'_, f32>> {
        match (self, role) {
            (Models::Single { role: r, model, .. }, _) if *r == role => Some(model.view()),
            (Models::Single { .. }, _) => None,
            (Models::Separate { student, .. } | Models::Static { student, .. }, EncoderChoice::Student) => {
                Some(student.view())
            }
            (Models::Separate { teacher, .. } | Models::Static { teacher, .. }, EncoderChoice::Teacher) => {
                Some(teacher.view())
            }
            (Models::Colearn { params, .. }, r) => Some(params.view(r)),
        }
    }

    /// Named tensors in checkpoint order: parameters, then Adam moments.
    pub fn named_tensors(&self) -> Vec<(String, Tensor<f32>)> {
        let mut out = Vec::new();
        let with_adam = |out: &mut Vec<(String, Tensor<f32>)>,
                         f: &dyn Fn(&mut Vec<(String, Tensor<f32>)>, &str, usize)| {
            f(out, "", 0);
            f(out, "adam.m.", 1);
            f(out, "adam.v.", 2);
        };
        match self {
            Models::Single { role, model, adam } => with_adam(&mut out, &|o, pre, which| {
                let p = [model, &adam.m, &adam.v][which];
                rnnt_tensors(o, pre, *role, true, p);
            }),
            Models::Separate { student, teacher, adam_s, adam_t } => with_adam(&mut out, &|o, pre, which| {
                rnnt_tensors(o, pre, EncoderChoice::Student, false, [student, &adam_s.m, &adam_s.v][which]);
                rnnt_tensors(o, pre, EncoderChoice::Teacher, false, [teacher, &adam_t.m, &adam_t.v][which]);
            }),
            Models::Static { student, teacher, adam } => with_adam(&mut out, &|o, pre, which| {
                rnnt_tensors(o, pre, EncoderChoice::Student, false, [student, &adam.m, &adam.v][which]);
                if which == 0 {
                    rnnt_tensors(o, pre, EncoderChoice::Teacher, false, teacher);
                }
            }),
            Models::Colearn { params, adam } => with_adam(&mut out, &|o, pre, which| {
                let p = [params, &adam.m, &adam.v][which];
                push_named(o, &format!("{pre}student.encoder."), p.student.tensors());
                push_named(o, &format!("{pre}teacher.encoder."), p.teacher.tensors());
                push_named(o, &format!("{pre}decoder."), p.decoder.tensors());
            }),
        }
        out
    }

    pub fn checkpoint(&self, step: u64, config: &TrainConfig) -> Result<Checkpoint> {
        Ok(Checkpoint { step, config_json: serde_json::to_string(config)?, tensors: self.named_tensors() })
    }
}

fn fill<S: Scalar>(ckpt: &Checkpoint, prefix: &str, target: Vec<(String, &mut Tensor<S>)>) -> Result<()> {
    for (name, t) in target {
        let full = format!("{prefix}{name}");
        let src = ckpt.get(&full).ok_or_else(|| Error::Format(format!("checkpoint lacks tensor {full}")))?;
        if src.shape() != t.shape() {
            return Err(Error::Format(format!("{full}: checkpoint shape {:?}, expected {:?}", src.shape(), t.shape())));
        }
        *t = src.cast();
    }
    Ok(())
}

/// The training configuration stored in a checkpoint.
pub fn checkpoint_config(ckpt: &Checkpoint) -> Result<TrainConfig> {
    Ok(serde_json::from_str(&ckpt.config_json)?)
}

/// Rebuilds the `role` transducer (its encoder plus whichever decoder it used).
pub fn transducer_from_checkpoint<S: Scalar>(ckpt: &Checkpoint, role: EncoderChoice) -> Result<RnntParams<S>> {
    let config = checkpoint_config(ckpt)?;
    let enc_prefix = format!("{}.encoder.", role.role());
    if !ckpt.names().any(|n| n.starts_with(&enc_prefix)) {
        return Err(invalid!("checkpoint has no {} encoder", role.role()));
    }
    let mut encoder = EncoderParams::zeros(&config.encoder_config(role))?;
    let mut decoder = DecoderParams::zeros(&config.decoder_config())?;
    fill(ckpt, &enc_prefix, encoder.tensors_mut())?;
    let own = decoder_prefix(role, false);
    let dec_prefix = if ckpt.names().any(|n| n.starts_with(&own)) { own } else { decoder_prefix(role, true) };
    fill(ckpt, &dec_prefix, decoder.tensors_mut())?;
    Ok(RnntParams { encoder, decoder })
}

/// Train/dev/test corpora for `config`: loaded from `data_dir` with its stored
/// split, or generated from the task fields and split with `seed_data`.
pub fn prepare_data(config: &mut TrainConfig) -> Result<(Corpus, Corpus, Corpus)> {
    match &config.data_dir {
        Some(dir) => {
            let (corpus, assignment) = load_corpus(dir)?;
            config.set_task(&corpus.spec);
            Ok(apply_split(&corpus, &assignment))
        }
        None => {
            let corpus = generate_corpus(&config.task_spec(), config.num_utterances)?;
            let assignment = split_assignment(corpus.len(), config.split_fractions(), config.seed_data)?;
            Ok(apply_split(&corpus, &assignment))
        }
    }
}

/// Token error rate of `model` on `corpus` (first `limit` utterances).
pub fn corpus_wer(model: Transducer<'_, f32>, corpus: &Corpus, beam: usize, limit: Option<usize>) -> Result<f64> {
    let n = limit.map_or(corpus.len(), |l| l.min(corpus.len()));
    let subset = Corpus { spec: corpus.spec.clone(), utterances: corpus.utterances[..n].to_vec() };
    let hyps = decode_corpus(model, &subset, beam)?;
    let refs: Vec<Vec<usize>> = subset.utterances.iter().map(|u| u.tokens.clone()).collect();
    let hyps: Vec<Vec<usize>> = hyps.into_iter().map(|d| d.tokens).collect();
    wer(&refs, &hyps)
}

#[derive(Clone, Debug)]
pub struct TrainOutcome {
    pub config: TrainConfig,
    pub models: Models,
    pub last: Checkpoint,
    /// Checkpoint with the lowest dev WER of the evaluated model.
    pub best: Checkpoint,
    pub best_dev_wer: f64,
    pub records: Vec<MetricRecord>,
}

impl TrainOutcome {
    pub fn step_records(&self) -> impl Iterator<Item = &StepRecord> {
        self.records.iter().filter_map(|r| match r {
            MetricRecord::Step(s) => Some(s),
            _ => None,
        })
    }

    pub fn eval_records(&self) -> impl Iterator<Item = &EvalRecord> {
        self.records.iter().filter_map(|r| match r {
            MetricRecord::Eval(e) => Some(e),
            _ => None,
        })
    }
}

/// Loads the frozen teacher for static mode and aligns the config with its
/// architecture.
fn load_static_teacher(config: &mut TrainConfig) -> Result<Option<RnntParams<f32>>> {
    if config.mode != TrainMode::Static {
        return Ok(None);
    }
    let path = config.teacher_checkpoint.clone().ok_or_else(|| invalid!("static mode needs teacher_checkpoint"))?;
    let ckpt = load_checkpoint(&path)?;
    let tcfg = checkpoint_config(&ckpt)?;
    if tcfg.decoder_config() != config.decoder_config() || tcfg.num_classes() != config.num_classes() {
        return Err(invalid!("teacher checkpoint decoder/vocabulary differ from this configuration"));
    }
    if tcfg.seed_data != config.seed_data || tcfg.task_spec() != config.task_spec() {
        log::warn!("teacher checkpoint was trained on a different task or data seed");
    }
    config.teacher_layers = tcfg.teacher_layers;
    config.teacher_units = tcfg.teacher_units;
    config.teacher_reduce_after = tcfg.teacher_reduce_after;
    config.validate()?;
    Ok(Some(transducer_from_checkpoint(&ckpt, EncoderChoice::Teacher)?))
}

fn norm<S: Scalar, P: ParamSet<S>>(p: &P) -> f64 {
    p.sum_sq().sqrt()
}

fn finite(out: &crate::distill::LossBundle) -> Result<()> {
    if out.total.is_finite() {
        Ok(())
    } else {
        Err(Error::Diverged(format!("non-finite loss {}", out.total)))
    }
}

/// Runs one training configuration end to end. With `out_dir` set, writes
/// `config.json`, `metrics.jsonl`, `last.ckpt` and `best.ckpt` there.
pub fn train(config: &TrainConfig) -> Result<TrainOutcome> {
    let mut config = config.clone();
    let (train_set, dev_set, _) = prepare_data(&mut config)?;
    let teacher = load_static_teacher(&mut config)?;
    config.validate()?;
    if train_set.is_empty() || dev_set.is_empty() {
        return Err(invalid!("training needs non-empty train and dev splits"));
    }
    if let Some(dir) = &config.out_dir {
        fs::create_dir_all(dir)?;
        fs::write(dir.join("config.json"), serde_json::to_string_pretty(&config)? + "\n")?;
    }
    let out_dir = config.out_dir.clone();
    let mut writer = MetricsWriter::create(out_dir.as_ref().map(|d| d.join("metrics.jsonl")).as_deref())?;
    let mut records = Vec::new();
    let mut models = Models::init(&config, teacher)?;
    let schedule = config.schedule();
    let adam_cfg = config.adam();
    let distill_cfg = config.distill_config();
    let eval_role = match config.mode {
        TrainMode::Baseline => config.baseline_encoder,
        _ => EncoderChoice::Student,
    };

    let mut log = |records: &mut Vec<MetricRecord>, r: MetricRecord| -> Result<()> {
        writer.write(&r)?;
        records.push(r);
        Ok(())
    };
    let evaluate = |models: &Models, step: u64| -> Result<EvalRecord> {
        let score = |role| {
            models
                .transducer(role)
                .map(|m| corpus_wer(m, &dev_set, config.eval_beam, config.eval_max_utterances))
                .transpose()
        };
        Ok(EvalRecord {
            step,
            split: "dev".into(),
            wer_student: score(EncoderChoice::Student)?,
            wer_teacher: score(EncoderChoice::Teacher)?,
            beam: config.eval_beam,
        })
    };
    let eval_wer = |r: &EvalRecord| {
        match eval_role {
            EncoderChoice::Student => r.wer_student,
            EncoderChoice::Teacher => r.wer_teacher,
        }
        .unwrap_or(f64::INFINITY)
    };

    let first = evaluate(&models, 0)?;
    let mut best_dev_wer = eval_wer(&first);
    let mut best = models.checkpoint(0, &config)?;
    log(&mut records, MetricRecord::Eval(first))?;

    let mut epoch = 0u64;
    let mut batches: Vec<SequenceBatch<f32>> = Vec::new();
    let mut cursor = 0;
    for step in 0..config.max_steps {
        if cursor == batches.len() {
            let seed = Rng::substream(config.seed_shuffle, Stream::Shuffle, epoch).next_u64();
            batches = make_batches(&train_set, config.batch_size, seed)?;
            cursor = 0;
            epoch += 1;
        }
        let batch = &batches[cursor];
        cursor += 1;
        let lr = lr_at_step(&schedule, step);
        let dropout_seed = (config.decoder_dropout > 0.0)
            .then(|| Rng::substream(config.seed_shuffle, Stream::Dropout, step).next_u64());
        let record = match &mut models {
            Models::Single { role, model, adam } => {
                let StepOutput { losses, grads, .. } = baseline_step(model, batch, dropout_seed)?;
                finite(&losses)?;
                let (gn_enc, gn_dec) = (norm(&grads.encoder), norm(&grads.decoder));
                optimizer_step(model, &grads, adam, lr, &adam_cfg)?;
                let student = *role == EncoderChoice::Student;
                StepRecord {
                    step: step + 1,
                    lr,
                    loss_rnnt_s: student.then_some(losses.rnnt_student),
                    loss_rnnt_t: (!student).then_some(losses.rnnt_student),
                    loss_distill: None,
                    loss_total: losses.total,
                    grad_norm_s: student.then_some(gn_enc),
                    grad_norm_t: (!student).then_some(gn_enc),
                    grad_norm_dec: Some(gn_dec),
                    ts_encoder_mse: None,
                }
            }
            Models::Separate { student, teacher, adam_s, adam_t } => {
                let (s, t) = separate_step(student, teacher, batch, dropout_seed)?;
                finite(&s.losses)?;
                finite(&t.losses)?;
                let gn_dec = (s.grads.decoder.sum_sq() + t.grads.decoder.sum_sq()).sqrt();
                let (gn_s, gn_t) = (norm(&s.grads.encoder), norm(&t.grads.encoder));
                optimizer_step(student, &s.grads, adam_s, lr, &adam_cfg)?;
                optimizer_step(teacher, &t.grads, adam_t, lr, &adam_cfg)?;
                StepRecord {
                    step: step + 1,
                    lr,
                    loss_rnnt_s: Some(s.losses.rnnt_student),
                    loss_rnnt_t: Some(t.losses.rnnt_student),
                    loss_distill: None,
                    loss_total: s.losses.total + t.losses.total,
                    grad_norm_s: Some(gn_s),
                    grad_norm_t: Some(gn_t),
                    grad_norm_dec: Some(gn_dec),
                    ts_encoder_mse: s.ts_encoder_mse,
                }
            }
            Models::Static { student, teacher, adam } => {
                let out = static_teacher_step(student, teacher, batch, &distill_cfg, dropout_seed)?;
                finite(&out.losses)?;
                let (gn_s, gn_dec) = (norm(&out.grads.encoder), norm(&out.grads.decoder));
                optimizer_step(student, &out.grads, adam, lr, &adam_cfg)?;
                StepRecord {
                    step: step + 1,
                    lr,
                    loss_rnnt_s: Some(out.losses.rnnt_student),
                    loss_rnnt_t: None,
                    loss_distill: Some(out.losses.distill),
                    loss_total: out.losses.total,
                    grad_norm_s: Some(gn_s),
                    grad_norm_t: None,
                    grad_norm_dec: Some(gn_dec),
                    ts_encoder_mse: out.ts_encoder_mse,
                }
            }
            Models::Colearn { params, adam } => {
                let out = colearn_step(params, batch, &distill_cfg, dropout_seed)?;
                finite(&out.losses)?;
                let g = &out.grads;
                let (gn_s, gn_t, gn_dec) = (norm(&g.student), norm(&g.teacher), norm(&g.decoder));
                optimizer_step(params, &out.grads, adam, lr, &adam_cfg)?;
                StepRecord {
                    step: step + 1,
                    lr,
                    loss_rnnt_s: Some(out.losses.rnnt_student),
                    loss_rnnt_t: Some(out.losses.rnnt_teacher),
                    loss_distill: Some(out.losses.distill),
                    loss_total: out.losses.total,
                    grad_norm_s: Some(gn_s),
                    grad_norm_t: Some(gn_t),
                    grad_norm_dec: Some(gn_dec),
                    ts_encoder_mse: out.ts_encoder_mse,
                }
            }
        };
        log(&mut records, MetricRecord::Step(record))?;
        let done = step + 1;
        if done % config.eval_every == 0 || done == config.max_steps {
            let rec = evaluate(&models, done)?;
            let w = eval_wer(&rec);
            log::info!("step {done}: dev wer student={:?} teacher={:?}", rec.wer_student, rec.wer_teacher);
            if w < best_dev_wer {
                best_dev_wer = w;
                best = models.checkpoint(done, &config)?;
            }
            log(&mut records, MetricRecord::Eval(rec))?;
        }
    }
    let last = models.checkpoint(config.max_steps, &config)?;
    if let Some(dir) = &out_dir {
        save_checkpoint(&dir.join("last.ckpt"), &last)?;
        save_checkpoint(&dir.join("best.ckpt"), &best)?;
    }
    Ok(TrainOutcome { config, models, last, best, best_dev_wer, records })
}

/// Convenience for callers that only need the output directory's files.
pub fn train_to_dir(config: &TrainConfig, dir: &Path) -> Result<TrainOutcome> {
    let mut cfg = config.clone();
    cfg.out_dir = Some(dir.to_path_buf());
    train(&cfg)
}
