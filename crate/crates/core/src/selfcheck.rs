//! Embedded oracle suites run by `codert selfcheck`: lattice against brute
//! force, end-to-end gradients against finite differences, and the
//! distillation identities.

use std::time::{Duration, Instant};

use crate::distill::{
    baseline_step, colearn_objective, colearn_step, encoder_distill_grad, encoder_distill_loss, masked_distill,
    static_teacher_step, topk_masked_distill_loss, DistillConfig, DistillMode, TopKSource,
};
use crate::error::Result;
use crate::gradcheck::{check_param_grads, relative_error, toy, CheckSettings, GradReport};
use crate::lattice::{brute_force_loss, transducer_loss, JointLattice, LabelSequence};
use crate::network::ParamSet;
use crate::rng::Rng;
use crate::tensor::Tensor;

pub const LATTICE_TOLERANCE: f64 = 1e-6;
pub const GRADIENT_TOLERANCE: f64 = 1e-4;
pub const LATTICE_CASES: usize = 200;
pub const GRADIENT_INSTANCES: usize = 50;

/// Deliberate corruption used to prove that the suites can fail.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Mutation {
    /// Negates every analytic gradient before it is compared.
    FlipGradientSign,
}

#[derive(Clone, Copy, Debug)]
pub struct SelfcheckOptions {
    pub seed: u64,
    pub mutation: Option<Mutation>,
}

impl Default for SelfcheckOptions {
    fn default() -> Self {
        Self { seed: 2021, mutation: None }
    }
}

impl SelfcheckOptions {
    fn sign(&self) -> f64 {
        if self.mutation == Some(Mutation::FlipGradientSign) {
            -1.0
        } else {
            1.0
        }
    }
}

#[derive(Clone, Debug)]
pub struct SuiteReport {
    pub name: &'static str,
    pub passed: bool,
    pub cases: usize,
    /// Largest observed error as a fraction of its tolerance; below 1 passes.
    pub worst_ratio: f64,
    /// Inputs of the first failing case.
    pub failure: Option<String>,
    pub elapsed: Duration,
}

impl SuiteReport {
    pub fn line(&self) -> String {
        format!(
            "{} {:<10} cases={:<5} worst/tol={:.3e} ({:.2}s)",
            if self.passed { "PASS" } else { "FAIL" },
            self.name,
            self.cases,
            self.worst_ratio,
            self.elapsed.as_secs_f64()
        )
    }
}

struct Tally {
    cases: usize,
    worst: f64,
    failure: Option<String>,
}

impl Tally {
    fn new() -> Self {
        Self { cases: 0, worst: 0.0, failure: None }
    }

    fn record(&mut self, error: f64, tolerance: f64, dump: impl FnOnce() -> String) {
        self.cases += 1;
        let ratio = error / tolerance;
        if ratio > self.worst || ratio.is_nan() {
            self.worst = ratio;
        }
        if !(error < tolerance) && self.failure.is_none() {
            self.failure = Some(dump());
        }
    }

    fn finish(self, name: &'static str, started: Instant) -> SuiteReport {
        SuiteReport {
            name,
            passed: self.failure.is_none(),
            cases: self.cases,
            worst_ratio: self.worst,
            failure: self.failure,
            elapsed: started.elapsed(),
        }
    }
}

fn dump_tensor(t: &Tensor<f64>) -> String {
    let values: Vec<String> = t.data().iter().map(|v| format!("{v:.17e}")).collect();
    format!("shape={:?} data=[{}]", t.shape(), values.join(", "))
}

fn random_lattice(rng: &mut Rng) -> (Tensor<f64>, LabelSequence) {
    let frames = 1 + rng.below(4);
    let u = rng.below(4);
    let classes = 2 + rng.below(3);
    let n = frames * (u + 1) * classes;
    let logits = Tensor::from_vec(&[frames, u + 1, classes], (0..n).map(|_| 2.0 * rng.normal()).collect())
        .expect("consistent shape");
    let labels = LabelSequence::new((0..u).map(|_| rng.below(classes - 1)).collect(), classes).expect("valid tokens");
    (logits, labels)
}

/// Dynamic-programming loss against alignment enumeration on random lattices
/// with `T' <= 4`, `U <= 3`, `V+1 <= 4`, and logit gradients against central
/// differences of the enumeration.
pub fn lattice_suite(opts: &SelfcheckOptions) -> Result<SuiteReport> {
    let started = Instant::now();
    let mut rng = Rng::new(opts.seed);
    let mut tally = Tally::new();
    for i in 0..LATTICE_CASES {
        let (logits, labels) = random_lattice(&mut rng);
        let dp = transducer_loss(&logits, &labels)?;
        let bf = brute_force_loss(&logits, &labels)?;
        tally.record((dp - bf).abs(), LATTICE_TOLERANCE, || {
            format!("lattice case {i}: dp={dp} brute={bf} labels={:?} logits {}", labels.tokens(), dump_tensor(&logits))
        });
        if i % 4 != 0 {
            continue;
        }
        let lattice = JointLattice::evaluate(&logits, &labels)?;
        let h = 1e-3;
        let mut worst: f64 = 0.0;
        let mut at = 0;
        for j in 0..logits.len() {
            let mut probe = logits.clone();
            probe.data_mut()[j] += h;
            let up = brute_force_loss(&probe, &labels)?;
            probe.data_mut()[j] -= 2.0 * h;
            let down = brute_force_loss(&probe, &labels)?;
            let numeric = (up - down) / (2.0 * h);
            let rel = relative_error(opts.sign() * lattice.grad_logits.data()[j], numeric, 1e-6);
            if rel > worst {
                worst = rel;
                at = j;
            }
        }
        tally.record(worst, GRADIENT_TOLERANCE, || {
            format!(
                "lattice gradient case {i}: coordinate {at} rel error {worst:.3e} labels={:?} logits {}",
                labels.tokens(),
                dump_tensor(&logits)
            )
        });
    }
    Ok(tally.finish("lattice", started))
}

fn flipped<P: ParamSet<f64>>(grads: &P, opts: &SelfcheckOptions) -> P {
    let mut g = grads.clone();
    g.scale(opts.sign());
    g
}

fn grad_dump(kind: &str, seed: u64, report: &GradReport) -> String {
    match &report.worst {
        Some(w) => format!(
            "{kind} instance seed {seed}: tensor {} index {} analytic {:.6e} numeric {:.6e} rel {:.3e}",
            w.name, w.index, w.analytic, w.numeric, w.rel_error
        ),
        None => format!("{kind} instance seed {seed}: no coordinates"),
    }
}

/// End-to-end parameter gradients of the toy model (2-layer/8-unit encoder,
/// 1-layer/8-unit decoder, `V+1 = 5`) against central differences, over
/// baseline, co-learning and static-teacher steps.
pub fn gradient_suite(opts: &SelfcheckOptions) -> Result<SuiteReport> {
    let started = Instant::now();
    let mut rng = Rng::new(opts.seed ^ 0x9e37_79b9);
    let settings = CheckSettings { per_tensor: 3, ..CheckSettings::default() };
    let mut tally = Tally::new();
    for i in 0..GRADIENT_INSTANCES {
        let seed = opts.seed.wrapping_add(i as u64);
        let size = 1 + rng.below(2);
        let batch = toy::batch(&mut rng, size, 6, 3);
        let report = match i % 5 {
            0..=2 => {
                let dropout = if i % 5 == 2 { 0.3 } else { 0.0 };
                let model = toy::rnnt(seed, i % 2 == 0, dropout)?;
                let drop_seed = (dropout > 0.0).then_some(seed);
                let out = baseline_step(&model, &batch, drop_seed)?;
                check_param_grads(
                    &model,
                    &flipped(&out.grads, opts),
                    |p| Ok(baseline_step(p, &batch, drop_seed)?.losses.total),
                    settings,
                    &mut rng,
                )?
            }
            3 => {
                let params = toy::colearn(seed, 0.0)?;
                let cfg = DistillConfig {
                    lambda: 0.5 + rng.uniform(),
                    top_k: [None, Some(2)][i / 5 % 2],
                    ..DistillConfig::default()
                };
                let out = colearn_step(&params, &batch, &cfg, None)?;
                check_param_grads(
                    &params,
                    &flipped(&out.grads, opts),
                    |p| colearn_objective(p, &params.teacher, &batch, &cfg, None),
                    settings,
                    &mut rng,
                )?
            }
            _ => {
                let student = toy::rnnt(seed, true, 0.0)?;
                let teacher = toy::rnnt(seed.wrapping_add(1000), true, 0.0)?;
                let cfg = DistillConfig { mode: DistillMode::StaticTeacherSeparate, ..DistillConfig::default() };
                let out = static_teacher_step(&student, &teacher, &batch, &cfg, None)?;
                check_param_grads(
                    &student,
                    &flipped(&out.grads, opts),
                    |p| Ok(static_teacher_step(p, &teacher, &batch, &cfg, None)?.losses.total),
                    settings,
                    &mut rng,
                )?
            }
        };
        let kind = ["baseline", "baseline", "baseline+dropout", "colearn", "static"][i % 5];
        tally.record(report.max_rel_error(), GRADIENT_TOLERANCE, || grad_dump(kind, seed, &report));
    }
    Ok(tally.finish("gradients", started))
}

fn random_encoder_logits(rng: &mut Rng, frames: usize, classes: usize) -> Tensor<f64> {
    Tensor::from_vec(&[frames, classes], (0..frames * classes).map(|_| 3.0 * rng.normal()).collect()).expect("shape")
}

/// Distillation identities: the top-k loss at `k = V+1` is the full loss
/// bit for bit, identical logits give zero loss, the distillation gradient
/// matches central differences, and the teacher encoder's co-learning
/// gradient does not depend on `λ` at all.
pub fn distill_suite(opts: &SelfcheckOptions) -> Result<SuiteReport> {
    let started = Instant::now();
    let mut rng = Rng::new(opts.seed ^ 0x5151);
    let mut tally = Tally::new();
    for i in 0..40 {
        let frames = 1 + rng.below(6);
        let classes = 2 + rng.below(8);
        let valid = 1 + rng.below(frames);
        let s = random_encoder_logits(&mut rng, frames, classes);
        let t = random_encoder_logits(&mut rng, frames, classes);
        let full = encoder_distill_loss(&s, &t, valid)?;
        let top = topk_masked_distill_loss(&s, &t, valid, classes)?;
        let exact = if full.to_bits() == top.to_bits() { 0.0 } else { f64::INFINITY };
        tally.record(exact, GRADIENT_TOLERANCE, || format!("case {i}: top-k at V+1 gave {top}, full {full}"));
        let same = encoder_distill_loss(&s, &s, valid)?;
        tally.record(same.abs(), GRADIENT_TOLERANCE, || format!("case {i}: identical logits gave {same}"));

        let source = [TopKSource::Teacher, TopKSource::Student, TopKSource::Union][i % 3];
        let k = 1 + rng.below(classes);
        let (_, grad) = masked_distill(&s, &t, valid, Some(k), source)?;
        let full_grad = encoder_distill_grad(&s, &t, valid)?;
        let h = 1e-5;
        let mut worst: f64 = 0.0;
        for j in 0..s.len() {
            let eval = |delta: f64, top: Option<usize>| -> Result<f64> {
                let mut probe = s.clone();
                probe.data_mut()[j] += delta;
                Ok(masked_distill(&probe, &t, valid, top, source)?.0)
            };
            let num_full = (eval(h, None)? - eval(-h, None)?) / (2.0 * h);
            let num_top = (eval(h, Some(k))? - eval(-h, Some(k))?) / (2.0 * h);
            worst = worst.max(relative_error(opts.sign() * full_grad.data()[j], num_full, 1e-6)).max(relative_error(
                opts.sign() * grad.data()[j],
                num_top,
                1e-6,
            ));
        }
        tally.record(worst, GRADIENT_TOLERANCE, || {
            format!(
                "case {i}: distill gradient rel error {worst:.3e}, k={k}, student {} teacher {}",
                dump_tensor(&s),
                dump_tensor(&t)
            )
        });
    }

    for i in 0..6u64 {
        let params = toy::colearn(opts.seed.wrapping_add(i), 0.0)?;
        let batch = toy::batch(&mut rng, 2, 6, 3);
        let reference =
            colearn_step(&params, &batch, &DistillConfig { lambda: 0.0, ..DistillConfig::default() }, None)?;
        for lambda in [0.1, 1.0, 7.5] {
            let top_k = if i % 2 == 0 { None } else { Some(2) };
            let cfg = DistillConfig { lambda, top_k, ..DistillConfig::default() };
            let out = colearn_step(&params, &batch, &cfg, None)?;
            let identical = out
                .grads
                .teacher
                .named()
                .iter()
                .zip(reference.grads.teacher.named())
                .all(|((_, a), (_, b))| a.data().iter().zip(b.data()).all(|(x, y)| x.to_bits() == y.to_bits()));
            let error = if identical { 0.0 } else { f64::INFINITY };
            tally.record(error, GRADIENT_TOLERANCE, || {
                format!("teacher gradient changed with lambda={lambda} (model seed {})", opts.seed.wrapping_add(i))
            });
        }
    }
    Ok(tally.finish("distill", started))
}

pub fn run_all(opts: &SelfcheckOptions) -> Result<Vec<SuiteReport>> {
    Ok(vec![lattice_suite(opts)?, gradient_suite(opts)?, distill_suite(opts)?])
}
