use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{anyhow, Context};
use codert::data::{apply_split, load_corpus, make_batches, save_corpus, split_assignment, Corpus, Split, TaskSpec};
use codert::decoding::{decode_corpus, edit_distance, wer};
use codert::diagnostics::{confusion_table, entropy_gnuplot, entropy_histograms, gnuplot_script, ts_error_curve};
use codert::distill::TopKSource;
use codert::network::{EncoderChoice, RnntParams};
use codert::selfcheck::{run_all, Mutation, SelfcheckOptions};
use codert::trainer::{
    checkpoint_config, load_checkpoint, prepare_data, read_metrics, train, transducer_from_checkpoint, Checkpoint,
    TrainConfig, TrainMode,
};
use codert::SequenceBatch32;

use crate::args::{
    Cli, Command, DataSource, DiagnoseArgs, EvalArgs, GenDataArgs, Kind, Mode, SelfcheckArgs, TopKFrom, TrainArgs,
    Which,
};

/// Validation problems exit with 1, failures while doing the work with 2.
pub enum Failure {
    Usage(anyhow::Error),
    Runtime(anyhow::Error),
}

type Outcome<T> = Result<T, Failure>;

fn usage<T, E: Into<anyhow::Error>>(r: Result<T, E>) -> Outcome<T> {
    r.map_err(|e| Failure::Usage(e.into()))
}

fn runtime<T, E: Into<anyhow::Error>>(r: Result<T, E>) -> Outcome<T> {
    r.map_err(|e| Failure::Runtime(e.into()))
}

pub fn run(cli: Cli) -> Outcome<()> {
    match cli.command {
        Command::GenData(a) => gen_data(a),
        Command::Train(a) => train_cmd(a),
        Command::Eval(a) => eval(a),
        Command::Diagnose(a) => diagnose(a),
        Command::Selfcheck(a) => selfcheck(a),
    }
}

fn read_json<T: serde::de::DeserializeOwned>(path: &Path, what: &str) -> anyhow::Result<T> {
    let text = fs::read_to_string(path).with_context(|| format!("reading {what} {}", path.display()))?;
    serde_json::from_str(&text).with_context(|| format!("parsing {what} {}", path.display()))
}

fn write_file(path: &Path, contents: &str) -> Outcome<()> {
    runtime(fs::write(path, contents).with_context(|| format!("writing {}", path.display())))
}

fn gen_data(a: GenDataArgs) -> Outcome<()> {
    let spec: TaskSpec = usage(read_json(&a.spec, "task spec"))?;
    usage(spec.validate())?;
    let fractions: [f64; 3] =
        usage(a.split.as_slice().try_into().map_err(|_| anyhow!("--split takes three comma-separated fractions")))?;
    let corpus = usage(codert::data::generate_corpus(&spec, a.num))?;
    let assignment = usage(split_assignment(corpus.len(), fractions, spec.seed))?;
    runtime(
        save_corpus(&a.out, &corpus, &assignment).with_context(|| format!("writing corpus to {}", a.out.display())),
    )?;
    write_file(&a.out.join("spec.json"), &(usage(serde_json::to_string_pretty(&spec))? + "\n"))?;
    let count = |s| assignment.iter().filter(|&&x| x == s).count();
    println!(
        "wrote {} utterances to {} (train {}, dev {}, test {})",
        corpus.len(),
        a.out.display(),
        count(Split::Train),
        count(Split::Dev),
        count(Split::Test)
    );
    Ok(())
}

fn role(w: Which) -> EncoderChoice {
    match w {
        Which::Student => EncoderChoice::Student,
        Which::Teacher => EncoderChoice::Teacher,
    }
}

fn resolve_train_config(a: &TrainArgs) -> anyhow::Result<TrainConfig> {
    let mut config = match &a.config {
        Some(path) => read_json(path, "config")?,
        None => TrainConfig::default(),
    };
    if let Some(m) = a.mode {
        config.mode = match m {
            Mode::Baseline => TrainMode::Baseline,
            Mode::Separate => TrainMode::Separate,
            Mode::Static => TrainMode::Static,
            Mode::Colearn => TrainMode::Colearn,
        };
    }
    if let Some(l) = a.lambda {
        config.lambda = l;
    }
    if a.topk.is_some() {
        config.top_k = a.topk;
    }
    if let Some(s) = a.topk_source {
        config.top_k_source = match s {
            TopKFrom::Teacher => TopKSource::Teacher,
            TopKFrom::Student => TopKSource::Student,
            TopKFrom::Union => TopKSource::Union,
        };
    }
    if let Some(s) = a.seed {
        config.set_seed(s);
    }
    for (flag, field) in [
        (a.seed_data, &mut config.seed_data),
        (a.seed_init_student, &mut config.seed_init_student),
        (a.seed_init_teacher, &mut config.seed_init_teacher),
        (a.seed_shuffle, &mut config.seed_shuffle),
    ] {
        if let Some(v) = flag {
            *field = v;
        }
    }
    if a.teacher_checkpoint.is_some() {
        config.teacher_checkpoint = a.teacher_checkpoint.clone();
    }
    if a.data.is_some() {
        config.data_dir = a.data.clone();
    }
    if let Some(v) = a.max_steps {
        config.max_steps = v;
    }
    if let Some(v) = a.batch_size {
        config.batch_size = v;
    }
    if let Some(v) = a.eval_every {
        config.eval_every = v;
    }
    if let Some(v) = a.beam {
        config.eval_beam = v;
    }
    if let Some(w) = a.baseline_encoder {
        config.baseline_encoder = role(w);
    }
    config.out_dir = Some(a.out.clone());
    config.validate()?;
    if let Some(t) = &config.teacher_checkpoint {
        if config.mode == TrainMode::Static && !t.is_file() {
            return Err(anyhow!("teacher checkpoint {} does not exist", t.display()));
        }
    }
    if let Some(d) = &config.data_dir {
        if !d.join("header.json").is_file() {
            return Err(anyhow!("{} is not a corpus directory", d.display()));
        }
    }
    Ok(config)
}

fn train_cmd(a: TrainArgs) -> Outcome<()> {
    let config = usage(resolve_train_config(&a))?;
    let outcome = runtime(train(&config))?;
    let last = outcome.eval_records().last();
    println!(
        "trained {} steps in {} mode; best dev WER {:.4}; last dev WER student={} teacher={}",
        outcome.config.max_steps,
        outcome.config.mode.name(),
        outcome.best_dev_wer,
        fmt_opt(last.and_then(|r| r.wer_student)),
        fmt_opt(last.and_then(|r| r.wer_teacher)),
    );
    println!("outputs in {}", a.out.display());
    Ok(())
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map_or_else(|| "-".into(), |x| format!("{x:.4}"))
}

struct Loaded {
    checkpoint: Checkpoint,
    model: RnntParams<f32>,
    split: Corpus,
}

fn load_split(src: &DataSource) -> Outcome<Loaded> {
    let split = Split::parse(&src.split).ok_or_else(|| Failure::Usage(anyhow!("unknown split {:?}", src.split)))?;
    let checkpoint =
        runtime(load_checkpoint(&src.checkpoint).with_context(|| format!("loading {}", src.checkpoint.display())))?;
    let mut config = runtime(checkpoint_config(&checkpoint))?;
    let model = usage(transducer_from_checkpoint(&checkpoint, role(src.which)))?;
    let (train, dev, test) = match &src.data {
        Some(dir) => {
            let (corpus, assignment) =
                usage(load_corpus(dir).with_context(|| format!("loading corpus {}", dir.display())))?;
            if corpus.spec.num_classes() != model.decoder.config.output_dim {
                return Err(Failure::Usage(anyhow!(
                    "corpus has {} classes but the checkpoint expects {}",
                    corpus.spec.num_classes(),
                    model.decoder.config.output_dim
                )));
            }
            apply_split(&corpus, &assignment)
        }
        None => runtime(prepare_data(&mut config))?,
    };
    let split = match split {
        Split::Train => train,
        Split::Dev => dev,
        Split::Test => test,
    };
    if split.is_empty() {
        return Err(Failure::Usage(anyhow!("split {} has no utterances", src.split)));
    }
    Ok(Loaded { checkpoint, model, split })
}

fn eval(a: EvalArgs) -> Outcome<()> {
    if a.beam == 0 {
        return Err(Failure::Usage(anyhow!("--beam must be at least 1")));
    }
    let Loaded { checkpoint, model, mut split } = load_split(&a.source)?;
    if let Some(n) = a.max_utterances {
        split.utterances.truncate(n);
    }
    let decoded = runtime(decode_corpus(model.view(), &split, a.beam))?;
    let refs: Vec<Vec<usize>> = split.utterances.iter().map(|u| u.tokens.clone()).collect();
    let hyps: Vec<Vec<usize>> = decoded.iter().map(|d| d.tokens.clone()).collect();
    let rate = runtime(wer(&refs, &hyps))?;
    let join = |v: &[usize]| v.iter().map(usize::to_string).collect::<Vec<_>>().join(" ");
    let mut text = String::from("index\tref\thyp\terrors\tscore\n");
    let mut errors = 0;
    for (i, ((r, h), d)) in refs.iter().zip(&hyps).zip(&decoded).enumerate() {
        let e = edit_distance(r, h);
        errors += e;
        let _ = writeln!(text, "{i}\t{}\t{}\t{e}\t{:.6}", join(r), join(h), d.score);
    }
    let which = role(a.source.which).role();
    let hyps_path = a.hyps.clone().unwrap_or_else(|| {
        let dir = a.source.checkpoint.parent().map(Path::to_path_buf).unwrap_or_default();
        dir.join(format!("hyps_{which}_{}.tsv", a.source.split))
    });
    write_file(&hyps_path, &text)?;
    let cap_hits: usize = decoded.iter().map(|d| d.cap_hits).sum();
    println!(
        "wer={rate:.6} errors={errors} ref_tokens={} utterances={} beam={} which={which} split={} step={} cap_hits={cap_hits}",
        refs.iter().map(Vec::len).sum::<usize>(),
        refs.len(),
        a.beam,
        a.source.split,
        checkpoint.step,
    );
    println!("hypotheses written to {}", hyps_path.display());
    Ok(())
}

fn sampled_batch(a: &DiagnoseArgs) -> Outcome<(RnntParams<f32>, SequenceBatch32)> {
    let checkpoint =
        a.checkpoint.clone().ok_or_else(|| Failure::Usage(anyhow!("--kind {:?} needs --checkpoint", a.kind)))?;
    if a.batch_size == 0 {
        return Err(Failure::Usage(anyhow!("--batch-size must be positive")));
    }
    let src = DataSource { checkpoint, data: a.data.clone(), split: a.split.clone(), which: a.which };
    let Loaded { model, split, .. } = load_split(&src)?;
    let batches = runtime(make_batches::<f32>(&split, a.batch_size.min(split.len()), a.seed))?;
    let batch = batches.into_iter().next().ok_or_else(|| Failure::Runtime(anyhow!("no batch could be formed")))?;
    Ok((model, batch))
}

fn diagnose(a: DiagnoseArgs) -> Outcome<()> {
    runtime(fs::create_dir_all(&a.out).with_context(|| format!("creating {}", a.out.display())))?;
    match a.kind {
        Kind::Entropy => {
            let (model, batch) = sampled_batch(&a)?;
            let report = runtime(entropy_histograms(model.view(), &batch))?;
            let mut summary = String::from("component,mean_entropy_nats,count\n");
            let mut files = Vec::new();
            for (name, c) in [("encoder", &report.encoder), ("decoder", &report.decoder), ("joint", &report.joint)] {
                let file = format!("entropy_{name}.csv");
                write_file(&a.out.join(&file), &c.histogram.to_csv())?;
                let _ = writeln!(summary, "{name},{},{}", c.mean, c.histogram.total);
                println!("{name:<8} mean entropy {:.4} nats over {} vectors", c.mean, c.histogram.total);
                files.push((name.to_string(), file));
            }
            write_file(&a.out.join("entropy_summary.csv"), &summary)?;
            if a.gnuplot {
                write_file(&a.out.join("entropy.gp"), &entropy_gnuplot(&files))?;
            }
        }
        Kind::Confusion => {
            let (model, batch) = sampled_batch(&a)?;
            let table = usage(confusion_table(model.view(), &batch, a.top))?;
            write_file(&a.out.join("confusion.tsv"), &table.to_tsv())?;
            println!("encoder top-1 accuracy {:.4} over {} attributed frames", table.top1_accuracy, table.frames);
        }
        Kind::Tscurve => {
            if a.runs.is_empty() {
                return Err(Failure::Usage(anyhow!("--kind tscurve needs at least one --run")));
            }
            if !a.names.is_empty() && a.names.len() != a.runs.len() {
                return Err(Failure::Usage(anyhow!("{} names for {} runs", a.names.len(), a.runs.len())));
            }
            let mut runs = Vec::new();
            for (i, run) in a.runs.iter().enumerate() {
                let file = if run.is_dir() { run.join("metrics.jsonl") } else { run.clone() };
                let records = usage(read_metrics(&file).with_context(|| format!("reading {}", file.display())))?;
                let name = a.names.get(i).cloned().unwrap_or_else(|| run_name(run, i));
                runs.push((name, records));
            }
            let curves = usage(ts_error_curve(&runs, a.window))?;
            write_file(&a.out.join("ts_curve.csv"), &curves.to_csv())?;
            write_file(&a.out.join("ts_summary.csv"), &curves.summary_csv())?;
            for (n, m) in curves.names.iter().zip(&curves.final_means) {
                println!("{n:<24} final-window mean MSE {m:.6}");
            }
            if a.gnuplot {
                let script = gnuplot_script("ts_curve.csv", &curves.names, "step", "teacher-student encoder MSE");
                write_file(&a.out.join("ts_curve.gp"), &script)?;
            }
        }
    }
    Ok(())
}

fn run_name(path: &Path, i: usize) -> String {
    let base: PathBuf =
        if path.is_dir() { path.to_path_buf() } else { path.parent().map(Path::to_path_buf).unwrap_or_default() };
    base.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_else(|| format!("run{i}"))
}

fn selfcheck(a: SelfcheckArgs) -> Outcome<()> {
    let opts = SelfcheckOptions { seed: a.seed, mutation: a.mutate.then_some(Mutation::FlipGradientSign) };
    let reports = runtime(run_all(&opts))?;
    let mut failed = Vec::new();
    for r in &reports {
        println!("{}", r.line());
        if let Some(f) = &r.failure {
            println!("  failing case: {f}");
            failed.push(r.name);
        }
    }
    if failed.is_empty() {
        Ok(())
    } else {
        Err(Failure::Runtime(anyhow!("self-check failed: {}", failed.join(", "))))
    }
}
