use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use codert::trainer::{load_checkpoint, save_checkpoint};

fn codert(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_codert")).args(args).env("RUST_LOG", "warn").output().unwrap()
}

fn code(out: &Output) -> i32 {
    out.status.code().unwrap()
}

fn stdout(out: &Output) -> String {
    String::from_utf8_lossy(&out.stdout).into_owned()
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

fn spec_file(dir: &Path) -> PathBuf {
    let f = dir.join("spec.json");
    fs::write(&f, r#"{"vocab_size": 8, "seed": 5, "utterance_len_range": [2, 4]}"#).unwrap();
    f
}

fn corpus(dir: &Path, num: usize) -> PathBuf {
    let out = dir.join("data");
    let r = codert(&["gen-data", "--spec", p(&spec_file(dir)), "--out", p(&out), "--num", &num.to_string()]);
    assert_eq!(code(&r), 0, "{}", String::from_utf8_lossy(&r.stderr));
    out
}

fn short_run(dir: &Path, data: &Path, name: &str, extra: &[&str]) -> PathBuf {
    let out = dir.join(name);
    let mut args = vec!["train", "--out", p(&out), "--data", p(data), "--max-steps", "6", "--batch-size", "4"];
    args.extend_from_slice(&["--eval-every", "3"]);
    args.extend_from_slice(extra);
    let r = codert(&args);
    assert_eq!(code(&r), 0, "{}", String::from_utf8_lossy(&r.stderr));
    out
}

fn dir_bytes(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut v: Vec<_> = fs::read_dir(dir)
        .unwrap()
        .map(|e| e.unwrap().path())
        .map(|f| (f.file_name().unwrap().to_string_lossy().into_owned(), fs::read(&f).unwrap()))
        .collect();
    v.sort();
    v
}

#[test]
fn usage_errors_exit_with_one() {
    assert_eq!(code(&codert(&["gen-data", "--out", "/tmp/unused"])), 1);
    assert_eq!(code(&codert(&["train", "--out", "/tmp/unused", "--bogus"])), 1);
    assert_eq!(code(&codert(&["frobnicate"])), 1);
    assert_eq!(code(&codert(&["train", "--out", "/tmp/unused", "--mode", "baseline", "--topk", "3"])), 1);
    assert_eq!(code(&codert(&["train", "--out", "/tmp/unused", "--mode", "static"])), 1);
    assert_eq!(code(&codert(&["--help"])), 0);
    assert_eq!(code(&codert(&["train", "--help"])), 0);
}

#[test]
fn gen_data_is_deterministic_and_accepts_empty_corpora() {
    let tmp = tempfile::tempdir().unwrap();
    let spec = spec_file(tmp.path());
    let a = tmp.path().join("a");
    let b = tmp.path().join("b");
    for out in [&a, &b] {
        assert_eq!(code(&codert(&["gen-data", "--spec", p(&spec), "--out", p(out), "--num", "40"])), 0);
    }
    assert_eq!(dir_bytes(&a), dir_bytes(&b));
    assert!(a.join("spec.json").is_file());

    let empty = tmp.path().join("empty");
    assert_eq!(code(&codert(&["gen-data", "--spec", p(&spec), "--out", p(&empty), "--num", "0"])), 0);
    let (c, splits) = codert::data::load_corpus(&empty).unwrap();
    assert_eq!((c.len(), splits.len()), (0, 0));
}

#[test]
fn gen_data_rejects_bad_specs_and_unwritable_paths() {
    let tmp = tempfile::tempdir().unwrap();
    let bad = tmp.path().join("bad.json");
    fs::write(&bad, r#"{"vocab_size": 0}"#).unwrap();
    assert_eq!(code(&codert(&["gen-data", "--spec", p(&bad), "--out", p(&tmp.path().join("x"))])), 1);
    fs::write(&bad, r#"{"vocab_sise": 8}"#).unwrap();
    assert_eq!(code(&codert(&["gen-data", "--spec", p(&bad), "--out", p(&tmp.path().join("x"))])), 1);
    let spec = spec_file(tmp.path());
    assert_eq!(
        code(&codert(&["gen-data", "--spec", p(&spec), "--out", p(&tmp.path().join("x")), "--split", "0.5,0.5"])),
        1
    );
    let blocker = tmp.path().join("file");
    fs::write(&blocker, "").unwrap();
    let r = codert(&["gen-data", "--spec", p(&spec), "--out", p(&blocker.join("sub")), "--num", "3"]);
    assert_eq!(code(&r), 2);
}

#[test]
fn train_writes_outputs_and_echoes_the_resolved_config() {
    let tmp = tempfile::tempdir().unwrap();
    let data = corpus(tmp.path(), 40);
    let cfg = tmp.path().join("cfg.json");
    fs::write(&cfg, r#"{"mode": "colearn", "lambda": 0.5, "max_steps": 100}"#).unwrap();
    let out = short_run(tmp.path(), &data, "run", &["--config", p(&cfg), "--lambda", "0.25", "--seed", "9"]);
    for f in ["config.json", "metrics.jsonl", "last.ckpt", "best.ckpt"] {
        assert!(out.join(f).is_file(), "{f} missing");
    }
    let echoed: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(out.join("config.json")).unwrap()).unwrap();
    assert_eq!(echoed["mode"], "colearn");
    assert_eq!(echoed["lambda"], 0.25);
    assert_eq!(echoed["max_steps"], 6);
    assert_eq!(echoed["seed_shuffle"], 9);
    assert_eq!(echoed["data_dir"], p(&data));
    let lines = fs::read_to_string(out.join("metrics.jsonl")).unwrap();
    assert!(lines.lines().all(|l| serde_json::from_str::<serde_json::Value>(l).is_ok()));

    let again = short_run(tmp.path(), &data, "run2", &["--config", p(&cfg), "--lambda", "0.25", "--seed", "9"]);
    let (a, b) = (load_checkpoint(&out.join("last.ckpt")).unwrap(), load_checkpoint(&again.join("last.ckpt")).unwrap());
    assert_eq!(a.tensors, b.tensors);
}

#[test]
fn eval_with_unit_beam_reproduces_greedy() {
    let tmp = tempfile::tempdir().unwrap();
    let data = corpus(tmp.path(), 40);
    let run = short_run(tmp.path(), &data, "run", &["--mode", "colearn"]);
    let ckpt = run.join("last.ckpt");
    let hyps = tmp.path().join("hyps.tsv");
    let r = codert(&[
        "eval",
        "--checkpoint",
        p(&ckpt),
        "--data",
        p(&data),
        "--beam",
        "1",
        "--hyps",
        p(&hyps),
        "--which",
        "teacher",
    ]);
    assert_eq!(code(&r), 0);
    assert!(stdout(&r).starts_with("wer="));

    let c = load_checkpoint(&ckpt).unwrap();
    let model =
        codert::trainer::transducer_from_checkpoint::<f32>(&c, codert::network::EncoderChoice::Teacher).unwrap();
    let (corpus, assignment) = codert::data::load_corpus(&data).unwrap();
    let (_, _, test) = codert::data::apply_split(&corpus, &assignment);
    let text = fs::read_to_string(&hyps).unwrap();
    let rows: Vec<&str> = text.lines().skip(1).collect();
    assert_eq!(rows.len(), test.len());
    for (row, u) in rows.iter().zip(&test.utterances) {
        let greedy = codert::decoding::greedy_decode(model.view(), &u.features).unwrap();
        let hyp = row.split('\t').nth(2).unwrap();
        let expected = greedy.tokens.iter().map(usize::to_string).collect::<Vec<_>>().join(" ");
        assert_eq!(hyp, expected);
    }
}

#[test]
fn eval_failure_codes() {
    let tmp = tempfile::tempdir().unwrap();
    let data = corpus(tmp.path(), 40);
    let run = short_run(tmp.path(), &data, "run", &[]);
    let ckpt = run.join("last.ckpt");
    assert_eq!(code(&codert(&["eval", "--checkpoint", p(&tmp.path().join("none.ckpt"))])), 2);
    assert_eq!(code(&codert(&["eval", "--checkpoint", p(&ckpt), "--data", p(&data), "--split", "holdout"])), 1);
    let tiny = tmp.path().join("tiny");
    let r =
        codert(&["gen-data", "--spec", p(&spec_file(tmp.path())), "--out", p(&tiny), "--num", "2", "--split", "1,0,0"]);
    assert_eq!(code(&r), 0);
    assert_eq!(code(&codert(&["eval", "--checkpoint", p(&ckpt), "--data", p(&tiny), "--split", "dev"])), 1);
    assert_eq!(code(&codert(&["eval", "--checkpoint", p(&ckpt), "--data", p(&tiny), "--split", "train"])), 0);
}

#[test]
fn entropy_of_a_zero_model_is_a_spike_at_log_classes() {
    let tmp = tempfile::tempdir().unwrap();
    let data = corpus(tmp.path(), 30);
    let run = short_run(tmp.path(), &data, "run", &[]);
    let mut c = load_checkpoint(&run.join("last.ckpt")).unwrap();
    for (_, t) in &mut c.tensors {
        t.fill(0.0);
    }
    let zero = tmp.path().join("zero.ckpt");
    save_checkpoint(&zero, &c).unwrap();
    let out = tmp.path().join("diag");
    let r = codert(&[
        "diagnose",
        "--kind",
        "entropy",
        "--checkpoint",
        p(&zero),
        "--data",
        p(&data),
        "--out",
        p(&out),
        "--gnuplot",
    ]);
    assert_eq!(code(&r), 0, "{}", String::from_utf8_lossy(&r.stderr));
    let expected = 9f64.ln();
    for name in ["encoder", "decoder", "joint"] {
        let csv = fs::read_to_string(out.join(format!("entropy_{name}.csv"))).unwrap();
        let nonzero: Vec<Vec<f64>> = csv
            .lines()
            .skip(1)
            .map(|l| l.split(',').map(|x| x.parse().unwrap()).collect::<Vec<f64>>())
            .filter(|r| r[2] > 0.0)
            .collect();
        assert_eq!(nonzero.len(), 1, "{name}: {csv}");
        assert!(nonzero[0][0] <= expected + 1e-6 && expected <= nonzero[0][1] + 1e-6, "{name}");
    }
    assert!(out.join("entropy.gp").is_file());
}

#[test]
fn confusion_lists_top_entries_per_token() {
    let tmp = tempfile::tempdir().unwrap();
    let data = corpus(tmp.path(), 40);
    let run = short_run(tmp.path(), &data, "run", &[]);
    let out = tmp.path().join("diag");
    let r = codert(&[
        "diagnose",
        "--kind",
        "confusion",
        "--checkpoint",
        p(&run.join("last.ckpt")),
        "--data",
        p(&data),
        "--out",
        p(&out),
        "--top",
        "3",
        "--batch-size",
        "32",
    ]);
    assert_eq!(code(&r), 0, "{}", String::from_utf8_lossy(&r.stderr));
    let tsv = fs::read_to_string(out.join("confusion.tsv")).unwrap();
    let mut per_token = std::collections::BTreeMap::new();
    for line in tsv.lines().skip(1) {
        *per_token.entry(line.split('\t').next().unwrap().to_string()).or_insert(0) += 1;
    }
    assert!(!per_token.is_empty());
    assert!(per_token.values().all(|&n| n == 3), "{per_token:?}");
}

#[test]
fn tscurve_over_three_runs_has_three_columns() {
    let tmp = tempfile::tempdir().unwrap();
    let data = corpus(tmp.path(), 30);
    let runs: Vec<PathBuf> = ["sep", "lam0", "lam1"]
        .iter()
        .zip([["--mode", "separate"], ["--mode", "colearn"], ["--mode", "colearn"]])
        .map(|(n, m)| short_run(tmp.path(), &data, n, &m))
        .collect();
    let out = tmp.path().join("diag");
    let mut args = vec!["diagnose", "--kind", "tscurve", "--out", p(&out), "--window", "3", "--gnuplot"];
    for r in &runs {
        args.extend_from_slice(&["--run", p(r)]);
    }
    assert_eq!(code(&codert(&args)), 0);
    let csv = fs::read_to_string(out.join("ts_curve.csv")).unwrap();
    let header: Vec<&str> = csv.lines().next().unwrap().split(',').collect();
    assert_eq!(header, ["step", "sep", "lam0", "lam1"]);
    assert_eq!(csv.lines().count(), 7);
    assert!(csv.lines().skip(1).all(|l| l.split(',').count() == 4));
    assert!(out.join("ts_curve.gp").is_file());
    assert_eq!(code(&codert(&["diagnose", "--kind", "tscurve", "--out", p(&out)])), 1);
}

#[test]
fn selfcheck_passes_and_detects_a_sign_flip() {
    let ok = codert(&["selfcheck"]);
    assert_eq!(code(&ok), 0);
    let text = stdout(&ok);
    assert_eq!(text.lines().filter(|l| l.starts_with("PASS")).count(), 3, "{text}");
    let bad = codert(&["selfcheck", "--mutate"]);
    assert_eq!(code(&bad), 2);
    assert!(stdout(&bad).contains("failing case"));
}
