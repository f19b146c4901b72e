use std::fs;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Per-step record of the metrics log. Fields that do not apply to the
/// training mode are `null`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    pub step: u64,
    pub lr: f64,
    pub loss_rnnt_s: Option<f64>,
    pub loss_rnnt_t: Option<f64>,
    pub loss_distill: Option<f64>,
    pub loss_total: f64,
    pub grad_norm_s: Option<f64>,
    pub grad_norm_t: Option<f64>,
    pub grad_norm_dec: Option<f64>,
    pub ts_encoder_mse: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalRecord {
    pub step: u64,
    pub split: String,
    pub wer_student: Option<f64>,
    pub wer_teacher: Option<f64>,
    pub beam: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum MetricRecord {
    Step(StepRecord),
    Eval(EvalRecord),
}

pub const STEP_FIELDS: [&str; 10] = [
    "step",
    "lr",
    "loss_rnnt_s",
    "loss_rnnt_t",
    "loss_distill",
    "loss_total",
    "grad_norm_s",
    "grad_norm_t",
    "grad_norm_dec",
    "ts_encoder_mse",
];

pub const EVAL_FIELDS: [&str; 5] = ["step", "split", "wer_student", "wer_teacher", "beam"];

/// Appends records as JSON Lines, flushing each line so a crash leaves a
/// readable partial log.
pub struct MetricsWriter {
    out: Option<BufWriter<fs::File>>,
}

impl MetricsWriter {
    pub fn create(path: Option<&Path>) -> Result<Self> {
        Ok(Self { out: path.map(fs::File::create).transpose()?.map(BufWriter::new) })
    }

    pub fn write(&mut self, record: &MetricRecord) -> Result<()> {
        if let Some(out) = &mut self.out {
            serde_json::to_writer(&mut *out, record)?;
            out.write_all(b"\n")?;
            out.flush()?;
        }
        Ok(())
    }
}

pub fn read_metrics(path: &Path) -> Result<Vec<MetricRecord>> {
    let reader = BufReader::new(fs::File::open(path)?);
    let mut out = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(
            serde_json::from_str(&line).map_err(|e| Error::Invalid(format!("{}:{}: {e}", path.display(), i + 1)))?,
        );
    }
    Ok(out)
}
