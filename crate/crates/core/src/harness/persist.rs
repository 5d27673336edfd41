//! Metric files: one JSON record per round, plus CSV summaries.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::Error;
use crate::training::RoundMetrics;

/// Appends [`RoundMetrics`] as JSON lines, flushing after every record.
#[derive(Debug)]
pub struct MetricsWriter {
    path: PathBuf,
    out: BufWriter<File>,
    records: usize,
}

impl MetricsWriter {
    pub fn create(path: &Path) -> Result<Self, Error> {
        let file = File::create(path).map_err(|e| Error::io(path, e))?;
        Ok(MetricsWriter { path: path.to_path_buf(), out: BufWriter::new(file), records: 0 })
    }

    pub fn write(&mut self, m: &RoundMetrics) -> Result<(), Error> {
        let line = serde_json::to_string(m).map_err(|e| Error::Parse {
            path: self.path.display().to_string(),
            message: e.to_string(),
        })?;
        writeln!(self.out, "{line}")
            .and_then(|_| self.out.flush())
            .map_err(|e| Error::io(&self.path, e))?;
        self.records += 1;
        Ok(())
    }

    pub fn records(&self) -> usize {
        self.records
    }
}

pub fn read_metrics(path: &Path) -> Result<Vec<RoundMetrics>, Error> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    BufReader::new(file)
        .lines()
        .enumerate()
        .map(|(i, line)| {
            let line = line.map_err(|e| Error::io(path, e))?;
            serde_json::from_str(&line).map_err(|e| Error::Parse {
                path: format!("{}:{}", path.display(), i + 1),
                message: e.to_string(),
            })
        })
        .collect()
}

/// One row of `summary.csv`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub policy: String,
    pub rounds_completed: usize,
    /// `ok`, or the error that stopped the run.
    pub status: String,
    pub final_train_loss: Option<f64>,
    pub final_test_loss: Option<f64>,
    pub final_test_accuracy: Option<f64>,
    /// Mean of the per-round average AoU.
    pub mean_avg_aou: f64,
    pub max_aou: u64,
}

impl RunSummary {
    pub fn from_metrics(policy: &str, metrics: &[RoundMetrics], status: String) -> Self {
        let last_eval = metrics.iter().rev().find(|m| m.train_loss.is_some());
        let n = metrics.len().max(1) as f64;
        RunSummary {
            policy: policy.to_string(),
            rounds_completed: metrics.len(),
            status,
            final_train_loss: last_eval.and_then(|m| m.train_loss),
            final_test_loss: last_eval.and_then(|m| m.test_loss),
            final_test_accuracy: last_eval.and_then(|m| m.test_accuracy),
            mean_avg_aou: metrics.iter().map(|m| m.avg_aou).sum::<f64>() / n,
            max_aou: metrics.iter().map(|m| m.max_aou).max().unwrap_or(0),
        }
    }
}

fn cell(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

fn csv_field(s: &str) -> String {
    if s.contains([',', '"', '\n']) {
        format!("\"{}\"", s.replace('"', "\"\""))
    } else {
        s.to_string()
    }
}

pub fn write_text(path: &Path, text: &str) -> Result<(), Error> {
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

pub fn write_summary(path: &Path, rows: &[RunSummary]) -> Result<(), Error> {
    let mut s = String::from(
        "policy,rounds_completed,status,final_train_loss,final_test_loss,final_test_accuracy,mean_avg_aou,max_aou\n",
    );
    for r in rows {
        s.push_str(&format!(
            "{},{},{},{},{},{},{},{}\n",
            csv_field(&r.policy),
            r.rounds_completed,
            csv_field(&r.status),
            cell(r.final_train_loss),
            cell(r.final_test_loss),
            cell(r.final_test_accuracy),
            r.mean_avg_aou,
            r.max_aou
        ));
    }
    write_text(path, &s)
}

pub const COMPARE_HEADER: &str =
    "round,policy,train_loss,test_loss,test_accuracy,avg_aou,max_aou,grad_norm2,client_grad_norm2";

/// Rows of `compare.csv` for one policy.
pub fn compare_rows(policy: &str, metrics: &[RoundMetrics]) -> String {
    metrics
        .iter()
        .map(|m| {
            format!(
                "{},{},{},{},{},{},{},{},{}\n",
                m.round,
                policy,
                cell(m.train_loss),
                cell(m.test_loss),
                cell(m.test_accuracy),
                m.avg_aou,
                m.max_aou,
                m.grad_norm2,
                m.client_grad_norm2
            )
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn record(round: usize) -> RoundMetrics {
        RoundMetrics {
            round,
            train_loss: Some(0.1 * round as f64 + 1.0 / 3.0),
            test_loss: None,
            test_accuracy: Some(0.5),
            avg_aou: 1.25,
            max_aou: 3,
            grad_norm2: 2.0f64.sqrt(),
            client_grad_norm2: 1e-17,
            participation: vec![round as u64, 0],
            wall_time: None,
        }
    }

    #[test]
    fn jsonl_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("metrics.jsonl");
        let mut w = MetricsWriter::create(&path).unwrap();
        let recs: Vec<_> = (0..3).map(record).collect();
        for r in &recs {
            w.write(r).unwrap();
        }
        assert_eq!(w.records(), 3);
        // Every record is on disk before the writer is dropped.
        assert_eq!(read_metrics(&path).unwrap(), recs);
    }

    #[test]
    fn summary_and_compare_rows() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("summary.csv");
        let recs: Vec<_> = (0..4).map(record).collect();
        let s = RunSummary::from_metrics("fair_k", &recs, "diverged, round 4".into());
        write_summary(&path, &[s]).unwrap();
        let text = std::fs::read_to_string(&path).unwrap();
        assert_eq!(text.lines().count(), 2);
        assert!(text.contains("\"diverged, round 4\""));
        assert_eq!(compare_rows("top_k", &recs).lines().count(), 4);
    }

    #[test]
    fn unwritable_path_names_the_path() {
        let err = MetricsWriter::create(Path::new("/nonexistent-dir/m.jsonl")).unwrap_err();
        assert!(err.to_string().contains("/nonexistent-dir/m.jsonl"));
    }
}
