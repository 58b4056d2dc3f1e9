//! Per-iteration metrics as JSON Lines.

use std::fs::{File, OpenOptions};
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// One line of the metrics stream. Evaluation fields are `null` on
/// iterations without an evaluation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsRecord {
    /// Completed iterations, starting at 1.
    pub iteration: u64,
    /// Environment transitions consumed so far by training rollouts.
    pub env_steps: u64,
    pub eval_mean_return: Option<f64>,
    pub eval_returns: Option<Vec<f64>>,
    pub eval_discounted_returns: Option<Vec<f64>>,
    /// Mean critic loss over the last epoch.
    pub critic_loss: Option<f64>,
    pub grad_norm: f64,
    /// Mean and std of the raw per-direction scores (advantages or returns).
    pub adv_mean: f64,
    pub adv_std: f64,
    pub value_gap: Option<f64>,
    /// Largest `|V|` seen so far.
    pub phi: Option<f64>,
    pub mask_usage: Option<f64>,
    pub beta: Option<f64>,
    pub wall_time: f64,
}

impl MetricsRecord {
    /// The record with timing zeroed, for run-to-run comparisons.
    pub fn without_timing(&self) -> Self {
        Self {
            wall_time: 0.0,
            ..self.clone()
        }
    }
}

/// Append-only writer; every record is flushed as soon as it is written.
#[derive(Debug)]
pub struct MetricsWriter {
    path: PathBuf,
    file: File,
}

impl MetricsWriter {
    pub fn create(path: &Path) -> Result<Self> {
        let file = File::create(path).map_err(|e| Error::io(path, e))?;
        Ok(Self {
            path: path.to_path_buf(),
            file,
        })
    }

    /// Reopens an existing stream, dropping records past `iteration`.
    pub fn resume(path: &Path, iteration: u64) -> Result<Self> {
        let kept: Vec<MetricsRecord> = if path.exists() {
            read_metrics(path)?
                .into_iter()
                .filter(|r| r.iteration <= iteration)
                .collect()
        } else {
            Vec::new()
        };
        let mut w = Self::create(path)?;
        for r in &kept {
            w.append(r)?;
        }
        Ok(w)
    }

    pub fn append(&mut self, record: &MetricsRecord) -> Result<()> {
        let mut line = serde_json::to_string(record)?;
        line.push('\n');
        self.file
            .write_all(line.as_bytes())
            .and_then(|_| self.file.flush())
            .map_err(|e| Error::io(&self.path, e))
    }
}

/// Reads a metrics stream. A torn final line (a run killed mid-write) is
/// ignored; malformed lines elsewhere are errors.
pub fn read_metrics(path: &Path) -> Result<Vec<MetricsRecord>> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let lines: Vec<String> = BufReader::new(file)
        .lines()
        .collect::<std::io::Result<_>>()
        .map_err(|e| Error::io(path, e))?;
    let mut out = Vec::with_capacity(lines.len());
    for (i, line) in lines.iter().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        match serde_json::from_str(line) {
            Ok(r) => out.push(r),
            Err(_) if i + 1 == lines.len() => break,
            Err(e) => return Err(e.into()),
        }
    }
    Ok(out)
}

/// Appends to an existing file without truncation.
pub fn append_metrics(path: &Path, record: &MetricsRecord) -> Result<()> {
    let mut file = OpenOptions::new()
        .create(true)
        .append(true)
        .open(path)
        .map_err(|e| Error::io(path, e))?;
    let mut line = serde_json::to_string(record)?;
    line.push('\n');
    file.write_all(line.as_bytes()).map_err(|e| Error::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn record(i: u64) -> MetricsRecord {
        MetricsRecord {
            iteration: i,
            env_steps: 100 * i,
            eval_mean_return: (i % 2 == 0).then_some(1.5),
            eval_returns: (i % 2 == 0).then(|| vec![1.0, 2.0]),
            eval_discounted_returns: None,
            critic_loss: Some(0.1),
            grad_norm: 0.2,
            adv_mean: 0.0,
            adv_std: 1.0,
            value_gap: None,
            phi: Some(3.0),
            mask_usage: None,
            beta: None,
            wall_time: 0.01 * i as f64,
        }
    }

    #[test]
    fn write_read_and_resume() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.jsonl");
        let mut w = MetricsWriter::create(&path).unwrap();
        for i in 1..=5 {
            w.append(&record(i)).unwrap();
        }
        drop(w);
        let all = read_metrics(&path).unwrap();
        assert_eq!(all, (1..=5).map(record).collect::<Vec<_>>());
        let mut w = MetricsWriter::resume(&path, 3).unwrap();
        w.append(&record(4)).unwrap();
        assert_eq!(read_metrics(&path).unwrap().len(), 4);
    }

    #[test]
    fn torn_tail_is_skipped_but_middle_corruption_is_not() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.jsonl");
        append_metrics(&path, &record(1)).unwrap();
        std::fs::write(&path, std::fs::read_to_string(&path).unwrap() + "{\"iteration\": 2, \"env_st").unwrap();
        assert_eq!(read_metrics(&path).unwrap().len(), 1);
        std::fs::write(&path, "garbage\n".to_string() + &serde_json::to_string(&record(1)).unwrap()).unwrap();
        assert!(read_metrics(&path).is_err());
    }
}
