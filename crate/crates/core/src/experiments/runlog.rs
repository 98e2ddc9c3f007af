//! Append-only JSONL run log.
//!
//! One JSON object per line. Epoch lines carry run_id, the full config,
//! epoch, lr_now, train/val losses, and wall seconds; the final line per
//! run adds test_l1_km, runtime_min, and status.

use super::{CellConfig, ExperimentRecord, RunStatus};
use crate::error::{Error, Result};
use crate::train::EpochStats;
use serde_json::{json, Value};
use std::collections::HashSet;
use std::fs::{File, OpenOptions};
use std::io::{BufRead, BufReader, Write};
use std::path::Path;
use std::sync::Mutex;

/// Serializing writer shared by grid workers.
pub struct RunLog {
    file: Mutex<File>,
}

impl RunLog {
    pub fn append_to(path: &Path) -> Result<Self> {
        let file = OpenOptions::new().create(true).append(true).open(path)?;
        Ok(RunLog {
            file: Mutex::new(file),
        })
    }

    fn write_line(&self, value: &Value) -> Result<()> {
        let mut file = self.file.lock().expect("log writer poisoned");
        serde_json::to_writer(&mut *file, value).map_err(std::io::Error::other)?;
        file.write_all(b"\n")?;
        file.flush()?;
        Ok(())
    }

    pub fn epoch(&self, run_id: &str, config: &CellConfig, seed: u64, stats: &EpochStats) -> Result<()> {
        self.write_line(&json!({
            "run_id": run_id,
            "config": config_json(config, seed),
            "epoch": stats.epoch,
            "lr_now": stats.lr,
            "train_l1_km": stats.train_l1_km,
            "val_l1_km": stats.val_l1_km,
            "wall_s": stats.wall_s,
        }))
    }

    pub fn finish(&self, record: &ExperimentRecord) -> Result<()> {
        let mut line = json!({
            "run_id": record.run_id(),
            "config": config_json(&record.config, record.seed),
            "epoch": record.epochs_run.saturating_sub(1),
            "lr_now": record.final_lr,
            "train_l1_km": record.train_l1_km,
            "val_l1_km": record.val_l1_km,
            "wall_s": record.runtime_min * 60.0,
            "runtime_min": record.runtime_min,
            "status": match &record.status {
                RunStatus::Done => "done".to_string(),
                RunStatus::Failed { .. } => "failed".to_string(),
            },
        });
        if let Some(test) = record.test_l1_km {
            line["test_l1_km"] = json!(test);
        }
        if let RunStatus::Failed { epoch, reason } = &record.status {
            line["failed_epoch"] = json!(epoch);
            line["failure"] = json!(reason);
        }
        self.write_line(&line)
    }
}

fn config_json(config: &CellConfig, seed: u64) -> Value {
    json!({
        "model": config.model.as_str(),
        "size": config.size,
        "gamma": config.gamma,
        "lr": config.lr,
        "ps": config.ps,
        "dataset": config.dataset.as_str(),
        "seed": seed,
    })
}

/// All parsed lines of a log file.
pub fn read_lines(path: &Path) -> Result<Vec<Value>> {
    if !path.exists() {
        return Ok(Vec::new());
    }
    let reader = BufReader::new(File::open(path)?);
    let mut out = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let v: Value = serde_json::from_str(&line)
            .map_err(|e| Error::format(path, format!("line {}: {e}", i + 1)))?;
        out.push(v);
    }
    Ok(out)
}

/// Run ids whose final line reports `done` (resume skips these).
pub fn completed_run_ids(path: &Path) -> Result<HashSet<String>> {
    let mut done = HashSet::new();
    for line in read_lines(path)? {
        if line.get("status").and_then(Value::as_str) == Some("done") {
            if let Some(id) = line.get("run_id").and_then(Value::as_str) {
                done.insert(id.to_string());
            }
        }
    }
    Ok(done)
}

/// Reconstructs finished-run records from final lines (done or failed).
pub fn read_records(path: &Path) -> Result<Vec<ExperimentRecord>> {
    let mut out = Vec::new();
    for line in read_lines(path)? {
        let Some(status) = line.get("status").and_then(Value::as_str) else {
            continue;
        };
        let config = parse_config(&line)
            .ok_or_else(|| Error::format(path, format!("final line lacks a config: {line}")))?;
        let seed = line
            .pointer("/config/seed")
            .and_then(Value::as_u64)
            .unwrap_or(0);
        let f = |k: &str| line.get(k).and_then(Value::as_f64);
        out.push(ExperimentRecord {
            config,
            seed,
            epochs_run: line.get("epoch").and_then(Value::as_u64).map_or(0, |e| e as usize + 1),
            final_lr: f("lr_now").unwrap_or(0.0),
            train_l1_km: f("train_l1_km").unwrap_or(f64::NAN),
            val_l1_km: f("val_l1_km").unwrap_or(f64::NAN),
            test_l1_km: f("test_l1_km"),
            runtime_min: f("runtime_min").unwrap_or(0.0),
            status: if status == "done" {
                RunStatus::Done
            } else {
                RunStatus::Failed {
                    epoch: line
                        .get("failed_epoch")
                        .and_then(Value::as_u64)
                        .map(|e| e as usize),
                    reason: line
                        .get("failure")
                        .and_then(Value::as_str)
                        .unwrap_or("unknown")
                        .to_string(),
                }
            },
        });
    }
    Ok(out)
}

fn parse_config(line: &Value) -> Option<CellConfig> {
    let c = line.get("config")?;
    Some(CellConfig {
        model: c.get("model")?.as_str()?.parse().ok()?,
        dataset: c.get("dataset")?.as_str()?.parse().ok()?,
        ps: c.get("ps")?.as_bool()?,
        size: c.get("size")?.as_u64()? as usize,
        gamma: c.get("gamma")?.as_f64()?,
        lr: c.get("lr")?.as_f64()?,
    })
}

/// Per-epoch (epoch, train, val) points for one run, for learning curves.
pub fn epoch_curve(path: &Path, run_id: &str) -> Result<Vec<(usize, f64, f64)>> {
    let mut out = Vec::new();
    for line in read_lines(path)? {
        if line.get("run_id").and_then(Value::as_str) != Some(run_id) {
            continue;
        }
        if line.get("status").is_some() {
            continue; // final line
        }
        let (Some(e), Some(t), Some(v)) = (
            line.get("epoch").and_then(Value::as_u64),
            line.get("train_l1_km").and_then(Value::as_f64),
            line.get("val_l1_km").and_then(Value::as_f64),
        ) else {
            continue;
        };
        out.push((e as usize, t, v));
    }
    Ok(out)
}
