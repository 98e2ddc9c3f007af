//! Grid enumeration, execution, and analytics for the ablation study.

pub mod report;
pub mod runlog;
mod stats;

pub use stats::{
    average_ranks, correlation, pearson, spearman, summarize_values, CorrelationReport, GroupStats,
};

use crate::data::{split, SplitSpec, TraceRecord};
use crate::error::{Error, Result};
use crate::nn::{Arch, ModelConfig};
use crate::train::{self, TrainConfig};
use serde::{Deserialize, Serialize};
use std::collections::HashSet;
use std::path::Path;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DatasetKind {
    Local,
    Global,
    /// Standalone training runs outside the local/global pair.
    Custom,
}

impl DatasetKind {
    pub fn as_str(&self) -> &'static str {
        match self {
            DatasetKind::Local => "local",
            DatasetKind::Global => "global",
            DatasetKind::Custom => "custom",
        }
    }
}

impl std::str::FromStr for DatasetKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "local" => Ok(DatasetKind::Local),
            "global" => Ok(DatasetKind::Global),
            "custom" => Ok(DatasetKind::Custom),
            other => Err(Error::invalid(format!(
                "unknown dataset `{other}` (expected local or global)"
            ))),
        }
    }
}

/// Axes of the hyperparameter grid. The defaults reproduce the full
/// 2 models x 3 sizes x 2 gammas x 3 learning rates x 2 PS settings x
/// 2 datasets = 144-cell study.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GridSpec {
    pub models: Vec<Arch>,
    pub sizes: Vec<usize>,
    pub gammas: Vec<f64>,
    pub lrs: Vec<f64>,
    pub ps: Vec<bool>,
    pub datasets: Vec<DatasetKind>,
}

impl Default for GridSpec {
    fn default() -> Self {
        GridSpec {
            models: vec![Arch::ResNet1D, Arch::Tcn],
            sizes: vec![64, 128, 256],
            gammas: vec![0.5, 0.9],
            lrs: vec![1e-3, 1e-4, 1e-5],
            ps: vec![false, true],
            datasets: vec![DatasetKind::Local, DatasetKind::Global],
        }
    }
}

/// One grid cell.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellConfig {
    pub model: Arch,
    pub dataset: DatasetKind,
    pub ps: bool,
    pub size: usize,
    pub gamma: f64,
    pub lr: f64,
}

impl CellConfig {
    /// Canonical identifier; injective over the grid coordinates.
    pub fn run_id(&self) -> String {
        format!(
            "{}-{}-{}-s{}-g{}-lr{}",
            self.model.as_str(),
            self.dataset.as_str(),
            if self.ps { "ps" } else { "nops" },
            self.size,
            self.gamma,
            self.lr
        )
    }

    /// FNV-1a of the canonical id.
    pub fn config_hash(&self) -> u64 {
        let mut h: u64 = 0xcbf29ce484222325;
        for b in self.run_id().bytes() {
            h ^= b as u64;
            h = h.wrapping_mul(0x100000001b3);
        }
        h
    }

    /// Cell seed: grid base seed folded with the config hash, so cells
    /// are independent yet reproducible.
    pub fn derived_seed(&self, base_seed: u64) -> u64 {
        base_seed ^ self.config_hash()
    }
}

fn dedup_axis<T: PartialEq + Clone + std::fmt::Debug>(axis: &[T], name: &str) -> Vec<T> {
    let mut out: Vec<T> = Vec::with_capacity(axis.len());
    for v in axis {
        if out.contains(v) {
            log::warn!("duplicate value {v:?} in grid axis {name}, ignoring");
        } else {
            out.push(v.clone());
        }
    }
    out
}

/// The Cartesian product of the (deduplicated) axes, in a fixed
/// lexicographic order: model, dataset, ps, size, gamma, lr.
pub fn enumerate_grid(spec: &GridSpec) -> Result<Vec<CellConfig>> {
    let models = dedup_axis(&spec.models, "models");
    let datasets = dedup_axis(&spec.datasets, "datasets");
    let ps = dedup_axis(&spec.ps, "ps");
    let sizes = dedup_axis(&spec.sizes, "sizes");
    let gammas = dedup_axis(&spec.gammas, "gammas");
    let lrs = dedup_axis(&spec.lrs, "lrs");
    if models.is_empty()
        || datasets.is_empty()
        || ps.is_empty()
        || sizes.is_empty()
        || gammas.is_empty()
        || lrs.is_empty()
    {
        return Err(Error::invalid("every grid axis must be nonempty"));
    }
    let mut out = Vec::new();
    for &model in &models {
        for &dataset in &datasets {
            for &ps in &ps {
                for &size in &sizes {
                    for &gamma in &gammas {
                        for &lr in &lrs {
                            out.push(CellConfig {
                                model,
                                dataset,
                                ps,
                                size,
                                gamma,
                                lr,
                            });
                        }
                    }
                }
            }
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum RunStatus {
    Done,
    Failed {
        epoch: Option<usize>,
        reason: String,
    },
}

/// Outcome of one grid cell.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ExperimentRecord {
    pub config: CellConfig,
    pub seed: u64,
    pub epochs_run: usize,
    pub final_lr: f64,
    pub train_l1_km: f64,
    pub val_l1_km: f64,
    pub test_l1_km: Option<f64>,
    pub runtime_min: f64,
    pub status: RunStatus,
}

impl ExperimentRecord {
    pub fn run_id(&self) -> String {
        self.config.run_id()
    }

    pub fn is_done(&self) -> bool {
        matches!(self.status, RunStatus::Done)
    }
}

/// Prepared (already filtered) datasets the grid trains on.
pub struct GridDatasets {
    pub local: Vec<TraceRecord>,
    pub global: Vec<TraceRecord>,
}

#[derive(Debug, Clone)]
pub struct GridRunConfig {
    pub base_seed: u64,
    pub epochs: usize,
    pub batch_size: usize,
    pub split: SplitSpec,
    pub normalize: bool,
    pub threads_per_cell: usize,
    /// Accept axis values outside the paper grid (set by axis overrides).
    pub allow_nonstandard: bool,
}

impl Default for GridRunConfig {
    fn default() -> Self {
        GridRunConfig {
            base_seed: 0,
            epochs: 50,
            batch_size: 32,
            split: SplitSpec::default(),
            normalize: true,
            threads_per_cell: 1,
            allow_nonstandard: false,
        }
    }
}

struct CellSplits {
    train: Vec<TraceRecord>,
    val: Vec<TraceRecord>,
    test: Vec<TraceRecord>,
}

fn run_cell(
    cell: &CellConfig,
    splits: &CellSplits,
    run_cfg: &GridRunConfig,
    out_dir: &Path,
    log: &runlog::RunLog,
) -> Result<ExperimentRecord> {
    let run_id = cell.run_id();
    let seed = cell.derived_seed(run_cfg.base_seed);
    let model_cfg = ModelConfig {
        arch: cell.model,
        dense_size: cell.size,
        in_channels: if cell.ps { 4 } else { 3 },
        seed,
        allow_nonstandard: run_cfg.allow_nonstandard,
    };
    let train_cfg = TrainConfig {
        lr0: cell.lr,
        gamma: cell.gamma,
        epochs: run_cfg.epochs,
        batch_size: run_cfg.batch_size,
        seed,
        threads: run_cfg.threads_per_cell,
        normalize: run_cfg.normalize,
        allow_nonstandard: run_cfg.allow_nonstandard,
    };

    let run_dir = out_dir.join("runs").join(&run_id);
    std::fs::create_dir_all(&run_dir)?;

    let started = std::time::Instant::now();
    let mut log_err: Option<Error> = None;
    let outcome = train::train(
        &model_cfg,
        &train_cfg,
        &splits.train,
        &splits.val,
        &splits.test,
        Some(&run_dir.join("model.epd")),
        |stats| {
            if log_err.is_none() {
                if let Err(e) = log.epoch(&run_id, cell, seed, stats) {
                    log_err = Some(e);
                }
            }
        },
    );
    // A log write failure aborts the grid with partial results preserved.
    if let Some(e) = log_err {
        return Err(e);
    }

    let record = match outcome {
        Ok((mut model, metrics)) => {
            write_predictions(&run_dir, &mut model, splits, &train_cfg)?;
            ExperimentRecord {
                config: cell.clone(),
                seed,
                epochs_run: metrics.epochs.len(),
                final_lr: metrics.epochs.last().map_or(0.0, |e| e.lr),
                train_l1_km: metrics.epochs.last().map_or(f64::NAN, |e| e.train_l1_km),
                val_l1_km: metrics.epochs.last().map_or(f64::NAN, |e| e.val_l1_km),
                test_l1_km: Some(metrics.test_l1_km),
                runtime_min: metrics.runtime_min,
                status: RunStatus::Done,
            }
        }
        Err(Error::NumericFailure { context, epoch }) => ExperimentRecord {
            config: cell.clone(),
            seed,
            epochs_run: epoch.map_or(0, |e| e + 1),
            final_lr: 0.0,
            train_l1_km: f64::NAN,
            val_l1_km: f64::NAN,
            test_l1_km: None,
            runtime_min: started.elapsed().as_secs_f64() / 60.0,
            status: RunStatus::Failed {
                epoch,
                reason: context,
            },
        },
        Err(other) => ExperimentRecord {
            config: cell.clone(),
            seed,
            epochs_run: 0,
            final_lr: 0.0,
            train_l1_km: f64::NAN,
            val_l1_km: f64::NAN,
            test_l1_km: None,
            runtime_min: started.elapsed().as_secs_f64() / 60.0,
            status: RunStatus::Failed {
                epoch: None,
                reason: other.to_string(),
            },
        },
    };
    log.finish(&record)?;
    Ok(record)
}

fn write_predictions(
    run_dir: &Path,
    model: &mut crate::nn::Model<f32>,
    splits: &CellSplits,
    cfg: &TrainConfig,
) -> Result<()> {
    let mut w = csv::Writer::from_path(run_dir.join("predictions.csv"))?;
    w.write_record(["split", "truth_km", "pred_km"])?;
    for (name, records) in [
        ("train", &splits.train),
        ("val", &splits.val),
        ("test", &splits.test),
    ] {
        let preds = train::predict(model, records, cfg.normalize, cfg.batch_size, cfg.threads)?;
        for (r, p) in records.iter().zip(preds) {
            w.write_record([name, &r.epicentral_km.to_string(), &p.to_string()])?;
        }
    }
    w.flush()?;
    Ok(())
}

/// Executes every config once, resumably.
///
/// Cells already recorded as done in the log are skipped. Up to
/// `parallelism` cells run concurrently, each internally configured by
/// `run_cfg.threads_per_cell`. Failures are recorded, not fatal; log
/// write failures abort with partial results preserved on disk.
pub fn run_grid(
    configs: &[CellConfig],
    datasets: &GridDatasets,
    run_cfg: &GridRunConfig,
    out_dir: &Path,
    parallelism: usize,
) -> Result<Vec<ExperimentRecord>> {
    std::fs::create_dir_all(out_dir)?;
    let log_path = out_dir.join("runs.jsonl");
    let completed = runlog::completed_run_ids(&log_path)?;
    let existing: Vec<ExperimentRecord> = runlog::read_records(&log_path)?
        .into_iter()
        .filter(|r| r.is_done())
        .collect();

    let pending: Vec<&CellConfig> = configs
        .iter()
        .filter(|c| !completed.contains(&c.run_id()))
        .collect();
    log::info!(
        "grid: {} cells total, {} already done, {} to run",
        configs.len(),
        configs.len() - pending.len(),
        pending.len()
    );

    if configs.iter().any(|c| c.dataset == DatasetKind::Custom) {
        return Err(Error::invalid(
            "grid cells must use the local or global dataset",
        ));
    }
    let split_for = |kind: DatasetKind| -> Result<CellSplits> {
        let rows = match kind {
            DatasetKind::Local => &datasets.local,
            DatasetKind::Global | DatasetKind::Custom => &datasets.global,
        };
        let (train, val, test) = split(rows, &run_cfg.split)?;
        Ok(CellSplits { train, val, test })
    };
    let needs_local = pending.iter().any(|c| c.dataset == DatasetKind::Local);
    let needs_global = pending.iter().any(|c| c.dataset == DatasetKind::Global);
    let local_splits = if needs_local { Some(split_for(DatasetKind::Local)?) } else { None };
    let global_splits = if needs_global { Some(split_for(DatasetKind::Global)?) } else { None };

    let log = runlog::RunLog::append_to(&log_path)?;
    let next = AtomicUsize::new(0);
    let results: Mutex<Vec<ExperimentRecord>> = Mutex::new(Vec::new());
    let fatal: Mutex<Option<Error>> = Mutex::new(None);

    let workers = parallelism.clamp(1, pending.len().max(1));
    std::thread::scope(|s| {
        for _ in 0..workers {
            s.spawn(|| loop {
                let i = next.fetch_add(1, Ordering::SeqCst);
                if i >= pending.len() || fatal.lock().unwrap().is_some() {
                    return;
                }
                let cell = pending[i];
                let splits = match cell.dataset {
                    DatasetKind::Local => local_splits.as_ref().expect("prepared"),
                    DatasetKind::Global | DatasetKind::Custom => {
                        global_splits.as_ref().expect("prepared")
                    }
                };
                match run_cell(cell, splits, run_cfg, out_dir, &log) {
                    Ok(record) => results.lock().unwrap().push(record),
                    Err(e) => {
                        *fatal.lock().unwrap() = Some(e);
                        return;
                    }
                }
            });
        }
    });

    if let Some(e) = fatal.into_inner().unwrap() {
        return Err(e);
    }
    let requested: HashSet<String> = configs.iter().map(|c| c.run_id()).collect();
    let mut all: Vec<ExperimentRecord> = existing
        .into_iter()
        .filter(|r| requested.contains(&r.run_id()))
        .chain(results.into_inner().unwrap())
        .collect();
    all.sort_by_key(|r| r.run_id());
    Ok(all)
}

/// Per-group mean, sample std, and best over finished runs' test error.
pub fn summarize<K: Ord + std::fmt::Display>(
    records: &[ExperimentRecord],
    group_by: impl Fn(&ExperimentRecord) -> K,
) -> Vec<(K, GroupStats)> {
    let mut groups: std::collections::BTreeMap<K, Vec<f64>> = std::collections::BTreeMap::new();
    for r in records {
        let Some(test) = r.test_l1_km else {
            continue;
        };
        if !r.is_done() {
            continue;
        }
        groups.entry(group_by(r)).or_default().push(test);
    }
    let mut out = Vec::new();
    for (key, values) in groups {
        match summarize_values(&values) {
            Ok(stats) => out.push((key, stats)),
            Err(_) => log::warn!("group {key} is empty after filtering, omitted"),
        }
    }
    out
}
