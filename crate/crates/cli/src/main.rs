//! `epd`: synthesis, training, grid execution, and correlation analysis
//! for single-station epicentral-distance regression.
//!
//! Machine-parsable key=value lines go to standard output; human-readable
//! logs go to standard error. Exit codes: 0 success, 2 usage/config,
//! 3 I/O, 4 numeric failure.

mod config;

use clap::{Args, Parser, Subcommand};
use config::RunManifest;
use epd_core::data::{self, SyntheticSpec};
use epd_core::error::{Error, Result};
use epd_core::experiments::{
    self, correlation, enumerate_grid, report, runlog, CellConfig, DatasetKind, GridDatasets,
    GridRunConfig, GridSpec,
};
use epd_core::nn::{Arch, ModelConfig};
use epd_core::train::{self, TrainConfig};
use std::path::PathBuf;

#[derive(Parser)]
#[command(
    name = "epd",
    about = "Single-station epicentral-distance training and analysis harness",
    version
)]
struct Cli {
    /// JSON run manifest providing defaults for flags.
    #[arg(long, global = true, value_name = "FILE")]
    config: Option<PathBuf>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic dataset directory (manifest + waveform store).
    Synth(SynthArgs),
    /// Train one model on a prepared dataset directory.
    Train(TrainArgs),
    /// Run the hyperparameter grid over prepared local/global datasets.
    Grid(GridArgs),
    /// Correlate S-P intervals with epicentral distances from a manifest.
    Analyze(AnalyzeArgs),
}

#[derive(Args)]
struct SynthArgs {
    /// SyntheticSpec as JSON (defaults otherwise).
    #[arg(long, value_name = "FILE")]
    spec: Option<PathBuf>,
    /// Output dataset directory.
    #[arg(long, value_name = "DIR")]
    out: PathBuf,
    /// Trace count override.
    #[arg(long)]
    n: Option<usize>,
    /// Seed override (EPD_SEED is the environment default).
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Args)]
struct TrainArgs {
    /// Prepared dataset directory.
    #[arg(long, value_name = "DIR")]
    data: PathBuf,
    /// Encoder architecture: tcn or resnet.
    #[arg(long)]
    model: Option<String>,
    /// Dense-head width (grid values: 64, 128, 256).
    #[arg(long)]
    size: Option<usize>,
    /// Initial learning rate (grid values: 1e-3, 1e-4, 1e-5).
    #[arg(long)]
    lr: Option<f64>,
    /// Per-epoch decay factor (grid values: 0.5, 0.9).
    #[arg(long)]
    gamma: Option<f64>,
    /// Include the P/S boxcar as a 4th input channel.
    #[arg(long, overrides_with = "no_ps")]
    ps: bool,
    #[arg(long = "no-ps")]
    no_ps: bool,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    batch_size: Option<usize>,
    /// Worker threads for convolution arithmetic (bitwise-identical
    /// results for any value).
    #[arg(long)]
    threads: Option<usize>,
    /// Disable per-trace z-scoring of waveform channels.
    #[arg(long)]
    no_normalize: bool,
    /// Accept hyperparameters outside the paper grid values.
    #[arg(long)]
    allow_nonstandard: bool,
    /// Output directory (checkpoint, run log, predictions).
    #[arg(long, value_name = "DIR")]
    out: PathBuf,
}

#[derive(Args)]
struct GridArgs {
    /// Prepared global dataset directory.
    #[arg(long, value_name = "DIR")]
    data_global: Option<PathBuf>,
    /// Prepared local dataset directory.
    #[arg(long, value_name = "DIR")]
    data_local: Option<PathBuf>,
    /// Concurrent grid cells.
    #[arg(long, default_value_t = 1)]
    parallelism: usize,
    /// Output directory (run log, per-run artifacts, report).
    #[arg(long, value_name = "DIR")]
    out: PathBuf,
    /// Axis overrides, e.g. --axes models=tcn --axes sizes=64,128.
    #[arg(long, value_name = "AXIS=V1,V2", num_args = 1..)]
    axes: Vec<String>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    batch_size: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    /// Worker threads inside each cell.
    #[arg(long, default_value_t = 1)]
    threads_per_cell: usize,
    /// Accept axis values outside the paper grid.
    #[arg(long)]
    allow_nonstandard: bool,
}

#[derive(Args)]
struct AnalyzeArgs {
    /// Metadata CSV with arrivals and distances.
    #[arg(long, value_name = "FILE")]
    manifest: PathBuf,
    /// Output directory for the scatter SVG and CSV.
    #[arg(long, value_name = "DIR")]
    out: PathBuf,
}

fn main() {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    if let Err(e) = run(cli) {
        eprintln!("error: {e}");
        std::process::exit(exit_code(&e));
    }
}

fn exit_code(e: &Error) -> i32 {
    match e {
        Error::InvalidArgument(_) | Error::UndefinedCorrelation(_) => 2,
        Error::NumericFailure { .. } => 4,
        _ => 3,
    }
}

fn env_seed() -> Option<u64> {
    std::env::var("EPD_SEED").ok().and_then(|v| v.parse().ok())
}

fn run(cli: Cli) -> Result<()> {
    let manifest = match &cli.config {
        Some(path) => RunManifest::load(path)?,
        None => RunManifest::default(),
    };
    match cli.command {
        Command::Synth(args) => cmd_synth(args, &manifest),
        Command::Train(args) => cmd_train(args, &manifest),
        Command::Grid(args) => cmd_grid(args, &manifest),
        Command::Analyze(args) => cmd_analyze(args),
    }
}

fn cmd_synth(args: SynthArgs, manifest: &RunManifest) -> Result<()> {
    let mut spec: SyntheticSpec = match &args.spec {
        Some(path) => {
            let text = std::fs::read_to_string(path)?;
            serde_json::from_str(&text)
                .map_err(|e| Error::invalid(format!("{}: {e}", path.display())))?
        }
        None => manifest.synth.clone().unwrap_or_default(),
    };
    if let Some(n) = args.n {
        spec.n = n;
    }
    if let Some(seed) = args.seed.or_else(env_seed) {
        spec.seed = seed;
    }
    spec.validate()?;
    let records = data::generate(&spec)?;
    data::write_dataset(&args.out, &records)?;
    println!("n={}", records.len());
    println!(
        "distance_range_km={}..{}",
        spec.distance_range_km.0, spec.distance_range_km.1
    );
    println!("seed={}", spec.seed);
    println!("out={}", args.out.display());
    Ok(())
}

struct TrainSetup {
    model_cfg: ModelConfig,
    train_cfg: TrainConfig,
    ps: bool,
}

fn resolve_train(args: &TrainArgs, manifest: &RunManifest) -> Result<TrainSetup> {
    let base = manifest.train.clone().unwrap_or_default();
    let ps = if args.no_ps {
        false
    } else if args.ps {
        true
    } else {
        manifest.model.ps.unwrap_or(false)
    };
    let arch = match &args.model {
        Some(m) => m.parse::<Arch>()?,
        None => manifest.model.arch.unwrap_or(Arch::Tcn),
    };
    let seed = args.seed.or_else(env_seed).unwrap_or(base.seed);
    let train_cfg = TrainConfig {
        lr0: args.lr.unwrap_or(base.lr0),
        gamma: args.gamma.unwrap_or(base.gamma),
        epochs: args.epochs.unwrap_or(base.epochs),
        batch_size: args.batch_size.unwrap_or(base.batch_size),
        seed,
        threads: args.threads.unwrap_or(base.threads),
        normalize: if args.no_normalize { false } else { base.normalize },
        allow_nonstandard: args.allow_nonstandard || base.allow_nonstandard,
    };
    let model_cfg = ModelConfig {
        arch,
        dense_size: args.size.or(manifest.model.dense_size).unwrap_or(64),
        in_channels: if ps { 4 } else { 3 },
        seed,
        allow_nonstandard: train_cfg.allow_nonstandard,
    };
    Ok(TrainSetup {
        model_cfg,
        train_cfg,
        ps,
    })
}

fn cmd_train(args: TrainArgs, manifest: &RunManifest) -> Result<()> {
    let setup = resolve_train(&args, manifest)?;
    setup.model_cfg.validate()?;
    setup.train_cfg.validate()?;

    let records = data::load_dataset(&args.data)?;
    let split_spec = manifest.split.unwrap_or_default();
    let (train_set, val_set, test_set) = data::split(&records, &split_spec)?;
    log::info!(
        "dataset {}: {} train / {} val / {} test",
        args.data.display(),
        train_set.len(),
        val_set.len(),
        test_set.len()
    );

    std::fs::create_dir_all(&args.out)?;
    let cell = CellConfig {
        model: setup.model_cfg.arch,
        dataset: DatasetKind::Custom,
        ps: setup.ps,
        size: setup.model_cfg.dense_size,
        gamma: setup.train_cfg.gamma,
        lr: setup.train_cfg.lr0,
    };
    let run_id = cell.run_id();
    let log_path = args.out.join("runs.jsonl");
    let run_log = runlog::RunLog::append_to(&log_path)?;
    let seed = setup.train_cfg.seed;

    let mut log_err: Option<Error> = None;
    let (mut model, metrics) = train::train(
        &setup.model_cfg,
        &setup.train_cfg,
        &train_set,
        &val_set,
        &test_set,
        Some(&args.out.join("model.epd")),
        |stats| {
            log::info!(
                "epoch {:>3}: lr {:.3e}  train {:.3} km  val {:.3} km  ({:.1}s)",
                stats.epoch,
                stats.lr,
                stats.train_l1_km,
                stats.val_l1_km,
                stats.wall_s
            );
            if log_err.is_none() {
                if let Err(e) = run_log.epoch(&run_id, &cell, seed, stats) {
                    log_err = Some(e);
                }
            }
        },
    )?;
    if let Some(e) = log_err {
        return Err(e);
    }

    let record = experiments::ExperimentRecord {
        config: cell.clone(),
        seed,
        epochs_run: metrics.epochs.len(),
        final_lr: metrics.epochs.last().map_or(0.0, |e| e.lr),
        train_l1_km: metrics.epochs.last().map_or(f64::NAN, |e| e.train_l1_km),
        val_l1_km: metrics.epochs.last().map_or(f64::NAN, |e| e.val_l1_km),
        test_l1_km: Some(metrics.test_l1_km),
        runtime_min: metrics.runtime_min,
        status: experiments::RunStatus::Done,
    };
    run_log.finish(&record)?;

    // Predictions for the scatter report.
    let mut out = String::from("split,truth_km,pred_km\n");
    for (name, set) in [("train", &train_set), ("val", &val_set), ("test", &test_set)] {
        let preds = train::predict(
            &mut model,
            set,
            setup.train_cfg.normalize,
            setup.train_cfg.batch_size,
            setup.train_cfg.threads,
        )?;
        for (r, p) in set.iter().zip(preds) {
            out.push_str(&format!("{name},{},{p}\n", r.epicentral_km));
        }
    }
    std::fs::write(args.out.join("predictions.csv"), out)?;

    println!("run_id={run_id}");
    println!("best_epoch={}", metrics.best_epoch);
    println!("runtime_min={:.3}", metrics.runtime_min);
    println!("test_l1_km={}", metrics.test_l1_km);
    Ok(())
}

fn parse_axes(spec: &mut GridSpec, axes: &[String]) -> Result<()> {
    for axis in axes {
        let (key, values) = axis
            .split_once('=')
            .ok_or_else(|| Error::invalid(format!("axis override `{axis}` is not KEY=VALUES")))?;
        let values: Vec<&str> = values.split(',').map(str::trim).collect();
        match key {
            "models" => {
                spec.models = values
                    .iter()
                    .map(|v| v.parse())
                    .collect::<Result<Vec<Arch>>>()?;
            }
            "sizes" => {
                spec.sizes = values
                    .iter()
                    .map(|v| {
                        v.parse::<usize>()
                            .map_err(|_| Error::invalid(format!("bad size `{v}`")))
                    })
                    .collect::<Result<Vec<_>>>()?;
            }
            "gammas" => {
                spec.gammas = values
                    .iter()
                    .map(|v| {
                        v.parse::<f64>()
                            .map_err(|_| Error::invalid(format!("bad gamma `{v}`")))
                    })
                    .collect::<Result<Vec<_>>>()?;
            }
            "lrs" => {
                spec.lrs = values
                    .iter()
                    .map(|v| {
                        v.parse::<f64>()
                            .map_err(|_| Error::invalid(format!("bad lr `{v}`")))
                    })
                    .collect::<Result<Vec<_>>>()?;
            }
            "ps" => {
                spec.ps = values
                    .iter()
                    .map(|v| match *v {
                        "with" | "true" | "1" => Ok(true),
                        "without" | "false" | "0" => Ok(false),
                        other => Err(Error::invalid(format!("bad ps value `{other}`"))),
                    })
                    .collect::<Result<Vec<_>>>()?;
            }
            "datasets" => {
                spec.datasets = values
                    .iter()
                    .map(|v| v.parse())
                    .collect::<Result<Vec<DatasetKind>>>()?;
            }
            other => {
                return Err(Error::invalid(format!(
                    "unknown grid axis `{other}` (models, sizes, gammas, lrs, ps, datasets)"
                )))
            }
        }
    }
    Ok(())
}

fn cmd_grid(args: GridArgs, manifest: &RunManifest) -> Result<()> {
    let mut spec = manifest.grid.clone().unwrap_or_default();
    parse_axes(&mut spec, &args.axes)?;
    let cells = enumerate_grid(&spec)?;

    let needs = |kind: DatasetKind| cells.iter().any(|c| c.dataset == kind);
    let load = |dir: &Option<PathBuf>, name: &str| -> Result<Vec<data::TraceRecord>> {
        let dir = dir.as_ref().ok_or_else(|| {
            Error::invalid(format!(
                "the grid includes {name} cells but --data-{name} was not given"
            ))
        })?;
        data::load_dataset(dir)
    };
    let datasets = GridDatasets {
        local: if needs(DatasetKind::Local) {
            load(&args.data_local, "local")?
        } else {
            Vec::new()
        },
        global: if needs(DatasetKind::Global) {
            load(&args.data_global, "global")?
        } else {
            Vec::new()
        },
    };

    let base = manifest.train.clone().unwrap_or_default();
    let run_cfg = GridRunConfig {
        base_seed: args.seed.or_else(env_seed).unwrap_or(base.seed),
        epochs: args.epochs.unwrap_or(base.epochs),
        batch_size: args.batch_size.unwrap_or(base.batch_size),
        split: manifest.split.unwrap_or_default(),
        normalize: base.normalize,
        threads_per_cell: args.threads_per_cell.max(1),
        allow_nonstandard: args.allow_nonstandard,
    };

    println!("cells={}", cells.len());
    let records = experiments::run_grid(&cells, &datasets, &run_cfg, &args.out, args.parallelism)?;
    let done = records.iter().filter(|r| r.is_done()).count();
    let failed = records.len() - done;
    println!("done={done}");
    println!("failed={failed}");

    // Distance-vs-S-P pairs for the correlation figure come from the
    // global subset when present.
    let pool = if !datasets.global.is_empty() {
        &datasets.global
    } else {
        &datasets.local
    };
    let pairs: Vec<(f64, f64)> = pool
        .iter()
        .map(|r| (r.sp_interval_s(), r.epicentral_km))
        .collect();
    let files = report::emit_report(
        &records,
        &args.out,
        if pairs.len() >= 2 { Some(&pairs) } else { None },
    )?;
    println!("report_files={}", files.len());

    for (key, stats) in experiments::summarize(&records, |r| {
        format!(
            "{}-{}-{}",
            r.config.model.as_str(),
            r.config.dataset.as_str(),
            if r.config.ps { "ps" } else { "nops" }
        )
    }) {
        println!(
            "group={key} n={} mean={:.2} std={:.2} best={:.2}",
            stats.n, stats.mean, stats.std, stats.best
        );
    }
    Ok(())
}

fn cmd_analyze(args: AnalyzeArgs) -> Result<()> {
    let load = data::load_manifest(&args.manifest)?;
    for reject in &load.rejects {
        log::warn!("row {}: {}", reject.row, reject.reason);
    }
    if load.rows.is_empty() {
        return Err(Error::invalid("manifest has no valid rows"));
    }
    let pairs: Vec<(f64, f64)> = load
        .rows
        .iter()
        .map(|r| {
            (
                (r.s_arrival_sample - r.p_arrival_sample) as f64 / data::SAMPLE_RATE_HZ,
                r.source_distance_km,
            )
        })
        .collect();
    let report_out = correlation(&pairs)?;

    std::fs::create_dir_all(&args.out)?;
    let mut csv_copy = String::from("sp_interval_s,epicentral_km\n");
    for (sp, km) in &pairs {
        csv_copy.push_str(&format!("{sp},{km}\n"));
    }
    let svg = report::scatter_svg(
        "Epicentral distance vs S-P interval",
        "S-P interval (s)",
        "epicentral distance (km)",
        &[report::Series {
            name: "events".into(),
            marker: report::Marker::Circle,
            color: "#1f77b4",
            points: pairs.clone(),
        }],
        false,
    );
    std::fs::write(args.out.join("sp_vs_distance.svg"), svg)?;
    std::fs::write(args.out.join("sp_vs_distance.csv"), csv_copy)?;

    println!(
        "pearson={:.6} spearman={:.6} n={}",
        report_out.pearson, report_out.spearman, report_out.n
    );
    Ok(())
}
