//! Deterministic training loop with exponential learning-rate decay,
//! evaluated in kilometers end to end.

mod adam;

pub use adam::Adam;

use crate::data::{assemble_into, TraceRecord, SEQ_LEN};
use crate::error::{Error, Result};
use crate::nn::{build_model, Mode, Model, ModelConfig};
use crate::tensor::{l1_loss, Tape, Tensor};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use std::path::Path;
use std::time::Instant;

/// Learning rates covered by the hyperparameter grid.
pub const GRID_LRS: [f64; 3] = [1e-3, 1e-4, 1e-5];
/// Per-epoch decay factors covered by the grid.
pub const GRID_GAMMAS: [f64; 2] = [0.5, 0.9];

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub lr0: f64,
    pub gamma: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub seed: u64,
    /// Worker threads for the per-sample convolution arithmetic; results
    /// are bitwise-identical for any value.
    pub threads: usize,
    /// Per-trace z-scoring of the waveform channels.
    pub normalize: bool,
    /// Accept learning rates or gammas outside the grid values.
    pub allow_nonstandard: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            lr0: 1e-3,
            gamma: 0.9,
            epochs: 50,
            batch_size: 32,
            seed: 0,
            threads: 1,
            normalize: true,
            allow_nonstandard: false,
        }
    }
}

fn close(a: f64, b: f64) -> bool {
    (a - b).abs() <= 1e-12 * b.abs().max(1.0)
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !self.allow_nonstandard {
            if !GRID_LRS.iter().any(|&v| close(self.lr0, v)) {
                return Err(Error::invalid(format!(
                    "lr0 {} is not one of {GRID_LRS:?} (pass the nonstandard override to allow it)",
                    self.lr0
                )));
            }
            if !GRID_GAMMAS.iter().any(|&v| close(self.gamma, v)) {
                return Err(Error::invalid(format!(
                    "gamma {} is not one of {GRID_GAMMAS:?} (pass the nonstandard override to allow it)",
                    self.gamma
                )));
            }
        }
        if !(self.lr0 > 0.0) || !(self.gamma > 0.0) {
            return Err(Error::invalid("lr0 and gamma must be positive"));
        }
        if self.epochs == 0 || self.batch_size == 0 {
            return Err(Error::invalid("epochs and batch_size must be positive"));
        }
        Ok(())
    }
}

/// Learning rate at the given epoch: `lr0 * gamma^epoch`.
pub fn schedule(lr0: f64, gamma: f64, epoch: usize) -> f64 {
    lr0 * gamma.powi(epoch as i32)
}

#[derive(Debug, Clone, Serialize)]
pub struct EpochStats {
    pub epoch: usize,
    pub lr: f64,
    pub train_l1_km: f64,
    pub val_l1_km: f64,
    pub wall_s: f64,
}

#[derive(Debug, Clone)]
pub struct Metrics {
    pub epochs: Vec<EpochStats>,
    pub best_epoch: usize,
    pub test_l1_km: f64,
    pub runtime_min: f64,
}

/// Stacks records into a `[B, C, 6000]` batch and its `[B]` targets.
fn assemble_batch(
    records: &[TraceRecord],
    indices: &[usize],
    include_ps: bool,
    normalize: bool,
) -> Result<(Tensor<f32>, Tensor<f32>)> {
    let channels = if include_ps { 4 } else { 3 };
    let b = indices.len();
    let mut data = vec![0.0f32; b * channels * SEQ_LEN];
    let mut targets = Vec::with_capacity(b);
    for (slot, &i) in indices.iter().enumerate() {
        let r = &records[i];
        assemble_into(
            r,
            include_ps,
            normalize,
            &mut data[slot * channels * SEQ_LEN..(slot + 1) * channels * SEQ_LEN],
        )?;
        targets.push(r.epicentral_km as f32);
    }
    Ok((
        Tensor::from_vec(vec![b, channels, SEQ_LEN], data)?,
        Tensor::from_vec(vec![b], targets)?,
    ))
}

/// Mean |prediction - target| in km over a split, in evaluation mode.
pub fn evaluate(
    model: &mut Model<f32>,
    records: &[TraceRecord],
    normalize: bool,
    batch_size: usize,
    threads: usize,
) -> Result<f64> {
    if records.is_empty() {
        return Err(Error::invalid("evaluate needs a nonempty split"));
    }
    let preds = predict(model, records, normalize, batch_size, threads)?;
    let mut acc = 0.0f64;
    for (p, r) in preds.iter().zip(records) {
        acc += (*p as f64 - r.epicentral_km).abs();
    }
    Ok(acc / records.len() as f64)
}

/// Evaluation-mode predictions (km), one per record, in record order.
pub fn predict(
    model: &mut Model<f32>,
    records: &[TraceRecord],
    normalize: bool,
    batch_size: usize,
    threads: usize,
) -> Result<Vec<f32>> {
    let include_ps = model.in_channels() == 4;
    model.unbind();
    let indices: Vec<usize> = (0..records.len()).collect();
    let mut out = Vec::with_capacity(records.len());
    for chunk in indices.chunks(batch_size.max(1)) {
        let (x, _) = assemble_batch(records, chunk, include_ps, normalize)?;
        let mut tape = Tape::with_threads(threads);
        let pred = model.forward(&mut tape, &x, Mode::Eval)?;
        out.extend_from_slice(pred.data());
    }
    Ok(out)
}

struct ModelState {
    params: Vec<Vec<f32>>,
    buffers: Vec<Vec<f32>>,
}

fn snapshot(model: &Model<f32>) -> ModelState {
    ModelState {
        params: model
            .named_params()
            .iter()
            .map(|(_, p)| p.data().to_vec())
            .collect(),
        buffers: model
            .named_buffers()
            .iter()
            .map(|(_, b)| b.to_vec())
            .collect(),
    }
}

fn restore(model: &mut Model<f32>, state: &ModelState) {
    for ((_, p), saved) in model.named_params_mut().into_iter().zip(&state.params) {
        p.data_mut().copy_from_slice(saved);
    }
    for ((_, b), saved) in model.named_buffers_mut().into_iter().zip(&state.buffers) {
        b.copy_from_slice(saved);
    }
}

/// Trains for the configured number of epochs against the haversine-
/// derived distance targets, retaining the best-validation model.
///
/// The returned model is the best-validation one; `test_l1_km` is its
/// test error. Per-epoch statistics stream through `on_epoch`.
pub fn train(
    model_cfg: &ModelConfig,
    train_cfg: &TrainConfig,
    train_set: &[TraceRecord],
    val_set: &[TraceRecord],
    test_set: &[TraceRecord],
    checkpoint_path: Option<&Path>,
    mut on_epoch: impl FnMut(&EpochStats),
) -> Result<(Model<f32>, Metrics)> {
    train_cfg.validate()?;
    if train_set.is_empty() || val_set.is_empty() || test_set.is_empty() {
        return Err(Error::invalid("train/val/test splits must be nonempty"));
    }
    let include_ps = model_cfg.in_channels == 4;

    let started = Instant::now();
    let mut model: Model<f32> = build_model(model_cfg)?;
    let sizes: Vec<usize> = model.named_params().iter().map(|(_, p)| p.numel()).collect();
    let mut adam = Adam::new(&sizes);
    let mut rng = ChaCha8Rng::seed_from_u64(train_cfg.seed);

    let mut best: Option<(f64, usize, ModelState)> = None;
    let mut epochs = Vec::with_capacity(train_cfg.epochs);

    let mut order: Vec<usize> = (0..train_set.len()).collect();
    for epoch in 0..train_cfg.epochs {
        let epoch_start = Instant::now();
        let lr = schedule(train_cfg.lr0, train_cfg.gamma, epoch);
        order.shuffle(&mut rng);

        let mut loss_sum = 0.0f64;
        for chunk in order.chunks(train_cfg.batch_size) {
            let (x, y) = assemble_batch(train_set, chunk, include_ps, train_cfg.normalize)?;
            let batch_loss = {
                let mut tape = Tape::with_threads(train_cfg.threads);
                model.bind(&mut tape);
                let pred = model
                    .forward(&mut tape, &x, Mode::Train)
                    .map_err(|e| at_epoch(e, epoch))?;
                let loss = l1_loss(&mut tape, &pred, &y)?;
                let value = loss.item() as f64;
                if !value.is_finite() {
                    return Err(Error::NumericFailure {
                        context: "training loss".to_string(),
                        epoch: Some(epoch),
                    });
                }
                let mut grads = tape.backward(&loss)?;
                for (_, p) in model.named_params_mut() {
                    if let Some(g) = grads.take(p.node().expect("bound param")) {
                        p.set_grad(g);
                    }
                }
                value
                // Tape (and its saved buffers) drop here so the update
                // below can mutate parameters in place.
            };
            model.unbind();
            adam.step(lr, &mut model.named_params_mut());
            loss_sum += batch_loss * chunk.len() as f64;
        }
        let train_l1 = loss_sum / train_set.len() as f64;

        let val_l1 = evaluate(
            &mut model,
            val_set,
            train_cfg.normalize,
            train_cfg.batch_size,
            train_cfg.threads,
        )
        .map_err(|e| at_epoch(e, epoch))?;

        let stats = EpochStats {
            epoch,
            lr,
            train_l1_km: train_l1,
            val_l1_km: val_l1,
            wall_s: epoch_start.elapsed().as_secs_f64(),
        };
        on_epoch(&stats);
        epochs.push(stats);

        if best.as_ref().is_none_or(|(b, _, _)| val_l1 < *b) {
            best = Some((val_l1, epoch, snapshot(&model)));
        }
    }

    let (_, best_epoch, state) = best.expect("at least one epoch ran");
    restore(&mut model, &state);
    let test_l1 = evaluate(
        &mut model,
        test_set,
        train_cfg.normalize,
        train_cfg.batch_size,
        train_cfg.threads,
    )?;
    if let Some(path) = checkpoint_path {
        model.save_checkpoint(path)?;
    }

    Ok((
        model,
        Metrics {
            epochs,
            best_epoch,
            test_l1_km: test_l1,
            runtime_min: started.elapsed().as_secs_f64() / 60.0,
        },
    ))
}

fn at_epoch(e: Error, epoch: usize) -> Error {
    match e {
        Error::NumericFailure { context, .. } => Error::NumericFailure {
            context,
            epoch: Some(epoch),
        },
        other => other,
    }
}
