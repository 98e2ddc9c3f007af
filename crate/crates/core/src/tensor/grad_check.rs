//! Central-finite-difference verification of analytic gradients.
//!
//! Runs in f64: the f32 path shares all op code, and f32 finite
//! differences are too noisy to separate truncation error from real
//! gradient bugs.

use super::{Tape, Tensor};
use crate::error::Result;

#[derive(Debug, Clone)]
pub struct GradCheckConfig {
    /// Central-difference step.
    pub step: f64,
    /// Maximum accepted relative error.
    pub tolerance: f64,
    /// Relative error uses `max(|analytic|, |numeric|, denom_floor)` as
    /// denominator so near-zero gradients compare by absolute error.
    pub denom_floor: f64,
}

impl Default for GradCheckConfig {
    fn default() -> Self {
        GradCheckConfig {
            step: 1e-5,
            tolerance: 1e-4,
            denom_floor: 1e-4,
        }
    }
}

/// Worst observed error for one checked input tensor.
#[derive(Debug, Clone)]
pub struct ParamReport {
    pub name: String,
    pub max_rel_err: f64,
    pub coords_checked: usize,
}

/// Per-parameter maximum relative errors for one checked function.
#[derive(Debug, Clone, Default)]
pub struct GradReport {
    pub params: Vec<ParamReport>,
}

impl GradReport {
    pub fn max_rel_err(&self) -> f64 {
        self.params
            .iter()
            .map(|p| p.max_rel_err)
            .fold(0.0, f64::max)
    }

    pub fn passes(&self, tolerance: f64) -> bool {
        self.max_rel_err() <= tolerance
    }

    pub fn merge(&mut self, other: GradReport) {
        self.params.extend(other.params);
    }
}

pub fn relative_error(analytic: f64, numeric: f64, denom_floor: f64) -> f64 {
    let denom = analytic.abs().max(numeric.abs()).max(denom_floor);
    (analytic - numeric).abs() / denom
}

/// Checks d(scalar)/d(input) for every listed input of `eval`.
///
/// `eval` must be a pure function of the given tensors: it is called once
/// with tape-bound inputs for the analytic pass and repeatedly with
/// perturbed unbound copies for the finite-difference passes.
///
/// `coords`: coordinates to probe per input; `None` probes all of them.
pub fn check_gradients<F>(
    inputs: &[(&str, Tensor<f64>)],
    coords: Option<&[Vec<usize>]>,
    cfg: &GradCheckConfig,
    eval: F,
) -> Result<GradReport>
where
    F: Fn(&mut Tape<f64>, &[Tensor<f64>]) -> Result<Tensor<f64>>,
{
    // Analytic pass with bound leaves.
    let mut tape = Tape::new();
    let mut bound: Vec<Tensor<f64>> = Vec::with_capacity(inputs.len());
    let mut nodes = Vec::with_capacity(inputs.len());
    for (_, t) in inputs {
        let mut t = t.clone();
        t.set_requires_grad(true);
        nodes.push(tape.leaf(&mut t));
        bound.push(t);
    }
    let loss = eval(&mut tape, &bound)?;
    let mut grads = tape.backward(&loss)?;
    let analytic: Vec<Vec<f64>> = nodes
        .iter()
        .zip(&bound)
        .map(|(&n, t)| grads.take(n).unwrap_or_else(|| vec![0.0; t.numel()]))
        .collect();

    // Finite-difference passes on unbound copies.
    let mut base: Vec<Tensor<f64>> = inputs.iter().map(|(_, t)| t.clone()).collect();
    for t in &mut base {
        t.set_node(None);
        t.set_requires_grad(false);
    }

    let mut report = GradReport::default();
    for (i, (name, _)) in inputs.iter().enumerate() {
        let all: Vec<usize>;
        let probe: &[usize] = match coords {
            Some(c) => &c[i],
            None => {
                all = (0..base[i].numel()).collect();
                &all
            }
        };
        let mut max_err: f64 = 0.0;
        for &j in probe {
            let orig = base[i].data()[j];
            base[i].data_mut()[j] = orig + cfg.step;
            let up = eval(&mut Tape::new(), &base)?.item();
            base[i].data_mut()[j] = orig - cfg.step;
            let down = eval(&mut Tape::new(), &base)?.item();
            base[i].data_mut()[j] = orig;
            let numeric = (up - down) / (2.0 * cfg.step);
            max_err = max_err.max(relative_error(analytic[i][j], numeric, cfg.denom_floor));
        }
        report.params.push(ParamReport {
            name: name.to_string(),
            max_rel_err: max_err,
            coords_checked: probe.len(),
        });
    }
    Ok(report)
}
