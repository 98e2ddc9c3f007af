//! Building blocks shared by the two encoders.
//!
//! Convolutions are weight-standardized and followed by a learnable
//! per-channel scale/shift driven by batch statistics in training mode
//! and by running averages (momentum 0.1) at inference.

use crate::error::{Error, Result};
use crate::tensor::{
    batch_norm, batch_norm_eval, conv1d_padded, dense, relu_owned, residual_add_owned,
    weight_standardize, Element, Tape, Tensor,
};
use rand::distr::{Distribution, Uniform};
use rand_chacha::ChaCha8Rng;

pub(crate) const NORM_EPS: f64 = 1e-5;
pub(crate) const WS_EPS: f64 = 1e-5;
pub(crate) const RUNNING_MOMENTUM: f64 = 0.1;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Train,
    Eval,
}

/// Fan-in-scaled uniform initialization.
fn init_weight<E: Element>(rng: &mut ChaCha8Rng, shape: Vec<usize>, fan_in: usize) -> Tensor<E> {
    let bound = 1.0 / (fan_in as f64).sqrt();
    let dist = Uniform::new_inclusive(-bound, bound).expect("valid bounds");
    let n: usize = shape.iter().product();
    let data: Vec<E> = (0..n).map(|_| E::from_f64(dist.sample(rng))).collect();
    let mut t = Tensor::from_vec(shape, data).expect("shape/data agree");
    t.set_requires_grad(true);
    t
}

fn ones_param<E: Element>(n: usize) -> Tensor<E> {
    let mut t = Tensor::filled(vec![n], E::ONE);
    t.set_requires_grad(true);
    t
}

fn zeros_param<E: Element>(shape: Vec<usize>) -> Tensor<E> {
    let mut t = Tensor::zeros(shape);
    t.set_requires_grad(true);
    t
}

/// Weight-standardized convolution plus batch-statistics scale/shift.
pub(crate) struct NormConv<E: Element> {
    pub name: String,
    pub weight: Tensor<E>,
    pub gamma: Tensor<E>,
    pub beta: Tensor<E>,
    pub running_mean: Vec<E>,
    pub running_var: Vec<E>,
    pub stride: usize,
    pub dilation: usize,
    pub pad_left: usize,
    pub pad_right: usize,
}

impl<E: Element> NormConv<E> {
    #[allow(clippy::too_many_arguments)]
    pub fn init(
        rng: &mut ChaCha8Rng,
        name: impl Into<String>,
        in_channels: usize,
        out_channels: usize,
        kernel: usize,
        stride: usize,
        dilation: usize,
        pad_left: usize,
        pad_right: usize,
    ) -> Self {
        NormConv {
            name: name.into(),
            weight: init_weight(
                rng,
                vec![out_channels, in_channels, kernel],
                in_channels * kernel,
            ),
            gamma: ones_param(out_channels),
            beta: zeros_param(vec![out_channels]),
            running_mean: vec![E::ZERO; out_channels],
            running_var: vec![E::ONE; out_channels],
            stride,
            dilation,
            pad_left,
            pad_right,
        }
    }

    pub fn forward(&mut self, tape: &mut Tape<E>, x: &Tensor<E>, mode: Mode) -> Result<Tensor<E>> {
        let ws = weight_standardize(tape, &self.weight, E::from_f64(WS_EPS))?;
        let y = conv1d_padded(
            tape,
            x,
            &ws,
            None,
            self.stride,
            self.dilation,
            self.pad_left,
            self.pad_right,
        )?;
        match mode {
            Mode::Train => {
                let out = batch_norm(tape, &y, &self.gamma, &self.beta, E::from_f64(NORM_EPS))?;
                // A non-finite conv output surfaces in the channel statistics,
                // which we already have in hand.
                for c in 0..out.batch_mean.len() {
                    if !out.batch_mean[c].is_finite() || !out.batch_var[c].is_finite() {
                        return Err(Error::NumericFailure {
                            context: self.name.clone(),
                            epoch: None,
                        });
                    }
                }
                let m = E::from_f64(RUNNING_MOMENTUM);
                let keep = E::ONE - m;
                for c in 0..self.running_mean.len() {
                    self.running_mean[c] = self.running_mean[c] * keep + out.batch_mean[c] * m;
                    self.running_var[c] = self.running_var[c] * keep + out.batch_var[c] * m;
                }
                Ok(out.output)
            }
            Mode::Eval => batch_norm_eval(
                &y,
                self.gamma.data(),
                self.beta.data(),
                &self.running_mean,
                &self.running_var,
                E::from_f64(NORM_EPS),
            ),
        }
    }

    pub fn visit_params<'a>(&'a self, out: &mut Vec<(String, &'a Tensor<E>)>) {
        out.push((format!("{}.weight", self.name), &self.weight));
        out.push((format!("{}.gamma", self.name), &self.gamma));
        out.push((format!("{}.beta", self.name), &self.beta));
    }

    pub fn visit_params_mut<'a>(&'a mut self, out: &mut Vec<(String, &'a mut Tensor<E>)>) {
        out.push((format!("{}.weight", self.name), &mut self.weight));
        out.push((format!("{}.gamma", self.name), &mut self.gamma));
        out.push((format!("{}.beta", self.name), &mut self.beta));
    }

    pub fn visit_buffers<'a>(&'a self, out: &mut Vec<(String, &'a [E])>) {
        out.push((format!("{}.running_mean", self.name), &self.running_mean));
        out.push((format!("{}.running_var", self.name), &self.running_var));
    }

    pub fn visit_buffers_mut<'a>(&'a mut self, out: &mut Vec<(String, &'a mut Vec<E>)>) {
        out.push((format!("{}.running_mean", self.name), &mut self.running_mean));
        out.push((format!("{}.running_var", self.name), &mut self.running_var));
    }
}

/// Residual block: two norm-convs with a ReLU between, an identity or
/// 1x1-projection shortcut, and a ReLU after the sum.
pub(crate) struct ResidualBlock<E: Element> {
    pub conv1: NormConv<E>,
    pub conv2: NormConv<E>,
    pub shortcut: Option<NormConv<E>>,
}

impl<E: Element> ResidualBlock<E> {
    pub fn forward(&mut self, tape: &mut Tape<E>, x: &Tensor<E>, mode: Mode) -> Result<Tensor<E>> {
        let h = self.conv1.forward(tape, x, mode)?;
        let h = relu_owned(tape, h);
        let h = self.conv2.forward(tape, &h, mode)?;
        let s = match &mut self.shortcut {
            Some(proj) => proj.forward(tape, x, mode)?,
            None => x.clone(),
        };
        let sum = residual_add_owned(tape, h, &s)?;
        Ok(relu_owned(tape, sum))
    }

    pub fn visit_params<'a>(&'a self, out: &mut Vec<(String, &'a Tensor<E>)>) {
        self.conv1.visit_params(out);
        self.conv2.visit_params(out);
        if let Some(s) = &self.shortcut {
            s.visit_params(out);
        }
    }

    pub fn visit_params_mut<'a>(&'a mut self, out: &mut Vec<(String, &'a mut Tensor<E>)>) {
        self.conv1.visit_params_mut(out);
        self.conv2.visit_params_mut(out);
        if let Some(s) = &mut self.shortcut {
            s.visit_params_mut(out);
        }
    }

    pub fn visit_buffers<'a>(&'a self, out: &mut Vec<(String, &'a [E])>) {
        self.conv1.visit_buffers(out);
        self.conv2.visit_buffers(out);
        if let Some(s) = &self.shortcut {
            s.visit_buffers(out);
        }
    }

    pub fn visit_buffers_mut<'a>(&'a mut self, out: &mut Vec<(String, &'a mut Vec<E>)>) {
        self.conv1.visit_buffers_mut(out);
        self.conv2.visit_buffers_mut(out);
        if let Some(s) = &mut self.shortcut {
            s.visit_buffers_mut(out);
        }
    }
}

/// Plain affine layer for the regression head.
pub(crate) struct DenseLayer<E: Element> {
    pub name: String,
    pub weight: Tensor<E>,
    pub bias: Tensor<E>,
}

impl<E: Element> DenseLayer<E> {
    pub fn init(
        rng: &mut ChaCha8Rng,
        name: impl Into<String>,
        in_features: usize,
        out_features: usize,
    ) -> Self {
        DenseLayer {
            name: name.into(),
            weight: init_weight(rng, vec![out_features, in_features], in_features),
            bias: zeros_param(vec![out_features]),
        }
    }

    pub fn forward(&self, tape: &mut Tape<E>, x: &Tensor<E>) -> Result<Tensor<E>> {
        dense(tape, x, &self.weight, Some(&self.bias))
    }

    pub fn visit_params<'a>(&'a self, out: &mut Vec<(String, &'a Tensor<E>)>) {
        out.push((format!("{}.weight", self.name), &self.weight));
        out.push((format!("{}.bias", self.name), &self.bias));
    }

    pub fn visit_params_mut<'a>(&'a mut self, out: &mut Vec<(String, &'a mut Tensor<E>)>) {
        out.push((format!("{}.weight", self.name), &mut self.weight));
        out.push((format!("{}.bias", self.name), &mut self.bias));
    }
}
