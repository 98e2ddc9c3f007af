//! Temporal convolutional encoder: stacked residual blocks of dilated
//! causal convolutions.

use super::layers::{Mode, NormConv, ResidualBlock};
use crate::error::Result;
use crate::tensor::{Element, Tape, Tensor};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

/// Architecture constants of the causal encoder. Dilations double per
/// level, so 11 levels of kernel 3 cover 8189 samples — more than the
/// 6000-sample input window, which keeps arrivals anywhere in the record
/// visible to the head.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TcnSpec {
    pub levels: usize,
    pub kernel: usize,
    pub channels: usize,
}

impl Default for TcnSpec {
    fn default() -> Self {
        TcnSpec {
            levels: 11,
            kernel: 3,
            channels: 32,
        }
    }
}

impl TcnSpec {
    /// Dilation of each level: 1, 2, 4, ...
    pub fn dilations(&self) -> impl Iterator<Item = usize> + '_ {
        (0..self.levels).map(|i| 1usize << i)
    }
}

/// Samples of input influencing one output position of the causal stack:
/// `1 + sum over levels of 2*(K-1)*dilation` (two convs per level).
pub fn receptive_field(spec: &TcnSpec) -> usize {
    1 + spec
        .dilations()
        .map(|d| 2 * (spec.kernel - 1) * d)
        .sum::<usize>()
}

pub(crate) struct TcnEncoder<E: Element> {
    blocks: Vec<ResidualBlock<E>>,
}

impl<E: Element> TcnEncoder<E> {
    pub fn init(rng: &mut ChaCha8Rng, spec: &TcnSpec, in_channels: usize) -> Self {
        let mut blocks = Vec::with_capacity(spec.levels);
        let mut prev = in_channels;
        for (li, dilation) in spec.dilations().enumerate() {
            let name = format!("level{li}");
            let pad = dilation * (spec.kernel - 1); // left-only: causal
            let conv1 = NormConv::init(
                rng,
                format!("{name}.conv1"),
                prev,
                spec.channels,
                spec.kernel,
                1,
                dilation,
                pad,
                0,
            );
            let conv2 = NormConv::init(
                rng,
                format!("{name}.conv2"),
                spec.channels,
                spec.channels,
                spec.kernel,
                1,
                dilation,
                pad,
                0,
            );
            let shortcut = if prev != spec.channels {
                Some(NormConv::init(
                    rng,
                    format!("{name}.shortcut"),
                    prev,
                    spec.channels,
                    1,
                    1,
                    1,
                    0,
                    0,
                ))
            } else {
                None
            };
            blocks.push(ResidualBlock {
                conv1,
                conv2,
                shortcut,
            });
            prev = spec.channels;
        }
        TcnEncoder { blocks }
    }

    pub fn forward(&mut self, tape: &mut Tape<E>, x: &Tensor<E>, mode: Mode) -> Result<Tensor<E>> {
        let mut h = x.clone();
        for block in &mut self.blocks {
            h = block.forward(tape, &h, mode)?;
        }
        Ok(h)
    }

    pub fn visit_params<'a>(&'a self, out: &mut Vec<(String, &'a Tensor<E>)>) {
        for block in &self.blocks {
            block.visit_params(out);
        }
    }

    pub fn visit_params_mut<'a>(&'a mut self, out: &mut Vec<(String, &'a mut Tensor<E>)>) {
        for block in &mut self.blocks {
            block.visit_params_mut(out);
        }
    }

    pub fn visit_buffers<'a>(&'a self, out: &mut Vec<(String, &'a [E])>) {
        for block in &self.blocks {
            block.visit_buffers(out);
        }
    }

    pub fn visit_buffers_mut<'a>(&'a mut self, out: &mut Vec<(String, &'a mut Vec<E>)>) {
        for block in &mut self.blocks {
            block.visit_buffers_mut(out);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn receptive_field_closed_forms() {
        let spec = TcnSpec {
            levels: 3,
            kernel: 3,
            channels: 8,
        };
        // 1 + 4 * (1 + 2 + 4) = 29
        assert_eq!(receptive_field(&spec), 29);

        let spec = TcnSpec::default();
        // 1 + 4 * 2047 = 8189, covering the 6000-sample window.
        assert_eq!(receptive_field(&spec), 8189);
        assert!(receptive_field(&spec) >= 6000);

        let spec = TcnSpec {
            levels: 5,
            kernel: 1,
            channels: 8,
        };
        assert_eq!(receptive_field(&spec), 1);
    }
}
