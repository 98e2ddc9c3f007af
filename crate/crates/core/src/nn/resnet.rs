//! 1-D residual encoder.

use super::layers::{Mode, NormConv, ResidualBlock};
use crate::error::Result;
use crate::tensor::{relu_owned, Element, Tape, Tensor};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

/// Architecture constants of the residual encoder: a strided stem
/// followed by four stages of residual blocks, each stage downsampling
/// by two at its entry.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ResNetSpec {
    pub stem_channels: usize,
    pub stem_kernel: usize,
    pub stem_stride: usize,
    pub stage_channels: Vec<usize>,
    pub blocks_per_stage: usize,
    pub kernel: usize,
}

impl Default for ResNetSpec {
    fn default() -> Self {
        ResNetSpec {
            stem_channels: 16,
            stem_kernel: 7,
            stem_stride: 2,
            stage_channels: vec![16, 32, 64, 128],
            blocks_per_stage: 2,
            kernel: 3,
        }
    }
}

impl ResNetSpec {
    pub fn feature_channels(&self) -> usize {
        *self.stage_channels.last().expect("nonempty stages")
    }
}

pub(crate) struct ResNetEncoder<E: Element> {
    stem: NormConv<E>,
    stages: Vec<Vec<ResidualBlock<E>>>,
}

impl<E: Element> ResNetEncoder<E> {
    pub fn init(rng: &mut ChaCha8Rng, spec: &ResNetSpec, in_channels: usize) -> Self {
        let pad = spec.stem_kernel / 2;
        let stem = NormConv::init(
            rng,
            "stem",
            in_channels,
            spec.stem_channels,
            spec.stem_kernel,
            spec.stem_stride,
            1,
            pad,
            pad,
        );

        let mut stages = Vec::with_capacity(spec.stage_channels.len());
        let mut prev = spec.stem_channels;
        let bpad = spec.kernel / 2;
        for (si, &ch) in spec.stage_channels.iter().enumerate() {
            let mut blocks = Vec::with_capacity(spec.blocks_per_stage);
            for bi in 0..spec.blocks_per_stage {
                let name = format!("stage{si}.block{bi}");
                let stride = if bi == 0 { 2 } else { 1 };
                let cin = if bi == 0 { prev } else { ch };
                let conv1 = NormConv::init(
                    rng,
                    format!("{name}.conv1"),
                    cin,
                    ch,
                    spec.kernel,
                    stride,
                    1,
                    bpad,
                    bpad,
                );
                let conv2 =
                    NormConv::init(rng, format!("{name}.conv2"), ch, ch, spec.kernel, 1, 1, bpad, bpad);
                // Identity shortcut when shapes match; the stage entry
                // changes length (and possibly width), so it projects.
                let shortcut = if stride != 1 || cin != ch {
                    Some(NormConv::init(
                        rng,
                        format!("{name}.shortcut"),
                        cin,
                        ch,
                        1,
                        stride,
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
            }
            stages.push(blocks);
            prev = ch;
        }
        ResNetEncoder { stem, stages }
    }

    pub fn forward(&mut self, tape: &mut Tape<E>, x: &Tensor<E>, mode: Mode) -> Result<Tensor<E>> {
        let mut h = self.stem.forward(tape, x, mode)?;
        h = relu_owned(tape, h);
        for stage in &mut self.stages {
            for block in stage {
                h = block.forward(tape, &h, mode)?;
            }
        }
        Ok(h)
    }

    pub fn visit_params<'a>(&'a self, out: &mut Vec<(String, &'a Tensor<E>)>) {
        self.stem.visit_params(out);
        for stage in &self.stages {
            for block in stage {
                block.visit_params(out);
            }
        }
    }

    pub fn visit_params_mut<'a>(&'a mut self, out: &mut Vec<(String, &'a mut Tensor<E>)>) {
        self.stem.visit_params_mut(out);
        for stage in &mut self.stages {
            for block in stage {
                block.visit_params_mut(out);
            }
        }
    }

    pub fn visit_buffers<'a>(&'a self, out: &mut Vec<(String, &'a [E])>) {
        self.stem.visit_buffers(out);
        for stage in &self.stages {
            for block in stage {
                block.visit_buffers(out);
            }
        }
    }

    pub fn visit_buffers_mut<'a>(&'a mut self, out: &mut Vec<(String, &'a mut Vec<E>)>) {
        self.stem.visit_buffers_mut(out);
        for stage in &mut self.stages {
            for block in stage {
                block.visit_buffers_mut(out);
            }
        }
    }
}
