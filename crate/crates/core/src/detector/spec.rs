use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::tensor::conv_output_size;

/// Number of convolution stages in the detector topology.
pub const CONV_STAGES: usize = 5;
/// Number of fully connected layers; the last one is the binary head.
pub const FC_LAYERS: usize = 3;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum SpecError {
    #[error("expected {expected} {what}, got {got}")]
    LayerCount {
        what: &'static str,
        expected: usize,
        got: usize,
    },
    #[error("input must be 3-channel RGB with positive size, got {height}x{width}x{channels}")]
    Input {
        height: usize,
        width: usize,
        channels: usize,
    },
    #[error("conv stage {stage}: {detail}")]
    Stage { stage: usize, detail: String },
    #[error("fully connected layer {layer}: {detail}")]
    Fc { layer: usize, detail: String },
    #[error("parameter count overflows")]
    Overflow,
}

/// One convolution stage: conv, ReLU, then max pooling.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConvStage {
    pub out_channels: usize,
    pub kernel: usize,
    pub stride: usize,
    pub pad: usize,
    pub pool_window: usize,
    pub pool_stride: usize,
}

impl ConvStage {
    pub const fn new(
        out_channels: usize,
        kernel: usize,
        stride: usize,
        pad: usize,
        pool_window: usize,
        pool_stride: usize,
    ) -> Self {
        ConvStage {
            out_channels,
            kernel,
            stride,
            pad,
            pool_window,
            pool_stride,
        }
    }
}

/// Network topology plus the seed used to initialise it.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelSpec {
    pub input_height: usize,
    pub input_width: usize,
    pub input_channels: usize,
    pub conv_stages: Vec<ConvStage>,
    pub fc_sizes: Vec<usize>,
    pub seed: u64,
}

/// Shapes derived from a valid spec.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct SpecShapes {
    /// `[C, H, W]` after each conv stage (after pooling).
    pub stage_outputs: Vec<[usize; 3]>,
    /// Width of the flattened conv output that feeds the first FC layer.
    pub feature_len: usize,
    /// Weight shape and bias length of every layer in order.
    pub layers: Vec<(Vec<usize>, usize)>,
}

impl ModelSpec {
    /// Desk-scale configuration: 64×64 input, same-padded convolutions and
    /// 2×2 pooling after every stage.
    pub fn desk() -> Self {
        let stage = |c, k| ConvStage::new(c, k, 1, k / 2, 2, 2);
        ModelSpec {
            input_height: 64,
            input_width: 64,
            input_channels: 3,
            conv_stages: vec![
                stage(8, 5),
                stage(16, 3),
                stage(32, 3),
                stage(32, 3),
                stage(64, 3),
            ],
            fc_sizes: vec![128, 64, 2],
            seed: 0,
        }
    }

    /// Full-scale VGG-F style configuration at 224×224: kernels 11 and 5 for
    /// the first two stages, 3 elsewhere, 4096-wide FC layers and a binary
    /// head. Stages three and four use a 1×1 pass-through pool.
    pub fn vggf_full() -> Self {
        ModelSpec {
            input_height: 224,
            input_width: 224,
            input_channels: 3,
            conv_stages: vec![
                ConvStage::new(64, 11, 4, 0, 3, 2),
                ConvStage::new(256, 5, 1, 2, 3, 2),
                ConvStage::new(256, 3, 1, 1, 1, 1),
                ConvStage::new(256, 3, 1, 1, 1, 1),
                ConvStage::new(256, 3, 1, 1, 3, 2),
            ],
            fc_sizes: vec![4096, 4096, 2],
            seed: 0,
        }
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    pub fn with_input_size(mut self, height: usize, width: usize) -> Self {
        self.input_height = height;
        self.input_width = width;
        self
    }

    pub fn validate(&self) -> Result<SpecShapes, SpecError> {
        if self.input_channels != 3 || self.input_height == 0 || self.input_width == 0 {
            return Err(SpecError::Input {
                height: self.input_height,
                width: self.input_width,
                channels: self.input_channels,
            });
        }
        if self.conv_stages.len() != CONV_STAGES {
            return Err(SpecError::LayerCount {
                what: "conv stages",
                expected: CONV_STAGES,
                got: self.conv_stages.len(),
            });
        }
        if self.fc_sizes.len() != FC_LAYERS {
            return Err(SpecError::LayerCount {
                what: "fully connected layers",
                expected: FC_LAYERS,
                got: self.fc_sizes.len(),
            });
        }

        let (mut c, mut h, mut w) = (self.input_channels, self.input_height, self.input_width);
        let mut stage_outputs = Vec::with_capacity(CONV_STAGES);
        let mut layers = Vec::with_capacity(CONV_STAGES + FC_LAYERS);
        for (i, st) in self.conv_stages.iter().enumerate() {
            let stage_err = |detail: String| SpecError::Stage { stage: i, detail };
            if st.out_channels == 0 || st.kernel == 0 || st.stride == 0 {
                return Err(stage_err(
                    "out_channels, kernel and stride must be positive".into(),
                ));
            }
            if st.pool_window == 0 || st.pool_stride == 0 {
                return Err(stage_err("pool window and stride must be positive".into()));
            }
            let ch = conv_output_size(h, st.kernel, st.stride, st.pad);
            let cw = conv_output_size(w, st.kernel, st.stride, st.pad);
            let (Some(ch), Some(cw)) = (ch, cw) else {
                return Err(stage_err(format!(
                    "kernel {} does not fit {h}x{w} input with pad {}",
                    st.kernel, st.pad
                )));
            };
            if st.pool_window > ch || st.pool_window > cw {
                return Err(stage_err(format!(
                    "pool window {} larger than {ch}x{cw} conv output",
                    st.pool_window
                )));
            }
            layers.push((
                vec![st.out_channels, c, st.kernel, st.kernel],
                st.out_channels,
            ));
            c = st.out_channels;
            h = (ch - st.pool_window) / st.pool_stride + 1;
            w = (cw - st.pool_window) / st.pool_stride + 1;
            stage_outputs.push([c, h, w]);
        }

        let feature_len = c
            .checked_mul(h)
            .and_then(|v| v.checked_mul(w))
            .ok_or(SpecError::Overflow)?;
        let mut fan_in = feature_len;
        for (i, &size) in self.fc_sizes.iter().enumerate() {
            if size == 0 {
                return Err(SpecError::Fc {
                    layer: i,
                    detail: "size must be positive".into(),
                });
            }
            layers.push((vec![fan_in, size], size));
            fan_in = size;
        }
        if self.fc_sizes[FC_LAYERS - 1] != 2 {
            return Err(SpecError::Fc {
                layer: FC_LAYERS - 1,
                detail: format!(
                    "binary head must have 2 outputs, got {}",
                    self.fc_sizes[FC_LAYERS - 1]
                ),
            });
        }
        // guard the count against overflow before anything allocates
        layers.iter().try_fold(0usize, |acc, (shape, bias)| {
            shape
                .iter()
                .try_fold(1usize, |p, &d| p.checked_mul(d))
                .and_then(|n| n.checked_add(*bias))
                .and_then(|n| acc.checked_add(n))
                .ok_or(SpecError::Overflow)
        })?;
        Ok(SpecShapes {
            stage_outputs,
            feature_len,
            layers,
        })
    }

    /// Total number of learned scalars (weights and biases).
    pub fn param_count(&self) -> Result<usize, SpecError> {
        let shapes = self.validate()?;
        Ok(shapes
            .layers
            .iter()
            .map(|(w, b)| w.iter().product::<usize>() + b)
            .sum())
    }

    /// Byte length of the spec block in a model file.
    pub fn encoded_len(&self) -> usize {
        4 * 4 + 6 * 4 * self.conv_stages.len() + 4 + 4 * self.fc_sizes.len() + 3 * 4
    }

    /// Exact size of a saved model file for this spec.
    pub fn file_size(&self) -> Result<usize, SpecError> {
        Ok(super::io::HEADER_LEN + self.encoded_len() + 4 * self.param_count()?)
    }
}
