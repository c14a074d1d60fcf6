//! Minimal neural-network engine: layer descriptions, parameters, forward
//! kernels, a reverse-mode tape, the binary cross-entropy loss and Adam.
//!
//! Tensors flowing through a network always carry a leading batch axis.
//! Shapes in a [`NetworkSpec`] are per-sample: a dense layer sees `[F]`, a
//! convolution sees `[C, H, W]`.

mod adam;
pub(crate) mod kernels;
mod loss;
mod network;
mod params;
mod tape;
pub mod train;

pub use adam::{adam_step, AdamConfig, AdamState};
pub use kernels::BN_EPS;
pub use loss::{bce_loss, BCE_EPS};
pub use network::network_forward;
pub use params::{Gradients, LayerParams, ParamKey, ParamStore, Slot};
pub use tape::{backward, Tape, Var};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Train mode samples dropout masks and uses batch statistics in batch
/// normalization; eval mode is deterministic.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Mode {
    Train,
    Eval,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum LayerKind {
    Dense {
        in_features: usize,
        out_features: usize,
    },
    Conv2d {
        in_channels: usize,
        out_channels: usize,
        kernel: (usize, usize),
        stride: (usize, usize),
        padding: (usize, usize),
    },
    MaxPool2d {
        kernel: (usize, usize),
        stride: (usize, usize),
    },
    BatchNorm {
        features: usize,
    },
    Dropout {
        rate: f64,
    },
    Relu,
    Sigmoid,
    /// `[C, H, W] -> [C, 1]`, mean over the spatial axes.
    GlobalAvgPool,
    /// `[C, H, W] -> [C, 1]`, max over the spatial axes.
    GlobalMaxPool,
    Identity,
}

impl LayerKind {
    pub fn is_trainable(&self) -> bool {
        matches!(
            self,
            LayerKind::Dense { .. } | LayerKind::Conv2d { .. } | LayerKind::BatchNorm { .. }
        )
    }

    pub fn name(&self) -> &'static str {
        match self {
            LayerKind::Dense { .. } => "dense",
            LayerKind::Conv2d { .. } => "conv2d",
            LayerKind::MaxPool2d { .. } => "maxpool2d",
            LayerKind::BatchNorm { .. } => "batchnorm",
            LayerKind::Dropout { .. } => "dropout",
            LayerKind::Relu => "relu",
            LayerKind::Sigmoid => "sigmoid",
            LayerKind::GlobalAvgPool => "global_avg_pool",
            LayerKind::GlobalMaxPool => "global_max_pool",
            LayerKind::Identity => "identity",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LayerSpec {
    pub id: String,
    #[serde(flatten)]
    pub kind: LayerKind,
}

impl LayerSpec {
    pub fn new(id: impl Into<String>, kind: LayerKind) -> Self {
        LayerSpec { id: id.into(), kind }
    }

    fn shape_error(&self, expected: &str, got: &[usize]) -> Error {
        Error::LayerShape {
            layer: self.id.clone(),
            expected: expected.to_string(),
            got: got.to_vec(),
        }
    }

    /// Per-sample output shape for a per-sample input shape.
    pub fn output_shape(&self, input: &[usize]) -> Result<Vec<usize>> {
        match &self.kind {
            LayerKind::Dense {
                in_features,
                out_features,
            } => {
                if input != [*in_features] {
                    return Err(self.shape_error(&format!("[{in_features}]"), input));
                }
                Ok(vec![*out_features])
            }
            LayerKind::Conv2d {
                in_channels,
                out_channels,
                kernel,
                stride,
                padding,
            } => {
                let [c, h, w] = *input else {
                    return Err(self.shape_error(&format!("[{in_channels}, H, W]"), input));
                };
                if c != *in_channels {
                    return Err(self.shape_error(&format!("[{in_channels}, H, W]"), input));
                }
                let (ho, wo) = window_output(h, w, *kernel, *stride, *padding)
                    .ok_or_else(|| self.shape_error(&format!("spatial extent >= kernel {kernel:?}"), input))?;
                Ok(vec![*out_channels, ho, wo])
            }
            LayerKind::MaxPool2d { kernel, stride } => {
                let [c, h, w] = *input else {
                    return Err(self.shape_error("[C, H, W]", input));
                };
                let (ho, wo) = window_output(h, w, *kernel, *stride, (0, 0))
                    .ok_or_else(|| self.shape_error(&format!("spatial extent >= pool {kernel:?}"), input))?;
                Ok(vec![c, ho, wo])
            }
            LayerKind::BatchNorm { features } => {
                if input.first() != Some(features) || !(input.len() == 1 || input.len() == 3) {
                    return Err(self.shape_error(&format!("[{features}] or [{features}, H, W]"), input));
                }
                Ok(input.to_vec())
            }
            LayerKind::Dropout { .. } | LayerKind::Relu | LayerKind::Sigmoid | LayerKind::Identity => {
                Ok(input.to_vec())
            }
            LayerKind::GlobalAvgPool | LayerKind::GlobalMaxPool => {
                let [c, _, _] = *input else {
                    return Err(self.shape_error("[C, H, W]", input));
                };
                Ok(vec![c, 1])
            }
        }
    }
}

fn window_output(
    h: usize,
    w: usize,
    kernel: (usize, usize),
    stride: (usize, usize),
    padding: (usize, usize),
) -> Option<(usize, usize)> {
    let hp = h + 2 * padding.0;
    let wp = w + 2 * padding.1;
    if hp < kernel.0 || wp < kernel.1 || stride.0 == 0 || stride.1 == 0 {
        return None;
    }
    Some(((hp - kernel.0) / stride.0 + 1, (wp - kernel.1) / stride.1 + 1))
}

/// An ordered, sequential list of layers.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct NetworkSpec {
    pub layers: Vec<LayerSpec>,
}

impl NetworkSpec {
    pub fn new(layers: Vec<LayerSpec>) -> Self {
        NetworkSpec { layers }
    }

    pub fn push(&mut self, id: impl Into<String>, kind: LayerKind) -> &mut Self {
        self.layers.push(LayerSpec::new(id, kind));
        self
    }

    /// Checks layer-local invariants: unique ids, dropout rate in `[0, 1)`,
    /// non-zero extents.
    pub fn validate(&self) -> Result<()> {
        let mut seen = std::collections::BTreeSet::new();
        for layer in &self.layers {
            if !seen.insert(layer.id.as_str()) {
                return Err(Error::InvalidSpec(format!("duplicate layer id `{}`", layer.id)));
            }
            match &layer.kind {
                LayerKind::Dropout { rate } if !(0.0..1.0).contains(rate) => {
                    return Err(Error::InvalidSpec(format!(
                        "layer `{}`: dropout rate {rate} outside [0, 1)",
                        layer.id
                    )));
                }
                LayerKind::Dense {
                    in_features,
                    out_features,
                } if *in_features == 0 || *out_features == 0 => {
                    return Err(Error::InvalidSpec(format!("layer `{}`: zero width", layer.id)));
                }
                LayerKind::BatchNorm { features: 0 } => {
                    return Err(Error::InvalidSpec(format!("layer `{}`: zero width", layer.id)));
                }
                _ => {}
            }
        }
        Ok(())
    }

    /// Propagates a per-sample input shape through every layer, returning
    /// the output shape of each layer in order.
    pub fn infer_shapes(&self, input: &[usize]) -> Result<Vec<Vec<usize>>> {
        self.validate()?;
        let mut shapes = Vec::with_capacity(self.layers.len());
        let mut cur = input.to_vec();
        for layer in &self.layers {
            cur = layer.output_shape(&cur)?;
            shapes.push(cur.clone());
        }
        Ok(shapes)
    }

    pub fn output_shape(&self, input: &[usize]) -> Result<Vec<usize>> {
        Ok(self.infer_shapes(input)?.pop().unwrap_or_else(|| input.to_vec()))
    }

    pub fn layer(&self, id: &str) -> Option<&LayerSpec> {
        self.layers.iter().find(|l| l.id == id)
    }

    /// Number of trainable scalars (excludes batch-norm running statistics).
    pub fn parameter_count(&self) -> usize {
        self.layers
            .iter()
            .map(|l| match &l.kind {
                LayerKind::Dense {
                    in_features,
                    out_features,
                } => in_features * out_features + out_features,
                LayerKind::Conv2d {
                    in_channels,
                    out_channels,
                    kernel,
                    ..
                } => out_channels * in_channels * kernel.0 * kernel.1 + out_channels,
                LayerKind::BatchNorm { features } => 2 * features,
                _ => 0,
            })
            .sum()
    }

    /// Whether the next activation after layer `idx` (skipping
    /// normalization and dropout) is a ReLU. Decides He vs Glorot init.
    pub(crate) fn feeds_relu(&self, idx: usize) -> bool {
        for layer in &self.layers[idx + 1..] {
            match layer.kind {
                LayerKind::BatchNorm { .. } | LayerKind::Dropout { .. } | LayerKind::Identity => {}
                LayerKind::Relu => return true,
                _ => return false,
            }
        }
        false
    }
}
