//! The segment-level audio ConvNet and its bag-level aggregation.
//!
//! Input is a `1 x T x 64` log-mel map. Four blocks of two 3x3 convolutions
//! (batch norm and ReLU after each) with pooling reduce time by 32, a 3x2
//! convolution without padding produces one 2048-d instance vector per
//! segment, three 1x1 convolutions map instances to class probabilities, and
//! global pooling turns segment predictions into a bag prediction.

use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::checkpoint::Archive;
use crate::error::{Error, Result};
use crate::nn::{LayerKind, Mode, NetworkSpec, ParamStore};
use crate::tensor::Tensor;

/// Frames consumed per segment step.
pub const SEGMENT_STRIDE: usize = 32;
/// Shortest input that yields one segment.
pub const MIN_FRAMES: usize = 96;
/// Frame count the reference architecture is laid out for.
pub const REFERENCE_FRAMES: usize = 1024;

/// Number of segments for a `T`-frame input: `floor(T / 32) - 2`.
pub fn segment_count(frames: usize) -> Option<usize> {
    (frames >= MIN_FRAMES).then(|| frames / SEGMENT_STRIDE - 2)
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BagPooling {
    #[default]
    Average,
    Max,
}

/// Layer widths. [`AudioArch::reference`] is the full-size network; smaller
/// widths keep the same topology and shape law.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AudioArch {
    pub classes: usize,
    pub n_mels: usize,
    pub block_filters: [usize; 4],
    pub instance_dim: usize,
    pub hidden: usize,
    pub pooling: BagPooling,
}

impl AudioArch {
    pub fn reference(classes: usize) -> Self {
        AudioArch {
            classes,
            n_mels: 64,
            block_filters: [64, 128, 256, 512],
            instance_dim: 2048,
            hidden: 1024,
            pooling: BagPooling::Average,
        }
    }

    pub fn spec(&self) -> Result<NetworkSpec> {
        if self.classes == 0 {
            return Err(Error::InvalidSpec("class count must be at least 1".into()));
        }
        if self.block_filters.contains(&0) || self.instance_dim == 0 || self.hidden == 0 {
            return Err(Error::InvalidSpec("zero-width audio layer".into()));
        }
        let mut net = NetworkSpec::default();
        let conv = |i, o, k: (usize, usize), p: (usize, usize)| LayerKind::Conv2d {
            in_channels: i,
            out_channels: o,
            kernel: k,
            stride: (1, 1),
            padding: p,
        };
        let mut ch = 1;
        for (b, &f) in self.block_filters.iter().enumerate() {
            let blk = format!("b{}", b + 1);
            for j in 1..=2 {
                net.push(format!("{blk}.conv{j}"), conv(ch, f, (3, 3), (1, 1)))
                    .push(format!("{blk}.bn{j}"), LayerKind::BatchNorm { features: f })
                    .push(format!("{blk}.relu{j}"), LayerKind::Relu);
                ch = f;
            }
            let k = if b == 0 { 4 } else { 2 };
            net.push(
                format!("{blk}.pool"),
                LayerKind::MaxPool2d {
                    kernel: (k, k),
                    stride: (k, k),
                },
            );
        }
        net.push("b5.conv", conv(ch, self.instance_dim, (3, 2), (0, 0)))
            .push(
                "b5.bn",
                LayerKind::BatchNorm {
                    features: self.instance_dim,
                },
            )
            .push("b5.relu", LayerKind::Relu)
            .push("b6.conv", conv(self.instance_dim, self.hidden, (1, 1), (0, 0)))
            .push("b6.bn", LayerKind::BatchNorm { features: self.hidden })
            .push("b6.relu", LayerKind::Relu)
            .push("b7.conv", conv(self.hidden, self.hidden, (1, 1), (0, 0)))
            .push("b7.bn", LayerKind::BatchNorm { features: self.hidden })
            .push("b7.relu", LayerKind::Relu)
            .push("b8.conv", conv(self.hidden, self.classes, (1, 1), (0, 0)))
            .push("b8.sigmoid", LayerKind::Sigmoid)
            .push(
                "g",
                match self.pooling {
                    BagPooling::Average => LayerKind::GlobalAvgPool,
                    BagPooling::Max => LayerKind::GlobalMaxPool,
                },
            );
        Ok(net)
    }
}

/// Full-size audio network for `classes` classes with average pooling.
pub fn build_audio_spec(classes: usize) -> Result<NetworkSpec> {
    AudioArch::reference(classes).spec()
}

/// Segment and bag predictions of one recording.
#[derive(Clone, Debug, PartialEq)]
pub struct AudioOutput {
    /// `C x S` per-segment class probabilities.
    pub segments: Tensor,
    /// `C` bag-level probabilities.
    pub bag: Vec<f64>,
}

/// Runs the audio network on a `T x F` feature map.
pub fn audio_forward(spec: &NetworkSpec, params: &ParamStore, features: &Tensor) -> Result<AudioOutput> {
    if features.rank() != 2 {
        return Err(Error::Shape(format!(
            "expected T x F features, got {:?}",
            features.shape()
        )));
    }
    let frames = features.rows();
    if frames < MIN_FRAMES {
        return Err(Error::InputTooShort {
            frames,
            min: MIN_FRAMES,
        });
    }
    let Some((pool, body)) = spec.layers.split_last() else {
        return Err(Error::InvalidSpec("empty audio network".into()));
    };
    if !matches!(pool.kind, LayerKind::GlobalAvgPool | LayerKind::GlobalMaxPool) {
        return Err(Error::InvalidSpec("audio network must end in global pooling".into()));
    }
    let x = features.clone().reshape(vec![1, 1, frames, features.cols()])?;
    // Eval mode never draws from the generator.
    let mut rng = <rand_chacha::ChaCha8Rng as rand::SeedableRng>::seed_from_u64(0);
    let mut cur = x;
    for layer in body {
        cur = layer.forward(params, &cur, Mode::Eval, &mut rng)?;
    }
    let &[_, c, s, w] = cur.shape() else {
        return Err(Error::Shape(format!("segment map {:?}", cur.shape())));
    };
    if w != 1 {
        return Err(Error::Shape(format!(
            "segment map {:?} has width {w}, expected 1",
            cur.shape()
        )));
    }
    let bag = pool.forward(params, &cur, Mode::Eval, &mut rng)?;
    Ok(AudioOutput {
        segments: cur.reshape(vec![c, s])?,
        bag: bag.into_data(),
    })
}

/// Architecture plus weights. On disk: a `meta` entry holding the
/// architecture as JSON and one `param/<layer>/<slot>` entry per tensor.
#[derive(Clone, Debug, PartialEq)]
pub struct AudioModel {
    pub arch: AudioArch,
    pub spec: NetworkSpec,
    pub params: ParamStore,
}

impl AudioModel {
    /// Randomly initialized weights; batch norm starts at identity statistics.
    pub fn init(arch: AudioArch, seed: u64) -> Result<Self> {
        let spec = arch.spec()?;
        let params = ParamStore::init(&spec, &mut ChaCha8Rng::seed_from_u64(seed))?;
        Ok(AudioModel { arch, spec, params })
    }

    pub fn from_parts(arch: AudioArch, params: ParamStore) -> Result<Self> {
        let spec = arch.spec()?;
        params.check(&spec)?;
        Ok(AudioModel { arch, spec, params })
    }

    pub fn classes(&self) -> usize {
        self.arch.classes
    }

    pub fn forward(&self, features: &Tensor) -> Result<AudioOutput> {
        audio_forward(&self.spec, &self.params, features)
    }

    pub fn to_archive(&self) -> Archive {
        let mut a = Archive::new();
        a.put_bytes("meta", serde_json::to_vec(&self.arch).expect("arch serializes"));
        a.put_params("param", &self.params);
        a
    }

    pub fn from_archive(a: &Archive) -> Result<Self> {
        let arch: AudioArch = serde_json::from_slice(a.bytes("meta")?)?;
        AudioModel::from_parts(arch, a.params("param")?)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        self.to_archive().save(path)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        AudioModel::from_archive(&Archive::load(path)?)
    }
}
