//! Video bags and the fully connected visual classifier.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::checkpoint::Archive;
use crate::error::{Error, Result};
use crate::nn::train::{fit, SequentialModel, Split, TrainConfig, TrainReport, Trainable};
use crate::nn::{LayerKind, NetworkSpec};
use crate::tensor::Tensor;

pub const FRAMES_PER_BAG: usize = 64;
pub const FRAME_FEATURES: usize = 2048;

/// Column mean of a `64 x D` frame-feature matrix.
pub fn bag_vector(frames: &Tensor) -> Result<Vec<f64>> {
    if frames.rank() != 2 || frames.rows() != FRAMES_PER_BAG {
        return Err(Error::Shape(format!(
            "video bag must have {FRAMES_PER_BAG} frame rows, got {:?}",
            frames.shape()
        )));
    }
    if !frames.is_finite() {
        return Err(Error::NonFinite("frame features".into()));
    }
    let d = frames.cols();
    let mut sum = vec![0.0; d];
    for i in 0..FRAMES_PER_BAG {
        for (s, x) in sum.iter_mut().zip(frames.row(i)) {
            *s += x;
        }
    }
    Ok(sum.into_iter().map(|s| s / FRAMES_PER_BAG as f64).collect())
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct VisualArch {
    pub input_dim: usize,
    pub hidden: Vec<usize>,
    pub classes: usize,
    /// Dropout follows this many leading hidden layers.
    pub dropout_layers: usize,
    pub dropout: f64,
}

impl VisualArch {
    /// Hidden widths 2048, 2048, 1024, 1024 over 2048-d bag vectors, dropout
    /// 0.3 after the first two hidden layers.
    pub fn reference(classes: usize) -> Self {
        VisualArch {
            input_dim: FRAME_FEATURES,
            hidden: vec![2048, 2048, 1024, 1024],
            classes,
            dropout_layers: 2,
            dropout: 0.3,
        }
    }

    pub fn spec(&self) -> Result<NetworkSpec> {
        if self.classes == 0 {
            return Err(Error::InvalidSpec("class count must be at least 1".into()));
        }
        let mut net = NetworkSpec::default();
        let mut width = self.input_dim;
        for (i, &h) in self.hidden.iter().enumerate() {
            let n = i + 1;
            net.push(
                format!("fc{n}"),
                LayerKind::Dense {
                    in_features: width,
                    out_features: h,
                },
            )
            .push(format!("relu{n}"), LayerKind::Relu);
            if i < self.dropout_layers && self.dropout > 0.0 {
                net.push(format!("drop{n}"), LayerKind::Dropout { rate: self.dropout });
            }
            width = h;
        }
        net.push(
            "out",
            LayerKind::Dense {
                in_features: width,
                out_features: self.classes,
            },
        )
        .push("sigmoid", LayerKind::Sigmoid);
        net.validate()?;
        Ok(net)
    }
}

pub fn build_visual_spec(classes: usize) -> Result<NetworkSpec> {
    VisualArch::reference(classes).spec()
}

/// 20 epochs with minibatches of 144.
pub fn visual_train_config(seed: u64) -> TrainConfig {
    TrainConfig {
        epochs: 20,
        batch_size: 144,
        seed,
        ..TrainConfig::default()
    }
}

/// Trains a freshly initialized visual network, returning the model from the
/// epoch with the best validation mAP.
pub fn train_visual(
    spec: &NetworkSpec,
    train: Split<'_>,
    val: Split<'_>,
    cfg: &TrainConfig,
) -> Result<(SequentialModel, TrainReport)> {
    let mut model = SequentialModel::new(spec.clone(), cfg.seed)?;
    let report = fit(&mut model, train, val, cfg)?;
    Ok((model, report))
}

/// A visual classifier with its architecture, persisted like
/// [`crate::audio::AudioModel`].
#[derive(Clone, Debug, PartialEq)]
pub struct VisualModel {
    pub arch: VisualArch,
    pub model: SequentialModel,
}

impl VisualModel {
    pub fn init(arch: VisualArch, seed: u64) -> Result<Self> {
        let model = SequentialModel::new(arch.spec()?, seed)?;
        Ok(VisualModel { arch, model })
    }

    /// Trains from scratch on bag vectors, keeping the best validation epoch.
    pub fn train(arch: VisualArch, train: Split<'_>, val: Split<'_>, cfg: &TrainConfig) -> Result<(Self, TrainReport)> {
        let (model, report) = train_visual(&arch.spec()?, train, val, cfg)?;
        Ok((VisualModel { arch, model }, report))
    }

    pub fn classes(&self) -> usize {
        self.arch.classes
    }

    /// Eval-mode probabilities for `N x D` bag vectors.
    pub fn predict(&self, bags: &Tensor) -> Result<Tensor> {
        self.model.predict(bags)
    }

    pub fn to_archive(&self) -> Archive {
        let mut a = Archive::new();
        a.put_bytes("meta", serde_json::to_vec(&self.arch).expect("arch serializes"));
        a.put_params("param", &self.model.params);
        a
    }

    pub fn from_archive(a: &Archive) -> Result<Self> {
        let arch: VisualArch = serde_json::from_slice(a.bytes("meta")?)?;
        let model = SequentialModel::from_parts(arch.spec()?, a.params("param")?)?;
        Ok(VisualModel { arch, model })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        self.to_archive().save(path)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        VisualModel::from_archive(&Archive::load(path)?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::ParamStore;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn bag_vector_examples() {
        let v: Vec<f64> = (0..8).map(|i| i as f64 - 3.5).collect();
        let same = Tensor::new(vec![64, 8], v.repeat(64)).unwrap();
        assert_eq!(bag_vector(&same).unwrap(), v);
        let neg: Vec<f64> = v.iter().map(|x| -x).collect();
        let mut alt = Vec::new();
        for i in 0..64 {
            alt.extend_from_slice(if i % 2 == 0 { &v } else { &neg });
        }
        let alt = Tensor::new(vec![64, 8], alt).unwrap();
        assert!(bag_vector(&alt).unwrap().iter().all(|&x| x == 0.0));
        assert!(bag_vector(&Tensor::zeros(&[63, 8])).is_err());
    }

    #[test]
    fn bag_vector_matches_column_sums() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let t = Tensor::new(
            vec![64, 2048],
            (0..64 * 2048).map(|_| rng.random_range(-1.0..1.0)).collect(),
        )
        .unwrap();
        let got = bag_vector(&t).unwrap();
        for j in (0..2048).step_by(97) {
            let oracle = (0..64).map(|i| t.get2(i, j)).sum::<f64>() / 64.0;
            assert!((got[j] - oracle).abs() < 1e-12);
        }
    }

    #[test]
    fn reference_parameter_count() {
        let c = 527;
        let spec = build_visual_spec(c).unwrap();
        let weights = 2048 * 2048 + 2048 * 2048 + 2048 * 1024 + 1024 * 1024 + 1024 * c;
        let biases = 2048 + 2048 + 1024 + 1024 + c;
        assert_eq!(spec.parameter_count(), weights + biases);
        let drops: Vec<_> = spec
            .layers
            .iter()
            .filter(|l| matches!(l.kind, LayerKind::Dropout { .. }))
            .map(|l| l.id.as_str())
            .collect();
        assert_eq!(drops, ["drop1", "drop2"]);
        assert_eq!(spec.output_shape(&[2048]).unwrap(), vec![c]);
    }

    fn small(classes: usize) -> NetworkSpec {
        VisualArch {
            input_dim: 6,
            hidden: vec![8, 8, 4, 4],
            classes,
            dropout_layers: 2,
            dropout: 0.3,
        }
        .spec()
        .unwrap()
    }

    #[test]
    fn zero_weights_give_half() {
        let spec = small(3);
        let mut params = ParamStore::init(&spec, &mut ChaCha8Rng::seed_from_u64(0)).unwrap();
        for (_, t) in params.iter_mut() {
            t.data_mut().fill(0.0);
        }
        let out = spec.eval(&params, &Tensor::full(&[2, 6], 3.0)).unwrap();
        assert!(out.data().iter().all(|&p| p == 0.5));
    }

    #[test]
    fn zero_input_gives_bias_only_output() {
        let spec = small(2);
        let model = SequentialModel::new(spec.clone(), 4).unwrap();
        let out = model.predict(&Tensor::zeros(&[1, 6])).unwrap();
        // Bias-only path computed by hand.
        let mut h = Tensor::zeros(&[1, 6]);
        for l in &spec.layers {
            if let LayerKind::Dense { out_features, .. } = l.kind {
                let b = model
                    .params
                    .get(&crate::nn::ParamKey::new(&l.id, crate::nn::Slot::Bias))
                    .unwrap();
                let w = model
                    .params
                    .get(&crate::nn::ParamKey::new(&l.id, crate::nn::Slot::Weight))
                    .unwrap();
                let mut next = vec![0.0; out_features];
                for (o, v) in next.iter_mut().enumerate() {
                    *v = b.data()[o] + (0..h.cols()).map(|i| w.get2(o, i) * h.data()[i]).sum::<f64>();
                }
                h = Tensor::new(vec![1, out_features], next).unwrap();
            } else if matches!(l.kind, LayerKind::Relu) {
                h = h.map(|v| v.max(0.0));
            }
        }
        for (a, b) in out.data().iter().zip(h.data()) {
            assert!((a - 1.0 / (1.0 + (-b).exp())).abs() < 1e-12);
        }
    }
}
