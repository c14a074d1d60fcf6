use std::collections::BTreeMap;
use std::fmt;

use rand::{Rng, RngCore};

use super::{LayerKind, NetworkSpec};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Slot {
    Weight,
    Bias,
    Gamma,
    Beta,
    RunningMean,
    RunningVar,
}

impl Slot {
    pub const ALL: [Slot; 6] = [
        Slot::Weight,
        Slot::Bias,
        Slot::Gamma,
        Slot::Beta,
        Slot::RunningMean,
        Slot::RunningVar,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Slot::Weight => "weight",
            Slot::Bias => "bias",
            Slot::Gamma => "gamma",
            Slot::Beta => "beta",
            Slot::RunningMean => "running_mean",
            Slot::RunningVar => "running_var",
        }
    }

    pub fn parse(s: &str) -> Option<Slot> {
        Slot::ALL.into_iter().find(|slot| slot.name() == s)
    }

    /// Running statistics are updated from batches, not by the optimizer.
    pub fn is_trainable(self) -> bool {
        !matches!(self, Slot::RunningMean | Slot::RunningVar)
    }
}

#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct ParamKey {
    pub layer: String,
    pub slot: Slot,
}

impl ParamKey {
    pub fn new(layer: impl Into<String>, slot: Slot) -> Self {
        ParamKey {
            layer: layer.into(),
            slot,
        }
    }

    /// Parses the `layer/slot` form produced by `Display`.
    pub fn parse(s: &str) -> Option<ParamKey> {
        let (layer, slot) = s.rsplit_once('/')?;
        Some(ParamKey::new(layer, Slot::parse(slot)?))
    }
}

impl fmt::Display for ParamKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}/{}", self.layer, self.slot.name())
    }
}

pub type LayerParams = BTreeMap<Slot, Tensor>;

/// Learnable tensors keyed by layer id. Each trainable layer owns exactly
/// one entry.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ParamStore {
    layers: BTreeMap<String, LayerParams>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    /// Seeded initialization for every trainable layer of `spec`: He-uniform
    /// for weights feeding a ReLU, Glorot-uniform otherwise; zero biases;
    /// unit batch-norm scale and running variance.
    pub fn init(spec: &NetworkSpec, rng: &mut dyn RngCore) -> Result<Self> {
        let mut store = ParamStore::new();
        store.init_into(spec, rng)?;
        Ok(store)
    }

    /// Like [`ParamStore::init`], adding entries to an existing store.
    pub fn init_into(&mut self, spec: &NetworkSpec, rng: &mut dyn RngCore) -> Result<()> {
        spec.validate()?;
        for (idx, layer) in spec.layers.iter().enumerate() {
            let he = spec.feeds_relu(idx);
            let mut entry = LayerParams::new();
            match &layer.kind {
                LayerKind::Dense {
                    in_features,
                    out_features,
                } => {
                    let w = uniform_weight(&[*out_features, *in_features], *in_features, *out_features, he, rng);
                    entry.insert(Slot::Weight, w);
                    entry.insert(Slot::Bias, Tensor::zeros(&[*out_features]));
                }
                LayerKind::Conv2d {
                    in_channels,
                    out_channels,
                    kernel,
                    ..
                } => {
                    let rf = kernel.0 * kernel.1;
                    let w = uniform_weight(
                        &[*out_channels, *in_channels, kernel.0, kernel.1],
                        in_channels * rf,
                        out_channels * rf,
                        he,
                        rng,
                    );
                    entry.insert(Slot::Weight, w);
                    entry.insert(Slot::Bias, Tensor::zeros(&[*out_channels]));
                }
                LayerKind::BatchNorm { features } => {
                    entry.insert(Slot::Gamma, Tensor::full(&[*features], 1.0));
                    entry.insert(Slot::Beta, Tensor::zeros(&[*features]));
                    entry.insert(Slot::RunningMean, Tensor::zeros(&[*features]));
                    entry.insert(Slot::RunningVar, Tensor::full(&[*features], 1.0));
                }
                _ => continue,
            }
            if self.layers.insert(layer.id.clone(), entry).is_some() {
                return Err(Error::InvalidSpec(format!(
                    "layer `{}` already has parameters",
                    layer.id
                )));
            }
        }
        Ok(())
    }

    /// Checks that every trainable layer has an entry of the right shapes.
    pub fn check(&self, spec: &NetworkSpec) -> Result<()> {
        for layer in &spec.layers {
            let expected: Vec<(Slot, Vec<usize>)> = match &layer.kind {
                LayerKind::Dense {
                    in_features,
                    out_features,
                } => vec![
                    (Slot::Weight, vec![*out_features, *in_features]),
                    (Slot::Bias, vec![*out_features]),
                ],
                LayerKind::Conv2d {
                    in_channels,
                    out_channels,
                    kernel,
                    ..
                } => vec![
                    (Slot::Weight, vec![*out_channels, *in_channels, kernel.0, kernel.1]),
                    (Slot::Bias, vec![*out_channels]),
                ],
                LayerKind::BatchNorm { features } => Slot::ALL[2..].iter().map(|&s| (s, vec![*features])).collect(),
                _ => continue,
            };
            for (slot, shape) in expected {
                let key = ParamKey::new(&layer.id, slot);
                let t = self.get(&key)?;
                if t.shape() != shape.as_slice() {
                    return Err(Error::ParamShape {
                        key: key.to_string(),
                        expected: shape,
                        got: t.shape().to_vec(),
                    });
                }
            }
        }
        Ok(())
    }

    pub fn get(&self, key: &ParamKey) -> Result<&Tensor> {
        self.layers
            .get(&key.layer)
            .and_then(|e| e.get(&key.slot))
            .ok_or_else(|| Error::MissingParam(key.to_string()))
    }

    pub fn get_mut(&mut self, key: &ParamKey) -> Result<&mut Tensor> {
        self.layers
            .get_mut(&key.layer)
            .and_then(|e| e.get_mut(&key.slot))
            .ok_or_else(|| Error::MissingParam(key.to_string()))
    }

    pub fn insert(&mut self, key: ParamKey, value: Tensor) {
        self.layers.entry(key.layer).or_default().insert(key.slot, value);
    }

    pub fn layer(&self, id: &str) -> Option<&LayerParams> {
        self.layers.get(id)
    }

    pub fn contains_layer(&self, id: &str) -> bool {
        self.layers.contains_key(id)
    }

    /// All tensors in key order.
    pub fn iter(&self) -> impl Iterator<Item = (ParamKey, &Tensor)> {
        self.layers.iter().flat_map(|(layer, entry)| {
            entry
                .iter()
                .map(move |(slot, t)| (ParamKey::new(layer.clone(), *slot), t))
        })
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = (ParamKey, &mut Tensor)> {
        self.layers.iter_mut().flat_map(|(layer, entry)| {
            entry
                .iter_mut()
                .map(move |(slot, t)| (ParamKey::new(layer.clone(), *slot), t))
        })
    }

    pub fn len(&self) -> usize {
        self.layers.values().map(BTreeMap::len).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.layers.is_empty()
    }

    /// Total number of trainable scalars.
    pub fn trainable_count(&self) -> usize {
        self.iter()
            .filter(|(k, _)| k.slot.is_trainable())
            .map(|(_, t)| t.len())
            .sum()
    }

    /// Blends batch statistics into the running estimates:
    /// `running = momentum * running + (1 - momentum) * batch`.
    pub fn update_running_stats(&mut self, layer: &str, mean: &[f64], var: &[f64], momentum: f64) -> Result<()> {
        for (slot, batch) in [(Slot::RunningMean, mean), (Slot::RunningVar, var)] {
            let t = self.get_mut(&ParamKey::new(layer, slot))?;
            for (r, b) in t.data_mut().iter_mut().zip(batch) {
                *r = momentum * *r + (1.0 - momentum) * b;
            }
        }
        Ok(())
    }
}

fn uniform_weight(shape: &[usize], fan_in: usize, fan_out: usize, he: bool, rng: &mut dyn RngCore) -> Tensor {
    let limit = if he {
        (6.0 / fan_in as f64).sqrt()
    } else {
        (6.0 / (fan_in + fan_out) as f64).sqrt()
    };
    let mut t = Tensor::zeros(shape);
    for v in t.data_mut() {
        *v = rng.random_range(-limit..limit);
    }
    t
}

/// Gradients of a scalar loss, keyed like the [`ParamStore`] they belong to.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Gradients {
    map: BTreeMap<ParamKey, Tensor>,
}

impl Gradients {
    pub fn get(&self, key: &ParamKey) -> Option<&Tensor> {
        self.map.get(key)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&ParamKey, &Tensor)> {
        self.map.iter()
    }

    pub fn len(&self) -> usize {
        self.map.len()
    }

    pub fn is_empty(&self) -> bool {
        self.map.is_empty()
    }

    /// Adds `grad` into the entry for `key`.
    pub fn accumulate(&mut self, key: ParamKey, grad: Tensor) {
        match self.map.get_mut(&key) {
            Some(acc) => {
                for (a, g) in acc.data_mut().iter_mut().zip(grad.data()) {
                    *a += g;
                }
            }
            None => {
                self.map.insert(key, grad);
            }
        }
    }
}
