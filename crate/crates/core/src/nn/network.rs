use rand::{Rng, RngCore};

use super::kernels::{self, sigmoid};
use super::params::{ParamKey, ParamStore, Slot};
use super::tape::{Tape, Var};
use super::{LayerKind, LayerSpec, Mode, NetworkSpec};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

fn sample_shape(x: &Tensor) -> Result<&[usize]> {
    match x.shape().split_first() {
        Some((_, rest)) => Ok(rest),
        None => Err(Error::Shape("network input needs a leading batch axis".into())),
    }
}

fn with_batch(batch: usize, sample: &[usize]) -> Vec<usize> {
    std::iter::once(batch).chain(sample.iter().copied()).collect()
}

fn slot<'a>(params: &'a ParamStore, layer: &LayerSpec, slot: Slot) -> Result<&'a Tensor> {
    params.get(&ParamKey::new(&layer.id, slot))
}

/// Inverted-dropout mask: kept entries are scaled by `1 / (1 - rate)`.
pub(crate) fn dropout_mask(len: usize, rate: f64, rng: &mut dyn RngCore) -> Vec<f64> {
    let keep = 1.0 / (1.0 - rate);
    (0..len)
        .map(|_| if rng.random::<f64>() < rate { 0.0 } else { keep })
        .collect()
}

impl LayerSpec {
    /// Applies this layer to a batch without recording a tape.
    ///
    /// In train mode dropout draws a mask from `rng` and batch normalization
    /// uses batch statistics; eval mode never touches `rng`.
    pub fn forward(&self, params: &ParamStore, input: &Tensor, mode: Mode, rng: &mut dyn RngCore) -> Result<Tensor> {
        let out_sample = self.output_shape(sample_shape(input)?)?;
        let y = match &self.kind {
            LayerKind::Dense { .. } => kernels::dense(
                input,
                slot(params, self, Slot::Weight)?,
                slot(params, self, Slot::Bias)?,
            )?,
            LayerKind::Conv2d { stride, padding, .. } => kernels::conv2d(
                input,
                slot(params, self, Slot::Weight)?,
                slot(params, self, Slot::Bias)?,
                *stride,
                *padding,
            )?,
            LayerKind::MaxPool2d { kernel, stride } => kernels::maxpool2d(input, *kernel, *stride)?.0,
            LayerKind::BatchNorm { .. } => {
                let gamma = slot(params, self, Slot::Gamma)?;
                let beta = slot(params, self, Slot::Beta)?;
                let running = match mode {
                    Mode::Train => None,
                    Mode::Eval => Some((
                        slot(params, self, Slot::RunningMean)?.data(),
                        slot(params, self, Slot::RunningVar)?.data(),
                    )),
                };
                kernels::batchnorm(input, gamma, beta, running)?.y
            }
            LayerKind::Dropout { rate } => match mode {
                Mode::Train if *rate > 0.0 => {
                    let mask = dropout_mask(input.len(), *rate, rng);
                    let data = input.data().iter().zip(&mask).map(|(x, m)| x * m).collect();
                    Tensor::new(input.shape().to_vec(), data)?
                }
                _ => input.clone(),
            },
            LayerKind::Relu => kernels::relu(input),
            LayerKind::Sigmoid => input.map(sigmoid),
            LayerKind::GlobalAvgPool => kernels::global_pool(input, false)?.0,
            LayerKind::GlobalMaxPool => kernels::global_pool(input, true)?.0,
            LayerKind::Identity => input.clone(),
        };
        debug_assert_eq!(y.shape(), with_batch(input.shape()[0], &out_sample).as_slice());
        Ok(y)
    }

    /// Applies this layer on a tape.
    pub fn record(
        &self,
        params: &ParamStore,
        tape: &mut Tape,
        x: Var,
        mode: Mode,
        rng: &mut dyn RngCore,
    ) -> Result<Var> {
        self.output_shape(sample_shape(tape.value(x))?)?;
        let key = |s| ParamKey::new(&self.id, s);
        Ok(match &self.kind {
            LayerKind::Dense { .. } => {
                let w = tape.param(params, &key(Slot::Weight))?;
                let b = tape.param(params, &key(Slot::Bias))?;
                tape.dense(x, w, b)?
            }
            LayerKind::Conv2d { .. } => return Err(Error::NotDifferentiable("conv2d")),
            LayerKind::MaxPool2d { kernel, stride } => tape.maxpool2d(x, *kernel, *stride)?,
            LayerKind::BatchNorm { .. } => {
                let gamma = tape.param(params, &key(Slot::Gamma))?;
                let beta = tape.param(params, &key(Slot::Beta))?;
                match mode {
                    Mode::Train => tape.batchnorm(&self.id, x, gamma, beta, None)?,
                    Mode::Eval => {
                        let mean = params.get(&key(Slot::RunningMean))?.data();
                        let var = params.get(&key(Slot::RunningVar))?.data();
                        tape.batchnorm(&self.id, x, gamma, beta, Some((mean, var)))?
                    }
                }
            }
            LayerKind::Dropout { rate } => match mode {
                Mode::Train if *rate > 0.0 => {
                    let mask = dropout_mask(tape.value(x).len(), *rate, rng);
                    tape.mask(x, mask)?
                }
                _ => x,
            },
            LayerKind::Relu => tape.relu(x),
            LayerKind::Sigmoid => tape.sigmoid(x),
            LayerKind::GlobalAvgPool => tape.global_avg_pool(x)?,
            LayerKind::GlobalMaxPool => tape.global_max_pool(x)?,
            LayerKind::Identity => x,
        })
    }
}

impl NetworkSpec {
    /// Deterministic eval-mode forward pass. Pure in `(self, params, input)`.
    pub fn eval(&self, params: &ParamStore, input: &Tensor) -> Result<Tensor> {
        // Eval mode never draws from the generator.
        let mut rng = <rand_chacha::ChaCha8Rng as rand::SeedableRng>::seed_from_u64(0);
        let mut cur = input.clone();
        for layer in &self.layers {
            cur = layer.forward(params, &cur, Mode::Eval, &mut rng)?;
        }
        Ok(cur)
    }

    /// Records the whole network on `tape`, returning the output node.
    pub fn record(
        &self,
        params: &ParamStore,
        tape: &mut Tape,
        input: Var,
        mode: Mode,
        rng: &mut dyn RngCore,
    ) -> Result<Var> {
        let mut cur = input;
        for layer in &self.layers {
            cur = layer.record(params, tape, cur, mode, rng)?;
        }
        Ok(cur)
    }
}

/// Runs `spec` on a batch. Train mode also returns the tape and output node
/// needed by [`backward`](super::backward); eval mode returns no tape.
pub fn network_forward(
    spec: &NetworkSpec,
    params: &ParamStore,
    input: &Tensor,
    mode: Mode,
    rng: &mut dyn RngCore,
) -> Result<(Tensor, Option<(Tape, Var)>)> {
    spec.validate()?;
    match mode {
        Mode::Eval => Ok((spec.eval(params, input)?, None)),
        Mode::Train => {
            let mut tape = Tape::new();
            let x = tape.leaf(input.clone());
            let y = spec.record(params, &mut tape, x, mode, rng)?;
            Ok((tape.value(y).clone(), Some((tape, y))))
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn rng() -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(7)
    }

    #[test]
    fn elementwise_layers_on_known_values() {
        let p = ParamStore::new();
        let x = Tensor::new(vec![1, 3], vec![-1.0, 0.0, 2.0]).unwrap();
        let relu = LayerSpec::new("r", LayerKind::Relu);
        assert_eq!(
            relu.forward(&p, &x, Mode::Eval, &mut rng()).unwrap().data(),
            &[0.0, 0.0, 2.0]
        );
        let sig = LayerSpec::new("s", LayerKind::Sigmoid);
        let y = sig
            .forward(&p, &Tensor::new(vec![1, 1], vec![0.0]).unwrap(), Mode::Eval, &mut rng())
            .unwrap();
        assert_eq!(y.data(), &[0.5]);
    }

    #[test]
    fn identity_dense_is_identity() {
        let layer = LayerSpec::new(
            "fc",
            LayerKind::Dense {
                in_features: 3,
                out_features: 3,
            },
        );
        let mut p = ParamStore::new();
        p.insert(ParamKey::new("fc", Slot::Weight), Tensor::eye(3));
        p.insert(ParamKey::new("fc", Slot::Bias), Tensor::zeros(&[3]));
        let x = Tensor::new(vec![2, 3], vec![1.0, -2.0, 3.5, 0.0, 4.0, -1.0]).unwrap();
        assert_eq!(layer.forward(&p, &x, Mode::Eval, &mut rng()).unwrap(), x);
    }

    #[test]
    fn empty_network_and_stacked_relus() {
        let x = Tensor::new(vec![2, 2], vec![-1.0, 3.0, 0.5, -0.25]).unwrap();
        let p = ParamStore::new();
        assert_eq!(NetworkSpec::default().eval(&p, &x).unwrap(), x);
        let mut one = NetworkSpec::default();
        one.push("r1", LayerKind::Relu);
        let mut two = one.clone();
        two.push("r2", LayerKind::Relu);
        assert_eq!(one.eval(&p, &x).unwrap(), two.eval(&p, &x).unwrap());
    }

    #[test]
    fn train_forward_matches_sequential_layer_forward() {
        let mut spec = NetworkSpec::default();
        spec.push(
            "fc",
            LayerKind::Dense {
                in_features: 4,
                out_features: 6,
            },
        )
        .push("bn", LayerKind::BatchNorm { features: 6 })
        .push("relu", LayerKind::Relu)
        .push("drop", LayerKind::Dropout { rate: 0.5 })
        .push("out", LayerKind::Sigmoid);
        let params = ParamStore::init(&spec, &mut rng()).unwrap();
        let x = Tensor::new(vec![5, 4], (0..20).map(|i| (i as f64 * 0.3).sin()).collect()).unwrap();
        let (y, tape) = network_forward(&spec, &params, &x, Mode::Train, &mut rng()).unwrap();
        assert!(tape.is_some());
        let mut r = rng();
        let mut cur = x.clone();
        for layer in &spec.layers {
            cur = layer.forward(&params, &cur, Mode::Train, &mut r).unwrap();
        }
        assert_eq!(y, cur);
        let (_, none) = network_forward(&spec, &params, &x, Mode::Eval, &mut rng()).unwrap();
        assert!(none.is_none());
    }

    #[test]
    fn conv_has_no_backward() {
        let mut spec = NetworkSpec::default();
        spec.push(
            "c",
            LayerKind::Conv2d {
                in_channels: 1,
                out_channels: 1,
                kernel: (1, 1),
                stride: (1, 1),
                padding: (0, 0),
            },
        );
        let params = ParamStore::init(&spec, &mut rng()).unwrap();
        let x = Tensor::zeros(&[1, 1, 2, 2]);
        let err = network_forward(&spec, &params, &x, Mode::Train, &mut rng()).unwrap_err();
        assert!(matches!(err, Error::NotDifferentiable("conv2d")));
    }
}
