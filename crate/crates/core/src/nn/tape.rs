//! Reverse-mode automatic differentiation over a linear tape.
//!
//! Every operation appends a node holding its forward value and whatever it
//! needs for the backward sweep. Nodes are only ever appended, so node order
//! is a valid topological order and the backward pass is a single reverse
//! scan.

use super::kernels::{self, sigmoid};
use super::loss::{bce_value, check_targets, BCE_EPS};
use super::params::{Gradients, ParamKey, ParamStore};
use crate::error::{Error, Result};
use crate::tensor::{gemm, Tensor, Trans};

/// Handle to a node on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

#[derive(Debug)]
enum Op {
    Leaf,
    Param(ParamKey),
    Dense {
        x: Var,
        w: Var,
        b: Var,
    },
    Relu(Var),
    Sigmoid(Var),
    /// Elementwise product with a constant (dropout masks).
    Mask {
        x: Var,
        mask: Vec<f64>,
    },
    BatchNorm {
        x: Var,
        gamma: Var,
        beta: Var,
        xhat: Vec<f64>,
        inv_std: Vec<f64>,
        batch_stats: bool,
    },
    MaxPool2d {
        x: Var,
        argmax: Vec<usize>,
    },
    GlobalAvgPool(Var),
    GlobalMaxPool {
        x: Var,
        argmax: Vec<usize>,
    },
    Concat {
        a: Var,
        b: Var,
    },
    SliceCols {
        x: Var,
        start: usize,
    },
    Add(Var, Var),
    Mul(Var, Var),
    Div(Var, Var),
    Affine {
        x: Var,
        scale: f64,
    },
    SumSquares(Var),
    Bce {
        pred: Var,
        target: Vec<f64>,
    },
}

#[derive(Debug)]
struct Node {
    value: Tensor,
    op: Op,
}

/// Batch statistics observed by a train-mode batch-norm layer.
#[derive(Clone, Debug, PartialEq)]
pub struct BatchStats {
    pub layer: String,
    pub mean: Vec<f64>,
    pub var: Vec<f64>,
}

#[derive(Debug, Default)]
pub struct Tape {
    nodes: Vec<Node>,
    batch_stats: Vec<BatchStats>,
}

/// Gradients of a scalar with respect to every node of a tape.
#[derive(Debug)]
pub struct Adjoints {
    grads: Vec<Option<Tensor>>,
    params: Gradients,
}

impl Adjoints {
    /// Gradient with respect to an arbitrary node (e.g. a leaf input).
    pub fn wrt(&self, v: Var) -> Option<&Tensor> {
        self.grads.get(v.0).and_then(Option::as_ref)
    }

    pub fn params(&self) -> &Gradients {
        &self.params
    }

    pub fn into_params(self) -> Gradients {
        self.params
    }
}

/// Gradients of the scalar `loss` with respect to every parameter read onto
/// the tape. Fails with [`Error::NoTape`] when no train-mode tape exists.
pub fn backward(tape: Option<&Tape>, loss: Var) -> Result<Gradients> {
    Ok(tape.ok_or(Error::NoTape)?.backward(loss)?.into_params())
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    /// Batch-norm statistics recorded by train-mode forwards, in order.
    pub fn batch_stats(&self) -> &[BatchStats] {
        &self.batch_stats
    }

    fn push(&mut self, value: Tensor, op: Op) -> Var {
        self.nodes.push(Node { value, op });
        Var(self.nodes.len() - 1)
    }

    pub fn leaf(&mut self, value: Tensor) -> Var {
        self.push(value, Op::Leaf)
    }

    /// Reads a parameter onto the tape so its gradient is reported.
    pub fn param(&mut self, store: &ParamStore, key: &ParamKey) -> Result<Var> {
        let value = store.get(key)?.clone();
        Ok(self.push(value, Op::Param(key.clone())))
    }

    pub fn dense(&mut self, x: Var, w: Var, b: Var) -> Result<Var> {
        let y = kernels::dense(self.value(x), self.value(w), self.value(b))?;
        Ok(self.push(y, Op::Dense { x, w, b }))
    }

    pub fn relu(&mut self, x: Var) -> Var {
        let y = kernels::relu(self.value(x));
        self.push(y, Op::Relu(x))
    }

    pub fn sigmoid(&mut self, x: Var) -> Var {
        let y = self.value(x).map(sigmoid);
        self.push(y, Op::Sigmoid(x))
    }

    /// Multiplies by a fixed mask, e.g. an inverted-dropout mask whose kept
    /// entries hold `1 / (1 - rate)`.
    pub fn mask(&mut self, x: Var, mask: Vec<f64>) -> Result<Var> {
        let xv = self.value(x);
        if mask.len() != xv.len() {
            return Err(Error::Shape(format!(
                "mask of {} values for tensor {:?}",
                mask.len(),
                xv.shape()
            )));
        }
        let data = xv.data().iter().zip(&mask).map(|(a, m)| a * m).collect();
        let y = Tensor::new(xv.shape().to_vec(), data)?;
        Ok(self.push(y, Op::Mask { x, mask }))
    }

    /// Batch normalization. With `running = None` the batch statistics are
    /// used and recorded under `layer` for the running-average update.
    pub fn batchnorm(
        &mut self,
        layer: &str,
        x: Var,
        gamma: Var,
        beta: Var,
        running: Option<(&[f64], &[f64])>,
    ) -> Result<Var> {
        let out = kernels::batchnorm(self.value(x), self.value(gamma), self.value(beta), running)?;
        let batch_stats = running.is_none();
        if batch_stats {
            self.batch_stats.push(BatchStats {
                layer: layer.to_string(),
                mean: out.mean,
                var: out.var,
            });
        }
        Ok(self.push(
            out.y,
            Op::BatchNorm {
                x,
                gamma,
                beta,
                xhat: out.xhat,
                inv_std: out.inv_std,
                batch_stats,
            },
        ))
    }

    pub fn maxpool2d(&mut self, x: Var, kernel: (usize, usize), stride: (usize, usize)) -> Result<Var> {
        let (y, argmax) = kernels::maxpool2d(self.value(x), kernel, stride)?;
        Ok(self.push(y, Op::MaxPool2d { x, argmax }))
    }

    pub fn global_avg_pool(&mut self, x: Var) -> Result<Var> {
        let (y, _) = kernels::global_pool(self.value(x), false)?;
        Ok(self.push(y, Op::GlobalAvgPool(x)))
    }

    pub fn global_max_pool(&mut self, x: Var) -> Result<Var> {
        let (y, argmax) = kernels::global_pool(self.value(x), true)?;
        Ok(self.push(y, Op::GlobalMaxPool { x, argmax }))
    }

    /// Column-wise concatenation of two `[N, _]` tensors.
    pub fn concat(&mut self, a: Var, b: Var) -> Result<Var> {
        let y = Tensor::concat_cols(self.value(a), self.value(b))?;
        Ok(self.push(y, Op::Concat { a, b }))
    }

    /// Columns `start..start + len` of an `[N, _]` tensor.
    pub fn slice_cols(&mut self, x: Var, start: usize, len: usize) -> Result<Var> {
        let xv = self.value(x);
        if xv.rank() != 2 || start + len > xv.cols() {
            return Err(Error::Shape(format!(
                "cannot take columns {start}..{} of {:?}",
                start + len,
                xv.shape()
            )));
        }
        let mut data = Vec::with_capacity(xv.rows() * len);
        for i in 0..xv.rows() {
            data.extend_from_slice(&xv.row(i)[start..start + len]);
        }
        let y = Tensor::new(vec![xv.rows(), len], data)?;
        Ok(self.push(y, Op::SliceCols { x, start }))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let y = self.value(a).zip_map(self.value(b), |x, y| x + y)?;
        Ok(self.push(y, Op::Add(a, b)))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let y = self.value(a).zip_map(self.value(b), |x, y| x * y)?;
        Ok(self.push(y, Op::Mul(a, b)))
    }

    pub fn div(&mut self, a: Var, b: Var) -> Result<Var> {
        let y = self.value(a).zip_map(self.value(b), |x, y| x / y)?;
        Ok(self.push(y, Op::Div(a, b)))
    }

    /// `scale * x + shift`, elementwise.
    pub fn affine(&mut self, x: Var, scale: f64, shift: f64) -> Var {
        let y = self.value(x).map(|v| scale * v + shift);
        self.push(y, Op::Affine { x, scale })
    }

    /// `1 - x`, elementwise.
    pub fn one_minus(&mut self, x: Var) -> Var {
        self.affine(x, -1.0, 1.0)
    }

    /// Scalar `sum(x^2)`.
    pub fn sum_squares(&mut self, x: Var) -> Var {
        let y = Tensor::scalar(self.value(x).sum_squares());
        self.push(y, Op::SumSquares(x))
    }

    /// Mean binary cross-entropy over every entry of `pred` (batch and
    /// classes), with predictions clamped to `[BCE_EPS, 1 - BCE_EPS]`.
    pub fn bce(&mut self, pred: Var, target: &Tensor) -> Result<Var> {
        self.value(pred).expect_same_shape(target)?;
        check_targets(target)?;
        let y = Tensor::scalar(bce_value(self.value(pred).data(), target.data()));
        Ok(self.push(
            y,
            Op::Bce {
                pred,
                target: target.data().to_vec(),
            },
        ))
    }

    /// Reverse sweep from the scalar `loss`.
    pub fn backward(&self, loss: Var) -> Result<Adjoints> {
        if loss.0 >= self.nodes.len() {
            return Err(Error::InvalidArgument(format!("{loss:?} is not on this tape")));
        }
        if self.value(loss).len() != 1 {
            return Err(Error::Shape(format!(
                "backward needs a scalar loss, got {:?}",
                self.value(loss).shape()
            )));
        }
        let mut grads: Vec<Option<Tensor>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[loss.0] = Some(Tensor::full(self.value(loss).shape(), 1.0));
        let mut params = Gradients::default();

        for idx in (0..=loss.0).rev() {
            let Some(g) = grads[idx].take() else { continue };
            let node = &self.nodes[idx];
            match &node.op {
                Op::Leaf => {}
                Op::Param(key) => params.accumulate(key.clone(), g.clone()),
                Op::Dense { x, w, b } => {
                    let (xv, wv) = (self.value(*x), self.value(*w));
                    let (n, inp, out) = (xv.rows(), xv.cols(), wv.shape()[0]);
                    let mut dx = vec![0.0; n * inp];
                    gemm(n, out, inp, 1.0, g.data(), Trans::N, wv.data(), Trans::N, 0.0, &mut dx);
                    let mut dw = vec![0.0; out * inp];
                    gemm(out, n, inp, 1.0, g.data(), Trans::T, xv.data(), Trans::N, 0.0, &mut dw);
                    let mut db = vec![0.0; out];
                    for row in g.data().chunks_exact(out) {
                        for (d, r) in db.iter_mut().zip(row) {
                            *d += r;
                        }
                    }
                    accumulate(&mut grads, *x, Tensor::new(xv.shape().to_vec(), dx)?);
                    accumulate(&mut grads, *w, Tensor::new(wv.shape().to_vec(), dw)?);
                    accumulate(&mut grads, *b, Tensor::vector(db));
                }
                Op::Relu(x) => {
                    let dx = g.zip_map(self.value(*x), |g, x| if x > 0.0 { g } else { 0.0 })?;
                    accumulate(&mut grads, *x, dx);
                }
                Op::Sigmoid(x) => {
                    let dx = g.zip_map(&node.value, |g, y| g * y * (1.0 - y))?;
                    accumulate(&mut grads, *x, dx);
                }
                Op::Mask { x, mask } => {
                    let data = g.data().iter().zip(mask).map(|(g, m)| g * m).collect();
                    accumulate(&mut grads, *x, Tensor::new(g.shape().to_vec(), data)?);
                }
                Op::BatchNorm {
                    x,
                    gamma,
                    beta,
                    xhat,
                    inv_std,
                    batch_stats,
                } => {
                    let gv = self.value(*gamma);
                    let (outer, ch, inner) = kernels::bn_layout(g.shape(), gv.len())?;
                    let m = (outer * inner) as f64;
                    let at = |o: usize, c: usize, i: usize| (o * ch + c) * inner + i;
                    let gd = g.data();
                    let mut dgamma = vec![0.0; ch];
                    let mut dbeta = vec![0.0; ch];
                    let mut dx = vec![0.0; gd.len()];
                    for c in 0..ch {
                        let mut sum_g = 0.0;
                        let mut sum_gx = 0.0;
                        for o in 0..outer {
                            for i in 0..inner {
                                let k = at(o, c, i);
                                sum_g += gd[k];
                                sum_gx += gd[k] * xhat[k];
                            }
                        }
                        dgamma[c] = sum_gx;
                        dbeta[c] = sum_g;
                        let gam = gv.data()[c];
                        for o in 0..outer {
                            for i in 0..inner {
                                let k = at(o, c, i);
                                dx[k] = if *batch_stats {
                                    gam * inv_std[c] / m * (m * gd[k] - sum_g - xhat[k] * sum_gx)
                                } else {
                                    gam * inv_std[c] * gd[k]
                                };
                            }
                        }
                    }
                    accumulate(&mut grads, *x, Tensor::new(g.shape().to_vec(), dx)?);
                    accumulate(&mut grads, *gamma, Tensor::vector(dgamma));
                    accumulate(&mut grads, *beta, Tensor::vector(dbeta));
                }
                Op::MaxPool2d { x, argmax } | Op::GlobalMaxPool { x, argmax } => {
                    let xv = self.value(*x);
                    let mut dx = vec![0.0; xv.len()];
                    if matches!(node.op, Op::MaxPool2d { .. }) {
                        for (gi, &src) in g.data().iter().zip(argmax) {
                            dx[src] += gi;
                        }
                    } else {
                        let area = xv.shape()[2] * xv.shape()[3];
                        for (plane, (gi, &src)) in g.data().iter().zip(argmax).enumerate() {
                            dx[plane * area + src] += gi;
                        }
                    }
                    accumulate(&mut grads, *x, Tensor::new(xv.shape().to_vec(), dx)?);
                }
                Op::GlobalAvgPool(x) => {
                    let xv = self.value(*x);
                    let area = xv.shape()[2] * xv.shape()[3];
                    let mut dx = Vec::with_capacity(xv.len());
                    for gi in g.data() {
                        dx.extend(std::iter::repeat_n(gi / area as f64, area));
                    }
                    accumulate(&mut grads, *x, Tensor::new(xv.shape().to_vec(), dx)?);
                }
                Op::Concat { a, b } => {
                    let (ga, gb) = g.split_cols(self.value(*a).cols())?;
                    accumulate(&mut grads, *a, ga);
                    accumulate(&mut grads, *b, gb);
                }
                Op::SliceCols { x, start } => {
                    let xv = self.value(*x);
                    let (cols, len) = (xv.cols(), g.cols());
                    let mut dx = vec![0.0; xv.len()];
                    for i in 0..g.rows() {
                        dx[i * cols + start..i * cols + start + len].copy_from_slice(g.row(i));
                    }
                    accumulate(&mut grads, *x, Tensor::new(xv.shape().to_vec(), dx)?);
                }
                Op::Add(a, b) => {
                    accumulate(&mut grads, *a, g.clone());
                    accumulate(&mut grads, *b, g.clone());
                }
                Op::Mul(a, b) => {
                    let da = g.zip_map(self.value(*b), |g, y| g * y)?;
                    let db = g.zip_map(self.value(*a), |g, x| g * x)?;
                    accumulate(&mut grads, *a, da);
                    accumulate(&mut grads, *b, db);
                }
                Op::Div(a, b) => {
                    let bv = self.value(*b);
                    let da = g.zip_map(bv, |g, y| g / y)?;
                    let db = g.zip_map(&node.value, |g, q| g * q)?.zip_map(bv, |gq, y| -gq / y)?;
                    accumulate(&mut grads, *a, da);
                    accumulate(&mut grads, *b, db);
                }
                Op::Affine { x, scale } => {
                    accumulate(&mut grads, *x, g.map(|g| g * scale));
                }
                Op::SumSquares(x) => {
                    let s = g.item();
                    accumulate(&mut grads, *x, self.value(*x).map(|v| 2.0 * v * s));
                }
                Op::Bce { pred, target } => {
                    let s = g.item();
                    let pv = self.value(*pred);
                    let count = pv.len() as f64;
                    let data = pv
                        .data()
                        .iter()
                        .zip(target)
                        .map(|(&p, &y)| {
                            if !(BCE_EPS..=1.0 - BCE_EPS).contains(&p) {
                                0.0
                            } else {
                                s * (-y / p + (1.0 - y) / (1.0 - p)) / count
                            }
                        })
                        .collect();
                    accumulate(&mut grads, *pred, Tensor::new(pv.shape().to_vec(), data)?);
                }
            }
            grads[idx] = Some(g);
        }
        Ok(Adjoints { grads, params })
    }
}

fn accumulate(grads: &mut [Option<Tensor>], v: Var, g: Tensor) {
    match &mut grads[v.0] {
        Some(acc) => {
            for (a, b) in acc.data_mut().iter_mut().zip(g.data()) {
                *a += b;
            }
        }
        slot @ None => *slot = Some(g),
    }
}
