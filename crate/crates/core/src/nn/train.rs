//! Minibatch Adam training with validation-based checkpoint selection.

use rand::seq::SliceRandom;
use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{adam_step, AdamConfig, AdamState, LayerKind, Mode, NetworkSpec, ParamKey, ParamStore, Slot, Tape, Var};
use crate::data::LabelMatrix;
use crate::error::{Error, Result};
use crate::metrics::mean_average_precision;
use crate::tensor::Tensor;

/// A model trained end-to-end with binary cross-entropy.
pub trait Trainable {
    fn params(&self) -> &ParamStore;
    fn params_mut(&mut self) -> &mut ParamStore;

    /// Records class probabilities `[N, C]` for a batch of inputs.
    fn record(&self, tape: &mut Tape, inputs: Var, mode: Mode, rng: &mut dyn RngCore) -> Result<Var>;

    /// Regularization term added to the loss.
    fn penalty(&self, _tape: &mut Tape) -> Result<Option<Var>> {
        Ok(None)
    }

    /// Eval-mode class probabilities.
    fn predict(&self, inputs: &Tensor) -> Result<Tensor>;
}

/// A sequential network with optional L2 penalty `l2 * sum ||W||^2` over its
/// dense weight matrices.
#[derive(Clone, Debug, PartialEq)]
pub struct SequentialModel {
    pub spec: NetworkSpec,
    pub params: ParamStore,
    pub l2: f64,
}

impl SequentialModel {
    pub fn new(spec: NetworkSpec, seed: u64) -> Result<Self> {
        let params = ParamStore::init(&spec, &mut ChaCha8Rng::seed_from_u64(seed))?;
        Ok(SequentialModel { spec, params, l2: 0.0 })
    }

    pub fn from_parts(spec: NetworkSpec, params: ParamStore) -> Result<Self> {
        params.check(&spec)?;
        Ok(SequentialModel { spec, params, l2: 0.0 })
    }

    pub fn with_l2(mut self, l2: f64) -> Self {
        self.l2 = l2;
        self
    }

    /// Sum of squared dense weights.
    pub fn weight_norm_sq(&self) -> f64 {
        self.dense_weights()
            .filter_map(|k| self.params.get(&k).ok())
            .map(Tensor::sum_squares)
            .sum()
    }

    fn dense_weights(&self) -> impl Iterator<Item = ParamKey> + '_ {
        self.spec
            .layers
            .iter()
            .filter(|l| matches!(l.kind, LayerKind::Dense { .. }))
            .map(|l| ParamKey::new(&l.id, Slot::Weight))
    }
}

impl Trainable for SequentialModel {
    fn params(&self) -> &ParamStore {
        &self.params
    }

    fn params_mut(&mut self) -> &mut ParamStore {
        &mut self.params
    }

    fn record(&self, tape: &mut Tape, inputs: Var, mode: Mode, rng: &mut dyn RngCore) -> Result<Var> {
        self.spec.record(&self.params, tape, inputs, mode, rng)
    }

    fn penalty(&self, tape: &mut Tape) -> Result<Option<Var>> {
        if self.l2 == 0.0 {
            return Ok(None);
        }
        let mut total: Option<Var> = None;
        for key in self.dense_weights() {
            let w = tape.param(&self.params, &key)?;
            let ss = tape.sum_squares(w);
            total = Some(match total {
                Some(t) => tape.add(t, ss)?,
                None => ss,
            });
        }
        Ok(total.map(|t| tape.affine(t, self.l2, 0.0)))
    }

    fn predict(&self, inputs: &Tensor) -> Result<Tensor> {
        self.spec.eval(&self.params, inputs)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub adam: AdamConfig,
    pub seed: u64,
    pub bn_momentum: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 100,
            batch_size: 256,
            adam: AdamConfig::default(),
            seed: 0,
            bn_momentum: 0.9,
        }
    }
}

/// Inputs `[N, D]` and aligned labels.
#[derive(Clone, Copy, Debug)]
pub struct Split<'a> {
    pub inputs: &'a Tensor,
    pub labels: &'a LabelMatrix,
}

impl<'a> Split<'a> {
    pub fn new(inputs: &'a Tensor, labels: &'a LabelMatrix) -> Result<Self> {
        if inputs.rank() != 2 || inputs.rows() != labels.rows() {
            return Err(Error::Shape(format!(
                "inputs {:?} vs {} label rows",
                inputs.shape(),
                labels.rows()
            )));
        }
        Ok(Split { inputs, labels })
    }

    pub fn len(&self) -> usize {
        self.labels.rows()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    /// Mean minibatch objective over the epoch.
    pub train_loss: f64,
    pub val_loss: f64,
    pub val_map: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    pub epochs: Vec<EpochRecord>,
    pub best_epoch: usize,
}

impl TrainReport {
    pub fn best(&self) -> &EpochRecord {
        &self.epochs[self.best_epoch]
    }

    pub fn train_losses(&self) -> Vec<f64> {
        self.epochs.iter().map(|e| e.train_loss).collect()
    }
}

/// Sets the bias feeding a model's final sigmoid so that, averaged over
/// `inputs`, the pre-activation of every class equals the log-odds of its
/// training prevalence (with add-one-half smoothing).
pub fn init_output_bias<M: Trainable>(
    model: &mut M,
    bias: &ParamKey,
    inputs: &Tensor,
    labels: &LabelMatrix,
) -> Result<()> {
    model.params_mut().get_mut(bias)?.data_mut().fill(0.0);
    let pred = model.predict(inputs)?;
    let (n, c) = (labels.rows(), labels.cols());
    if pred.shape() != [n, c] || model.params().get(bias)?.len() != c {
        return Err(Error::Shape(format!("output {:?} vs labels {n}x{c}", pred.shape())));
    }
    let logit = |p: f64| {
        let p = p.clamp(1e-12, 1.0 - 1e-12);
        (p / (1.0 - p)).ln()
    };
    let mut target = Vec::with_capacity(c);
    for j in 0..c {
        let prior = (labels.positives(j) as f64 + 0.5) / (n as f64 + 1.0);
        let mean_z = (0..n).map(|i| logit(pred.get2(i, j))).sum::<f64>() / n as f64;
        target.push(logit(prior) - mean_z);
    }
    model.params_mut().get_mut(bias)?.data_mut().copy_from_slice(&target);
    Ok(())
}

/// Selection score: validation mAP when any validation class has
/// positives, otherwise negative validation loss.
fn selection_score(rec: &EpochRecord) -> f64 {
    rec.val_map.unwrap_or(-rec.val_loss)
}

/// Trains `model` in place and leaves it holding the parameters of the
/// epoch with the best validation score (earliest on ties).
pub fn fit<M: Trainable>(model: &mut M, train: Split<'_>, val: Split<'_>, cfg: &TrainConfig) -> Result<TrainReport> {
    if train.is_empty() {
        return Err(Error::InvalidArgument("empty training set".into()));
    }
    if val.is_empty() {
        return Err(Error::InvalidArgument("empty validation set".into()));
    }
    if cfg.batch_size == 0 || cfg.epochs == 0 {
        return Err(Error::InvalidArgument("batch size and epochs must be positive".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut state = AdamState::new(cfg.adam);
    let mut order: Vec<usize> = (0..train.len()).collect();
    let val_targets = val.labels.to_tensor();
    let mut records = Vec::with_capacity(cfg.epochs);
    let mut best: Option<(f64, ParamStore)> = None;
    let mut best_epoch = 0;

    for epoch in 0..cfg.epochs {
        order.shuffle(&mut rng);
        let mut total = 0.0;
        for (batch, idx) in order.chunks(cfg.batch_size).enumerate() {
            let x = train.inputs.select_rows(idx);
            let y = train.labels.select_rows(idx).to_tensor();
            let mut tape = Tape::new();
            let input = tape.leaf(x);
            let pred = model.record(&mut tape, input, Mode::Train, &mut rng)?;
            let mut loss = tape.bce(pred, &y)?;
            if let Some(pen) = model.penalty(&mut tape)? {
                loss = tape.add(loss, pen)?;
            }
            let value = tape.value(loss).item();
            if !value.is_finite() {
                return Err(Error::Divergence {
                    epoch,
                    batch,
                    loss: value,
                });
            }
            let grads = tape.backward(loss)?.into_params();
            adam_step(model.params_mut(), &grads, &mut state)?;
            for stats in tape.batch_stats() {
                model
                    .params_mut()
                    .update_running_stats(&stats.layer, &stats.mean, &stats.var, cfg.bn_momentum)?;
            }
            total += value * idx.len() as f64;
        }

        let val_pred = model.predict(val.inputs)?;
        let val_loss = super::bce_loss(&val_pred, &val_targets)?;
        if !val_loss.is_finite() {
            return Err(Error::Divergence {
                epoch,
                batch: usize::MAX,
                loss: val_loss,
            });
        }
        let rec = EpochRecord {
            epoch,
            train_loss: total / train.len() as f64,
            val_loss,
            val_map: mean_average_precision(&val_pred, val.labels)?,
        };
        let score = selection_score(&rec);
        if best.as_ref().is_none_or(|(s, _)| score > *s) {
            best = Some((score, model.params().clone()));
            best_epoch = epoch;
        }
        records.push(rec);
    }
    if let Some((_, params)) = best {
        *model.params_mut() = params;
    }
    Ok(TrainReport {
        epochs: records,
        best_epoch,
    })
}

/// Trains one fresh model per learning rate and keeps the one with the best
/// validation score. `make` builds an initialized model.
pub fn sweep_learning_rate<M: Trainable>(
    learning_rates: &[f64],
    mut make: impl FnMut() -> Result<M>,
    train: Split<'_>,
    val: Split<'_>,
    cfg: &TrainConfig,
) -> Result<(M, TrainReport, f64)> {
    let mut best: Option<(M, TrainReport, f64)> = None;
    for &lr in learning_rates {
        let mut model = make()?;
        let run_cfg = TrainConfig {
            adam: AdamConfig { lr, ..cfg.adam },
            ..cfg.clone()
        };
        let report = fit(&mut model, train, val, &run_cfg)?;
        let better = best
            .as_ref()
            .is_none_or(|(_, r, _)| selection_score(report.best()) > selection_score(r.best()));
        if better {
            best = Some((model, report, lr));
        }
    }
    best.ok_or_else(|| Error::InvalidArgument("no learning rates to sweep".into()))
}
