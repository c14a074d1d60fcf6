//! Late fusion of audio and visual predictions.

mod attention;
mod average;
mod learned;
mod normalizer;

use std::fmt;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

pub use attention::{
    AttentionConfig, AttentionFusionModel, AttentionGraph, AttentionNets, AttentionOutput, AttentionVariant, RENORM_EPS,
};
pub use average::average_fuse;
pub use learned::{mlp_spec, regression_spec, REGRESSION_L2};
pub use normalizer::{Normalizer, STD_FLOOR};

use crate::checkpoint::Archive;
use crate::data::{BenchmarkSplit, ScoreMatrix};
use crate::error::{Error, Result};
use crate::nn::train::{
    fit, init_output_bias, sweep_learning_rate, SequentialModel, Split, TrainConfig, TrainReport, Trainable,
};
use crate::nn::{AdamConfig, ParamKey, Slot};
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FusionMethod {
    Average,
    Regression,
    Mlp,
    Attention,
}

impl FusionMethod {
    pub const ALL: [FusionMethod; 4] = [
        FusionMethod::Average,
        FusionMethod::Regression,
        FusionMethod::Mlp,
        FusionMethod::Attention,
    ];

    pub fn name(self) -> &'static str {
        match self {
            FusionMethod::Average => "average",
            FusionMethod::Regression => "regression",
            FusionMethod::Mlp => "mlp",
            FusionMethod::Attention => "attention",
        }
    }
}

impl fmt::Display for FusionMethod {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for FusionMethod {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        FusionMethod::ALL
            .into_iter()
            .find(|m| m.name() == s)
            .ok_or_else(|| Error::InvalidArgument(format!("unknown fusion method `{s}`")))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FusionTrainConfig {
    pub train: TrainConfig,
    /// Learning rates tried on the validation split. A single entry skips
    /// the sweep.
    pub learning_rates: Vec<f64>,
    pub l2: f64,
    pub hidden: usize,
    pub dropout: f64,
}

impl Default for FusionTrainConfig {
    fn default() -> Self {
        FusionTrainConfig {
            train: TrainConfig::default(),
            learning_rates: vec![1e-2, 1e-3, 1e-4],
            l2: REGRESSION_L2,
            hidden: 512,
            dropout: 0.5,
        }
    }
}

/// Everything needed to rebuild a trained fusion model.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BundleMeta {
    pub method: FusionMethod,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub variant: Option<AttentionVariant>,
    pub classes: usize,
    pub hidden: usize,
    pub dropout: f64,
    pub l2: f64,
    pub learning_rate: Option<f64>,
    pub seed: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub config_hash: Option<String>,
}

#[derive(Clone, Debug, PartialEq)]
pub enum FusionModel {
    Average,
    Regression(SequentialModel),
    Mlp(SequentialModel),
    Attention(AttentionFusionModel),
}

/// Fused scores and, for attention models, the audio attention weights.
#[derive(Clone, Debug, PartialEq)]
pub struct FusionPrediction {
    pub scores: ScoreMatrix,
    pub alpha_audio: Option<ScoreMatrix>,
}

/// A fusion model with its normalizer and metadata; saved as one archive.
#[derive(Clone, Debug, PartialEq)]
pub struct FusionBundle {
    pub meta: BundleMeta,
    pub normalizer: Option<Normalizer>,
    pub model: FusionModel,
}

impl FusionBundle {
    pub fn average(classes: usize) -> Self {
        FusionBundle {
            meta: BundleMeta {
                method: FusionMethod::Average,
                variant: None,
                classes,
                hidden: 0,
                dropout: 0.0,
                l2: 0.0,
                learning_rate: None,
                seed: 0,
                config_hash: None,
            },
            normalizer: None,
            model: FusionModel::Average,
        }
    }

    pub fn predict(&self, audio: &ScoreMatrix, visual: &ScoreMatrix) -> Result<FusionPrediction> {
        if audio.rank() != 2 || audio.cols() != self.meta.classes {
            return Err(Error::Shape(format!(
                "model has {} classes, predictions are {:?}",
                self.meta.classes,
                audio.shape()
            )));
        }
        let normalized = || -> Result<Tensor> {
            self.normalizer
                .as_ref()
                .ok_or_else(|| Error::InvalidSpec("learned fusion model without normalizer".into()))?
                .apply(audio, visual)
        };
        Ok(match &self.model {
            FusionModel::Average => FusionPrediction {
                scores: average_fuse(audio, visual)?,
                alpha_audio: None,
            },
            FusionModel::Regression(m) | FusionModel::Mlp(m) => FusionPrediction {
                scores: m.predict(&normalized()?)?,
                alpha_audio: None,
            },
            FusionModel::Attention(m) => {
                let out = m.forward(&normalized()?)?;
                FusionPrediction {
                    scores: out.output,
                    alpha_audio: Some(out.alpha_audio),
                }
            }
        })
    }

    pub fn to_archive(&self) -> Archive {
        let mut a = Archive::new();
        a.put_bytes("meta", serde_json::to_vec(&self.meta).expect("meta serializes"));
        if let Some(n) = &self.normalizer {
            n.store(&mut a, "norm");
        }
        match &self.model {
            FusionModel::Average => {}
            FusionModel::Regression(m) | FusionModel::Mlp(m) => a.put_params("param", &m.params),
            FusionModel::Attention(m) => a.put_params("param", &m.params),
        }
        a
    }

    pub fn from_archive(a: &Archive) -> Result<Self> {
        let meta: BundleMeta = serde_json::from_slice(a.bytes("meta")?)?;
        let c = meta.classes;
        let normalizer = match meta.method {
            FusionMethod::Average => None,
            _ => {
                let n = Normalizer::restore(a, "norm")?;
                if n.classes() != c {
                    return Err(Error::Shape(format!(
                        "normalizer has {} classes, meta says {c}",
                        n.classes()
                    )));
                }
                Some(n)
            }
        };
        let model = match meta.method {
            FusionMethod::Average => FusionModel::Average,
            FusionMethod::Regression => FusionModel::Regression(
                SequentialModel::from_parts(regression_spec(c)?, a.params("param")?)?.with_l2(meta.l2),
            ),
            FusionMethod::Mlp => FusionModel::Mlp(SequentialModel::from_parts(
                mlp_spec(c, meta.hidden, meta.dropout)?,
                a.params("param")?,
            )?),
            FusionMethod::Attention => {
                let variant = meta
                    .variant
                    .ok_or_else(|| Error::InvalidSpec("attention bundle without variant".into()))?;
                let cfg = AttentionConfig {
                    classes: c,
                    hidden: meta.hidden,
                    dropout: meta.dropout,
                    variant,
                };
                FusionModel::Attention(AttentionFusionModel::from_parts(cfg, a.params("param")?)?)
            }
        };
        Ok(FusionBundle {
            meta,
            normalizer,
            model,
        })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        self.to_archive().save(path)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        FusionBundle::from_archive(&Archive::load(path)?)
    }
}

fn train_learned<M: Trainable>(
    make: impl FnMut() -> Result<M>,
    x_train: &Tensor,
    x_val: &Tensor,
    train: &BenchmarkSplit,
    val: &BenchmarkSplit,
    cfg: &FusionTrainConfig,
) -> Result<(M, TrainReport, f64)> {
    let tr = Split::new(x_train, &train.labels)?;
    let va = Split::new(x_val, &val.labels)?;
    match cfg.learning_rates.as_slice() {
        [] => Err(Error::InvalidArgument("no learning rate given".into())),
        [lr] => {
            let mut make = make;
            let mut model = make()?;
            let run = TrainConfig {
                adam: AdamConfig {
                    lr: *lr,
                    ..cfg.train.adam
                },
                ..cfg.train.clone()
            };
            let report = fit(&mut model, tr, va, &run)?;
            Ok((model, report, *lr))
        }
        lrs => sweep_learning_rate(lrs, make, tr, va, &cfg.train),
    }
}

/// Fits a fusion model on `train`, selecting epochs (and learning rate) on
/// `val`. The normalizer is fit on `train` only. Average fusion has nothing
/// to train and returns no report.
pub fn train_fusion(
    method: FusionMethod,
    variant: AttentionVariant,
    train: &BenchmarkSplit,
    val: &BenchmarkSplit,
    cfg: &FusionTrainConfig,
) -> Result<(FusionBundle, Option<TrainReport>)> {
    let c = train.classes();
    if val.classes() != c {
        return Err(Error::Shape(format!(
            "train has {c} classes, validation {}",
            val.classes()
        )));
    }
    if method == FusionMethod::Average {
        return Ok((FusionBundle::average(c), None));
    }
    let normalizer = Normalizer::fit(&train.audio, &train.visual)?;
    let x_train = normalizer.apply(&train.audio, &train.visual)?;
    let x_val = normalizer.apply(&val.audio, &val.visual)?;
    let seed = cfg.train.seed;
    let (model, report, lr) = match method {
        FusionMethod::Average => unreachable!(),
        FusionMethod::Regression => {
            let spec = regression_spec(c)?;
            let (m, r, lr) = train_learned(
                || {
                    let mut m = SequentialModel::new(spec.clone(), seed)?.with_l2(cfg.l2);
                    init_output_bias(&mut m, &ParamKey::new("linear", Slot::Bias), &x_train, &train.labels)?;
                    Ok(m)
                },
                &x_train,
                &x_val,
                train,
                val,
                cfg,
            )?;
            (FusionModel::Regression(m), r, lr)
        }
        FusionMethod::Mlp => {
            let spec = mlp_spec(c, cfg.hidden, cfg.dropout)?;
            let (m, r, lr) = train_learned(
                || {
                    let mut m = SequentialModel::new(spec.clone(), seed)?;
                    init_output_bias(&mut m, &ParamKey::new("out", Slot::Bias), &x_train, &train.labels)?;
                    Ok(m)
                },
                &x_train,
                &x_val,
                train,
                val,
                cfg,
            )?;
            (FusionModel::Mlp(m), r, lr)
        }
        FusionMethod::Attention => {
            let acfg = AttentionConfig {
                classes: c,
                hidden: cfg.hidden,
                dropout: cfg.dropout,
                variant,
            };
            let (m, r, lr) = train_learned(
                || {
                    let mut m = AttentionFusionModel::new(acfg.clone(), seed)?;
                    if m.nets.n_av.is_some() {
                        init_output_bias(&mut m, &ParamKey::new("nav.dense", Slot::Bias), &x_train, &train.labels)?;
                    }
                    Ok(m)
                },
                &x_train,
                &x_val,
                train,
                val,
                cfg,
            )?;
            (FusionModel::Attention(m), r, lr)
        }
    };
    let meta = BundleMeta {
        method,
        variant: (method == FusionMethod::Attention).then_some(variant),
        classes: c,
        hidden: if method == FusionMethod::Regression {
            0
        } else {
            cfg.hidden
        },
        dropout: if method == FusionMethod::Regression {
            0.0
        } else {
            cfg.dropout
        },
        l2: if method == FusionMethod::Regression {
            cfg.l2
        } else {
            0.0
        },
        learning_rate: Some(lr),
        seed,
        config_hash: None,
    };
    Ok((
        FusionBundle {
            meta,
            normalizer: Some(normalizer),
            model,
        },
        Some(report),
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::SyntheticSpec;

    fn tiny_cfg(epochs: usize) -> FusionTrainConfig {
        FusionTrainConfig {
            train: TrainConfig {
                epochs,
                batch_size: 64,
                seed: 3,
                ..TrainConfig::default()
            },
            hidden: 16,
            ..FusionTrainConfig::default()
        }
    }

    #[test]
    fn bundles_round_trip_with_identical_outputs() {
        let data = SyntheticSpec::with_sizes(4, 300, 100, 100, 1).generate().unwrap();
        let cfg = tiny_cfg(2);
        for method in FusionMethod::ALL {
            let variants: &[AttentionVariant] = if method == FusionMethod::Attention {
                &AttentionVariant::ALL
            } else {
                &[AttentionVariant::Multimodal]
            };
            for &v in variants {
                let (bundle, _) = train_fusion(method, v, &data.train, &data.val, &cfg).unwrap();
                let back = FusionBundle::from_archive(&bundle.to_archive()).unwrap();
                assert_eq!(back, bundle);
                let p1 = bundle.predict(&data.eval.audio, &data.eval.visual).unwrap();
                let p2 = back.predict(&data.eval.audio, &data.eval.visual).unwrap();
                assert_eq!(p1, p2, "{method} {v}");
                assert_eq!(p1.alpha_audio.is_some(), method == FusionMethod::Attention);
            }
        }
    }

    #[test]
    fn method_names_parse() {
        for m in FusionMethod::ALL {
            assert_eq!(m.name().parse::<FusionMethod>().unwrap(), m);
        }
        assert!("late".parse::<FusionMethod>().is_err());
    }
}
