//! Weakly labeled audio-visual event classification.
//!
//! Audio clips go through a log-mel frontend ([`audio::logmel`]) and a
//! segment-level ConvNet whose per-segment predictions are averaged into a
//! clip prediction ([`audio::AudioModel`]). Video frame features are mean
//! pooled into one bag vector and classified by a fully connected network
//! ([`visual::VisualModel`]). The two score matrices are combined by one of
//! the late-fusion methods in [`fusion`]: plain averaging, regression, an
//! MLP, or attention that weighs the modalities per class and per clip.
//!
//! Everything trainable runs on a small tape-based autodiff
//! ([`nn::Tape`]) over row-major `f64` tensors. [`metrics`] has AP, AUC and
//! the per-class analysis; [`pipeline`] wires the pieces into the steps the
//! `avfuse` binary exposes.
//!
//! ```no_run
//! use avfuse::data::SyntheticSpec;
//! use avfuse::fusion::{train_fusion, AttentionVariant, FusionMethod, FusionTrainConfig};
//! use avfuse::metrics::evaluate;
//!
//! let data = SyntheticSpec::benchmark(0).generate()?;
//! let cfg = FusionTrainConfig::default();
//! let (bundle, _) = train_fusion(FusionMethod::Attention, AttentionVariant::Multimodal, &data.train, &data.val, &cfg)?;
//! let pred = bundle.predict(&data.eval.audio, &data.eval.visual)?;
//! println!("mAP {:.2}", evaluate(&pred.scores, &data.eval.labels)?.map());
//! # Ok::<(), avfuse::Error>(())
//! ```

pub mod audio;
pub mod checkpoint;
pub mod data;
pub mod error;
pub mod fusion;
pub mod metrics;
pub mod nn;
pub mod pipeline;
pub mod tensor;
pub mod visual;

pub use error::{Error, ErrorClass, Result};
pub use tensor::Tensor;
