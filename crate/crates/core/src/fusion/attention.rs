//! Attention fusion.
//!
//! With normalized predictions `h_a`, `h_v` (each `C` wide):
//!
//! ```text
//! alpha_a = n_attn([h_a, h_v])                 per class, in (0, 1)
//! alpha_v = 1 - alpha_a
//! h       = alpha_a * n_a(h_a) + alpha_v * n_v(h_v)
//! o       = n_av(h)
//! ```
//!
//! `n_attn` is a one-hidden-layer network with a sigmoid output; `n_a`, `n_v`
//! and `n_av` are `C -> C` dense layers with a sigmoid. The ablation
//! variants change how the weights are produced or drop sub-networks.

use std::fmt;
use std::str::FromStr;

use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::train::Trainable;
use crate::nn::{LayerKind, Mode, NetworkSpec, ParamKey, ParamStore, Slot, Tape, Var};
use crate::tensor::Tensor;

/// Guard added to both unimodal weights before renormalizing.
pub const RENORM_EPS: f64 = 1e-8;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum AttentionVariant {
    /// Weights from both modalities' predictions.
    #[default]
    Multimodal,
    /// `alpha_a` from `h_a` and `alpha_v` from `h_v`, renormalized.
    SelfUnimodal,
    /// `alpha_a` from `h_v` and `alpha_v` from `h_a`, renormalized.
    CrossUnimodal,
    /// Multimodal with `n_a` and `n_v` replaced by the identity.
    NoNaNv,
    /// Multimodal with `n_av` replaced by a bare sigmoid.
    NoNav,
}

impl AttentionVariant {
    pub const ALL: [AttentionVariant; 5] = [
        AttentionVariant::Multimodal,
        AttentionVariant::SelfUnimodal,
        AttentionVariant::CrossUnimodal,
        AttentionVariant::NoNaNv,
        AttentionVariant::NoNav,
    ];

    pub fn name(self) -> &'static str {
        match self {
            AttentionVariant::Multimodal => "multimodal",
            AttentionVariant::SelfUnimodal => "self-unimodal",
            AttentionVariant::CrossUnimodal => "cross-unimodal",
            AttentionVariant::NoNaNv => "no-na-nv",
            AttentionVariant::NoNav => "no-nav",
        }
    }

    pub fn is_unimodal(self) -> bool {
        matches!(self, AttentionVariant::SelfUnimodal | AttentionVariant::CrossUnimodal)
    }

    fn has_transforms(self) -> bool {
        self != AttentionVariant::NoNaNv
    }

    fn has_head(self) -> bool {
        self != AttentionVariant::NoNav
    }
}

impl fmt::Display for AttentionVariant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for AttentionVariant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        AttentionVariant::ALL
            .into_iter()
            .find(|v| v.name() == s)
            .ok_or_else(|| Error::InvalidArgument(format!("unknown attention variant `{s}`")))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AttentionConfig {
    pub classes: usize,
    pub hidden: usize,
    pub dropout: f64,
    pub variant: AttentionVariant,
}

impl AttentionConfig {
    pub fn new(classes: usize, variant: AttentionVariant) -> Self {
        AttentionConfig {
            classes,
            hidden: 512,
            dropout: 0.5,
            variant,
        }
    }
}

fn attention_net(prefix: &str, input: usize, cfg: &AttentionConfig) -> NetworkSpec {
    let mut net = NetworkSpec::default();
    net.push(
        format!("{prefix}.fc1"),
        LayerKind::Dense {
            in_features: input,
            out_features: cfg.hidden,
        },
    )
    .push(format!("{prefix}.bn1"), LayerKind::BatchNorm { features: cfg.hidden })
    .push(format!("{prefix}.relu1"), LayerKind::Relu)
    .push(format!("{prefix}.drop1"), LayerKind::Dropout { rate: cfg.dropout })
    .push(
        format!("{prefix}.out"),
        LayerKind::Dense {
            in_features: cfg.hidden,
            out_features: cfg.classes,
        },
    )
    .push(format!("{prefix}.sigmoid"), LayerKind::Sigmoid);
    net
}

fn transform(prefix: &str, classes: usize) -> NetworkSpec {
    let mut net = NetworkSpec::default();
    net.push(
        format!("{prefix}.dense"),
        LayerKind::Dense {
            in_features: classes,
            out_features: classes,
        },
    )
    .push(format!("{prefix}.sigmoid"), LayerKind::Sigmoid);
    net
}

/// Sub-network layouts implied by a config. Parameters of every sub-network
/// share one store, namespaced by layer id prefix.
#[derive(Clone, Debug, PartialEq)]
pub struct AttentionNets {
    /// Multimodal attention net, or the audio-weight net of unimodal variants.
    pub attn: NetworkSpec,
    /// Visual-weight net of unimodal variants.
    pub attn_v: Option<NetworkSpec>,
    pub n_a: Option<NetworkSpec>,
    pub n_v: Option<NetworkSpec>,
    pub n_av: Option<NetworkSpec>,
}

impl AttentionNets {
    pub fn new(cfg: &AttentionConfig) -> Result<Self> {
        if cfg.classes == 0 || cfg.hidden == 0 {
            return Err(Error::InvalidSpec(
                "class count and hidden width must be at least 1".into(),
            ));
        }
        let c = cfg.classes;
        let v = cfg.variant;
        let nets = if v.is_unimodal() {
            AttentionNets {
                attn: attention_net("attn_a", c, cfg),
                attn_v: Some(attention_net("attn_v", c, cfg)),
                n_a: Some(transform("na", c)),
                n_v: Some(transform("nv", c)),
                n_av: Some(transform("nav", c)),
            }
        } else {
            AttentionNets {
                attn: attention_net("attn", 2 * c, cfg),
                attn_v: None,
                n_a: v.has_transforms().then(|| transform("na", c)),
                n_v: v.has_transforms().then(|| transform("nv", c)),
                n_av: v.has_head().then(|| transform("nav", c)),
            }
        };
        for net in nets.all() {
            net.validate()?;
        }
        Ok(nets)
    }

    pub fn all(&self) -> impl Iterator<Item = &NetworkSpec> {
        std::iter::once(&self.attn)
            .chain(self.attn_v.as_ref())
            .chain(self.n_a.as_ref())
            .chain(self.n_v.as_ref())
            .chain(self.n_av.as_ref())
    }

    pub fn parameter_count(&self) -> usize {
        self.all().map(NetworkSpec::parameter_count).sum()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct AttentionFusionModel {
    pub config: AttentionConfig,
    pub nets: AttentionNets,
    pub params: ParamStore,
}

/// Eval-mode outputs for a batch.
#[derive(Clone, Debug, PartialEq)]
pub struct AttentionOutput {
    pub output: Tensor,
    pub alpha_audio: Tensor,
    pub alpha_visual: Tensor,
}

/// Nodes of one recorded forward pass.
#[derive(Clone, Copy, Debug)]
pub struct AttentionGraph {
    pub output: Var,
    pub alpha_audio: Var,
    pub alpha_visual: Var,
}

impl AttentionFusionModel {
    pub fn new(config: AttentionConfig, seed: u64) -> Result<Self> {
        let nets = AttentionNets::new(&config)?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut params = ParamStore::new();
        for net in nets.all() {
            params.init_into(net, &mut rng)?;
        }
        // Square transforms start as per-class maps rather than random
        // mixtures of all classes.
        for net in [&nets.n_a, &nets.n_v, &nets.n_av].into_iter().flatten() {
            let id = &net.layers[0].id;
            let w = params.get_mut(&ParamKey::new(id, Slot::Weight))?;
            let c = w.rows();
            for (k, v) in w.data_mut().iter_mut().enumerate() {
                *v = if k / c == k % c { 1.0 } else { 0.0 };
            }
            params.get_mut(&ParamKey::new(id, Slot::Bias))?.data_mut().fill(0.0);
        }
        Ok(AttentionFusionModel { config, nets, params })
    }

    /// Rebuilds a model from stored parameters, rejecting stores that do not
    /// match the variant's sub-networks exactly.
    pub fn from_parts(config: AttentionConfig, params: ParamStore) -> Result<Self> {
        let nets = AttentionNets::new(&config)?;
        for net in nets.all() {
            params.check(net)?;
        }
        let known: Vec<&str> = nets
            .all()
            .flat_map(|n| n.layers.iter().map(|l| l.id.as_str()))
            .collect();
        if let Some((key, _)) = params.iter().find(|(k, _)| !known.contains(&k.layer.as_str())) {
            return Err(Error::InvalidSpec(format!(
                "parameter `{key}` does not belong to the {} variant",
                config.variant
            )));
        }
        Ok(AttentionFusionModel { config, nets, params })
    }

    pub fn variant(&self) -> AttentionVariant {
        self.config.variant
    }

    fn sub(
        &self,
        net: Option<&NetworkSpec>,
        tape: &mut Tape,
        x: Var,
        mode: Mode,
        rng: &mut dyn RngCore,
    ) -> Result<Var> {
        match net {
            Some(n) => n.record(&self.params, tape, x, mode, rng),
            None => Ok(x),
        }
    }

    /// Records the forward pass on `inputs = [h_a, h_v]` (`N x 2C`).
    pub fn graph(&self, tape: &mut Tape, inputs: Var, mode: Mode, rng: &mut dyn RngCore) -> Result<AttentionGraph> {
        let c = self.config.classes;
        let width = tape.value(inputs).shape().get(1).copied();
        if tape.value(inputs).rank() != 2 || width != Some(2 * c) {
            return Err(Error::Shape(format!(
                "attention fusion expects N x {} inputs, got {:?}",
                2 * c,
                tape.value(inputs).shape()
            )));
        }
        let ha = tape.slice_cols(inputs, 0, c)?;
        let hv = tape.slice_cols(inputs, c, c)?;
        let (alpha_a, alpha_v) = match self.config.variant {
            AttentionVariant::SelfUnimodal | AttentionVariant::CrossUnimodal => {
                let (src_a, src_v) = if self.config.variant == AttentionVariant::SelfUnimodal {
                    (ha, hv)
                } else {
                    (hv, ha)
                };
                let raw_a = self.nets.attn.record(&self.params, tape, src_a, mode, rng)?;
                let attn_v = self
                    .nets
                    .attn_v
                    .as_ref()
                    .expect("unimodal variants have two attention nets");
                let raw_v = attn_v.record(&self.params, tape, src_v, mode, rng)?;
                let sum = tape.add(raw_a, raw_v)?;
                let denom = tape.affine(sum, 1.0, 2.0 * RENORM_EPS);
                let num_a = tape.affine(raw_a, 1.0, RENORM_EPS);
                let num_v = tape.affine(raw_v, 1.0, RENORM_EPS);
                (tape.div(num_a, denom)?, tape.div(num_v, denom)?)
            }
            _ => {
                let a = self.nets.attn.record(&self.params, tape, inputs, mode, rng)?;
                (a, tape.one_minus(a))
            }
        };
        let ta = self.sub(self.nets.n_a.as_ref(), tape, ha, mode, rng)?;
        let tv = self.sub(self.nets.n_v.as_ref(), tape, hv, mode, rng)?;
        let wa = tape.mul(alpha_a, ta)?;
        let wv = tape.mul(alpha_v, tv)?;
        let fused = tape.add(wa, wv)?;
        let output = match &self.nets.n_av {
            Some(n) => n.record(&self.params, tape, fused, mode, rng)?,
            None => tape.sigmoid(fused),
        };
        Ok(AttentionGraph {
            output,
            alpha_audio: alpha_a,
            alpha_visual: alpha_v,
        })
    }

    /// Eval-mode forward on normalized `[h_a, h_v]`.
    pub fn forward(&self, inputs: &Tensor) -> Result<AttentionOutput> {
        let mut tape = Tape::new();
        let x = tape.leaf(inputs.clone());
        // Eval mode never draws from the generator.
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let g = self.graph(&mut tape, x, Mode::Eval, &mut rng)?;
        Ok(AttentionOutput {
            output: tape.value(g.output).clone(),
            alpha_audio: tape.value(g.alpha_audio).clone(),
            alpha_visual: tape.value(g.alpha_visual).clone(),
        })
    }
}

impl Trainable for AttentionFusionModel {
    fn params(&self) -> &ParamStore {
        &self.params
    }

    fn params_mut(&mut self) -> &mut ParamStore {
        &mut self.params
    }

    fn record(&self, tape: &mut Tape, inputs: Var, mode: Mode, rng: &mut dyn RngCore) -> Result<Var> {
        Ok(self.graph(tape, inputs, mode, rng)?.output)
    }

    fn predict(&self, inputs: &Tensor) -> Result<Tensor> {
        Ok(self.forward(inputs)?.output)
    }
}
