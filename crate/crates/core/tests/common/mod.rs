//! Helpers shared by the integration tests.
#![allow(dead_code)]

use avfuse::nn::{ParamKey, ParamStore, Tape, Var};
use avfuse::{Result, Tensor};

pub const FD_STEP: f64 = 1e-5;

/// `|a - n| / max(|a|, |n|, 1e-6)`.
pub fn rel_err(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1e-6)
}

#[derive(Debug, Default, Clone, Copy)]
pub struct GradReport {
    pub max_rel: f64,
    pub checked: usize,
}

impl GradReport {
    pub fn merge(&mut self, other: GradReport) {
        self.max_rel = self.max_rel.max(other.max_rel);
        self.checked += other.checked;
    }
}

/// Compares tape gradients of a scalar loss with central differences for
/// every trainable parameter entry and every input entry. `loss` must be a
/// pure function of `(params, input)`; any randomness inside it has to be
/// re-seeded on every call.
pub fn check_gradients<F>(params: &ParamStore, input: &Tensor, loss: F) -> Result<GradReport>
where
    F: Fn(&ParamStore, &mut Tape, Var) -> Result<Var>,
{
    let value = |p: &ParamStore, x: &Tensor| -> Result<f64> {
        let mut tape = Tape::new();
        let xv = tape.leaf(x.clone());
        let l = loss(p, &mut tape, xv)?;
        Ok(tape.value(l).item())
    };

    let mut tape = Tape::new();
    let xv = tape.leaf(input.clone());
    let l = loss(params, &mut tape, xv)?;
    let adj = tape.backward(l)?;
    let mut report = GradReport::default();

    let keys: Vec<ParamKey> = params
        .iter()
        .filter(|(k, _)| k.slot.is_trainable())
        .map(|(k, _)| k)
        .collect();
    for key in keys {
        let base = params.get(&key)?.clone();
        let analytic = adj
            .params()
            .get(&key)
            .cloned()
            .unwrap_or_else(|| Tensor::zeros(base.shape()));
        for i in 0..base.len() {
            let mut p = params.clone();
            p.get_mut(&key)?.data_mut()[i] = base.data()[i] + FD_STEP;
            let up = value(&p, input)?;
            p.get_mut(&key)?.data_mut()[i] = base.data()[i] - FD_STEP;
            let down = value(&p, input)?;
            let numeric = (up - down) / (2.0 * FD_STEP);
            report.max_rel = report.max_rel.max(rel_err(analytic.data()[i], numeric));
            report.checked += 1;
        }
    }

    let dx = adj.wrt(xv).cloned().unwrap_or_else(|| Tensor::zeros(input.shape()));
    for i in 0..input.len() {
        let mut x = input.clone();
        x.data_mut()[i] += FD_STEP;
        let up = value(params, &x)?;
        x.data_mut()[i] -= 2.0 * FD_STEP;
        let down = value(params, &x)?;
        let numeric = (up - down) / (2.0 * FD_STEP);
        report.max_rel = report.max_rel.max(rel_err(dx.data()[i], numeric));
        report.checked += 1;
    }
    Ok(report)
}

use avfuse::fusion::{AttentionConfig, AttentionFusionModel, AttentionVariant};
use avfuse::nn::train::Trainable;
use avfuse::nn::{LayerKind, LayerSpec, Mode, NetworkSpec, Slot};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn random_tensor(rng: &mut ChaCha8Rng, shape: &[usize], lo: f64, hi: f64) -> Tensor {
    let n = shape.iter().product();
    Tensor::new(shape.to_vec(), (0..n).map(|_| rng.random_range(lo..hi)).collect()).unwrap()
}

pub fn random_labels(rng: &mut ChaCha8Rng, shape: &[usize]) -> Tensor {
    let n = shape.iter().product();
    Tensor::new(
        shape.to_vec(),
        (0..n).map(|_| f64::from(u8::from(rng.random_bool(0.4)))).collect(),
    )
    .unwrap()
}

/// Single-layer network with randomized parameters (including running
/// statistics and non-trivial batch-norm affine terms).
fn single_layer(kind: LayerKind, rng: &mut ChaCha8Rng) -> (NetworkSpec, ParamStore) {
    let spec = NetworkSpec::new(vec![LayerSpec::new("layer", kind)]);
    let mut params = ParamStore::init(&spec, rng).unwrap();
    for (key, t) in params.iter_mut() {
        let (lo, hi) = match key.slot {
            Slot::RunningVar => (0.5, 2.0),
            _ => (-1.0, 1.0),
        };
        t.data_mut().iter_mut().for_each(|v| *v = rng.random_range(lo..hi));
    }
    (spec, params)
}

/// `sum((layer(x) + r)^2)` with a fixed random offset `r`.
fn layer_case(kind: LayerKind, mode: Mode, in_shape: &[usize], seed: u64) -> GradReport {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (spec, params) = single_layer(kind, &mut rng);
    let x = random_tensor(&mut rng, in_shape, -2.0, 2.0);
    let per_sample = spec.output_shape(&in_shape[1..]).unwrap();
    let mut out_shape = vec![in_shape[0]];
    out_shape.extend(per_sample);
    let offset = random_tensor(&mut rng, &out_shape, -1.0, 1.0);
    check_gradients(&params, &x, |p, tape, xv| {
        let mut mask_rng = ChaCha8Rng::seed_from_u64(seed ^ 0xd00d);
        let y = spec.record(p, tape, xv, mode, &mut mask_rng)?;
        let r = tape.leaf(offset.clone());
        let s = tape.add(y, r)?;
        Ok(tape.sum_squares(s))
    })
    .unwrap()
}

fn bce_case(seed: u64) -> GradReport {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (n, c) = (rng.random_range(1..6), rng.random_range(1..6));
    let pred = random_tensor(&mut rng, &[n, c], 0.05, 0.95);
    let y = random_labels(&mut rng, &[n, c]);
    check_gradients(&ParamStore::new(), &pred, |_, tape, pv| tape.bce(pv, &y)).unwrap()
}

fn attention_case(variant: AttentionVariant, seed: u64) -> GradReport {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let c = rng.random_range(1..5);
    let n = rng.random_range(3..7);
    let cfg = AttentionConfig {
        classes: c,
        hidden: rng.random_range(2..7),
        dropout: 0.5,
        variant,
    };
    let mut model = AttentionFusionModel::new(cfg, seed).unwrap();
    for (key, t) in model.params.iter_mut() {
        if key.slot == Slot::Gamma || key.slot == Slot::Beta {
            t.data_mut().iter_mut().for_each(|v| *v = rng.random_range(0.5..1.5));
        }
    }
    let x = random_tensor(&mut rng, &[n, 2 * c], -2.0, 2.0);
    let y = random_labels(&mut rng, &[n, c]);
    let params = model.params.clone();
    check_gradients(&params, &x, |p, tape, xv| {
        let mut m = model.clone();
        *m.params_mut() = p.clone();
        let mut mask_rng = ChaCha8Rng::seed_from_u64(seed ^ 0xbeef);
        let o = m.record(tape, xv, Mode::Train, &mut mask_rng)?;
        tape.bce(o, &y)
    })
    .unwrap()
}

/// Every gradient case over `instances` random instances each, keyed by name.
pub fn gradient_suite(instances: u64) -> Vec<(String, GradReport)> {
    let mut out: Vec<(String, GradReport)> = Vec::new();
    let mut run = |name: &str, f: &dyn Fn(u64) -> GradReport| {
        let mut total = GradReport::default();
        for seed in 0..instances {
            total.merge(f(seed));
        }
        out.push((name.to_string(), total));
    };
    let dims = |seed: u64| {
        let mut r = ChaCha8Rng::seed_from_u64(seed.wrapping_mul(31).wrapping_add(7));
        (
            r.random_range(2..6usize),
            r.random_range(1..6usize),
            r.random_range(1..6usize),
        )
    };
    run("dense", &|s| {
        let (n, i, o) = dims(s);
        layer_case(
            LayerKind::Dense {
                in_features: i,
                out_features: o,
            },
            Mode::Train,
            &[n, i],
            s,
        )
    });
    run("batchnorm (batch statistics)", &|s| {
        let (n, f, _) = dims(s);
        layer_case(LayerKind::BatchNorm { features: f }, Mode::Train, &[n, f], s)
    });
    run("batchnorm (running statistics)", &|s| {
        let (n, f, _) = dims(s);
        layer_case(LayerKind::BatchNorm { features: f }, Mode::Eval, &[n, f], s)
    });
    run("dropout (eval)", &|s| {
        let (n, f, _) = dims(s);
        layer_case(LayerKind::Dropout { rate: 0.3 }, Mode::Eval, &[n, f], s)
    });
    run("dropout (train, fixed mask)", &|s| {
        let (n, f, _) = dims(s);
        layer_case(LayerKind::Dropout { rate: 0.3 }, Mode::Train, &[n, f], s)
    });
    run("sigmoid", &|s| {
        let (n, f, _) = dims(s);
        layer_case(LayerKind::Sigmoid, Mode::Train, &[n, f], s)
    });
    run("relu", &|s| {
        let (n, f, _) = dims(s);
        layer_case(LayerKind::Relu, Mode::Train, &[n, f], s)
    });
    run("global average pool", &|s| {
        let (n, c, h) = dims(s);
        layer_case(LayerKind::GlobalAvgPool, Mode::Train, &[n, c, h, 2], s)
    });
    run("bce", &|s| bce_case(s));
    for v in AttentionVariant::ALL {
        run(&format!("attention graph ({v})"), &move |s| attention_case(v, s));
    }
    out
}

/// Definitional AP: the rank of item `i` counts every item ordered before
/// it (higher score, or equal score and lower index) plus itself.
pub fn oracle_ap(scores: &[f64], labels: &[bool]) -> f64 {
    let n = scores.len();
    let ahead = |i: usize, j: usize| scores[j] > scores[i] || (scores[j] == scores[i] && j < i);
    let (mut total, mut p) = (0.0, 0);
    for i in (0..n).filter(|&i| labels[i]) {
        p += 1;
        let rank = 1 + (0..n).filter(|&j| ahead(i, j)).count();
        let hits = 1 + (0..n).filter(|&j| labels[j] && ahead(i, j)).count();
        total += hits as f64 / rank as f64;
    }
    total / p as f64
}

/// AUC by enumerating positive/negative pairs, ties worth one half.
pub fn oracle_auc(scores: &[f64], labels: &[bool]) -> f64 {
    let (mut credit, mut pairs) = (0.0, 0.0);
    for i in (0..scores.len()).filter(|&i| labels[i]) {
        for j in (0..scores.len()).filter(|&j| !labels[j]) {
            pairs += 1.0;
            if scores[i] > scores[j] {
                credit += 1.0;
            } else if scores[i] == scores[j] {
                credit += 0.5;
            }
        }
    }
    credit / pairs
}
