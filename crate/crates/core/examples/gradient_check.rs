//! Compares tape gradients of a small batch-norm MLP with central finite
//! differences.

use avfuse::nn::train::SequentialModel;
use avfuse::nn::{LayerKind, Mode, NetworkSpec, ParamStore, Tape};
use avfuse::Tensor;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const H: f64 = 1e-5;

fn loss(spec: &NetworkSpec, params: &ParamStore, x: &Tensor, y: &Tensor) -> avfuse::Result<(Tape, avfuse::nn::Var)> {
    let mut tape = Tape::new();
    let input = tape.leaf(x.clone());
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let out = spec.record(params, &mut tape, input, Mode::Train, &mut rng)?;
    let l = tape.bce(out, y)?;
    Ok((tape, l))
}

fn main() -> avfuse::Result<()> {
    let mut spec = NetworkSpec::default();
    spec.push(
        "fc1",
        LayerKind::Dense {
            in_features: 6,
            out_features: 5,
        },
    )
    .push("bn1", LayerKind::BatchNorm { features: 5 })
    .push("relu1", LayerKind::Relu)
    .push(
        "fc2",
        LayerKind::Dense {
            in_features: 5,
            out_features: 3,
        },
    )
    .push("sigmoid", LayerKind::Sigmoid);
    let model = SequentialModel::new(spec.clone(), 1)?;
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let x = Tensor::new(vec![8, 6], (0..48).map(|_| rng.random_range(-1.0..1.0)).collect())?;
    let y = Tensor::new(vec![8, 3], (0..24).map(|_| f64::from(rng.random_bool(0.5))).collect())?;

    let (tape, l) = loss(&spec, &model.params, &x, &y)?;
    let grads = tape.backward(l)?.into_params();
    let mut worst: f64 = 0.0;
    let mut count = 0;
    for (key, value) in model.params.iter() {
        let Some(g) = grads.get(&key) else { continue };
        for i in 0..value.len() {
            let eval = |delta: f64| -> avfuse::Result<f64> {
                let mut p = model.params.clone();
                p.get_mut(&key)?.data_mut()[i] += delta;
                let (t, l) = loss(&spec, &p, &x, &y)?;
                Ok(t.value(l).item())
            };
            let numeric = (eval(H)? - eval(-H)?) / (2.0 * H);
            let analytic = g.data()[i];
            let rel = (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1e-6);
            worst = worst.max(rel);
            count += 1;
        }
        println!(
            "{key:<12} max |grad| {:.3e}",
            g.data().iter().fold(0.0f64, |m, v| m.max(v.abs()))
        );
    }
    println!("{count} parameter derivatives, max relative error {worst:.2e}");
    Ok(())
}
