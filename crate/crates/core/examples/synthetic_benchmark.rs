//! Generates the synthetic score benchmark, writes it to disk and prints
//! how informative each modality is per class kind.
//!
//! ```text
//! cargo run --release --example synthetic_benchmark -- [out_dir] [seed]
//! ```

use avfuse::data::{ClassKind, SyntheticSpec};
use avfuse::metrics::evaluate;

fn main() -> avfuse::Result<()> {
    let mut args = std::env::args().skip(1);
    let out = args
        .next()
        .map_or_else(|| std::env::temp_dir().join("avfuse_bench"), Into::into);
    let seed: u64 = args.next().map_or(0, |s| s.parse().expect("seed"));

    let spec = SyntheticSpec::benchmark(seed);
    let data = spec.generate()?;
    for (name, split) in [("train", &data.train), ("val", &data.val), ("eval", &data.eval)] {
        split.save(out.join(name))?;
        println!("{name:<5} {} recordings x {} classes", split.len(), split.classes());
    }

    let audio = evaluate(&data.eval.audio, &data.eval.labels)?;
    let visual = evaluate(&data.eval.visual, &data.eval.labels)?;
    for kind in [ClassKind::Audio, ClassKind::Visual, ClassKind::Both] {
        let classes = spec.classes_of(kind);
        let mean = |r: &avfuse::metrics::EvalReport| {
            let aucs: Vec<f64> = classes.iter().filter_map(|&c| r.classes[c].auc).collect();
            aucs.iter().sum::<f64>() / aucs.len().max(1) as f64
        };
        println!(
            "{:<7} {:>2} classes  mean AUC audio {:.3}  visual {:.3}",
            format!("{kind:?}"),
            classes.len(),
            mean(&audio),
            mean(&visual)
        );
    }
    println!("written to {}", out.display());
    Ok(())
}
