//! Trains attention fusion on the synthetic benchmark and reports which
//! modality each class leans on, plus the per-class gain histogram.
//!
//! Uses one learning rate (the one the full sweep selects) to keep the run
//! short.

use avfuse::data::{ClassKind, SyntheticSpec};
use avfuse::fusion::{train_fusion, AttentionVariant, FusionMethod, FusionTrainConfig};
use avfuse::metrics::analysis::{improvement_histogram, mean_attention_weights};
use avfuse::metrics::evaluate;
use avfuse::nn::train::TrainConfig;

fn main() -> avfuse::Result<()> {
    let spec = SyntheticSpec::benchmark(0);
    let data = spec.generate()?;
    let cfg = FusionTrainConfig {
        train: TrainConfig {
            epochs: 10,
            ..TrainConfig::default()
        },
        learning_rates: vec![1e-4],
        ..FusionTrainConfig::default()
    };
    let (bundle, _) = train_fusion(
        FusionMethod::Attention,
        AttentionVariant::Multimodal,
        &data.train,
        &data.val,
        &cfg,
    )?;
    let pred = bundle.predict(&data.eval.audio, &data.eval.visual)?;
    let alpha = pred.alpha_audio.expect("attention models emit weights");
    let labels = &data.eval.labels;
    let summary = mean_attention_weights(&alpha, labels)?;

    for kind in [ClassKind::Audio, ClassKind::Visual, ClassKind::Both] {
        let means: Vec<f64> = spec
            .classes_of(kind)
            .iter()
            .filter_map(|&c| summary.per_class[c])
            .collect();
        let leaning_audio = means.iter().filter(|&&m| m > 0.5).count();
        println!(
            "{:<7} classes: mean audio weight {:.3}, {leaning_audio}/{} lean on audio",
            format!("{kind:?}"),
            means.iter().sum::<f64>() / means.len().max(1) as f64,
            means.len()
        );
    }
    println!("histogram of class means over [0, 1]: {:?}", summary.histogram);

    let ap = |r: &avfuse::metrics::EvalReport| r.classes.iter().map(|c| c.ap.unwrap_or(0.0)).collect::<Vec<_>>();
    let fused = evaluate(&pred.scores, labels)?;
    let audio = evaluate(&data.eval.audio, labels)?;
    let visual = evaluate(&data.eval.visual, labels)?;
    let h = improvement_histogram(&ap(&fused), &ap(&audio), &ap(&visual), 0.05)?;
    println!(
        "fused mAP {:.2}; improved {}/{} classes over the better single modality",
        fused.map(),
        h.summary.improved,
        h.summary.classes
    );
    for b in &h.bins {
        println!("  [{:+.2}, {:+.2})  {}", b.lo, b.hi, "#".repeat(b.count));
    }
    Ok(())
}
