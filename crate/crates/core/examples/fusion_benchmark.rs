//! Runs every fusion method on the synthetic benchmark and prints mAP/mAUC.
//!
//! ```text
//! cargo run --release --example fusion_benchmark -- [seed] [epochs] [lr,lr,...] [variant]
//! ```

use std::time::Instant;

use avfuse::data::SyntheticSpec;
use avfuse::fusion::{train_fusion, AttentionVariant, FusionMethod, FusionTrainConfig};
use avfuse::metrics::evaluate;
use avfuse::nn::train::TrainConfig;

fn main() -> avfuse::Result<()> {
    let mut args = std::env::args().skip(1);
    let seed: u64 = args.next().map_or(0, |s| s.parse().expect("seed"));
    let epochs: usize = args.next().map_or(20, |s| s.parse().expect("epochs"));
    let lrs: Vec<f64> = args.next().map_or(vec![1e-2, 1e-3, 1e-4], |s| {
        s.split(',').map(|x| x.parse().expect("learning rate")).collect()
    });
    let variant: AttentionVariant = args.next().map_or(Ok(AttentionVariant::Multimodal), |s| s.parse())?;

    let spec = SyntheticSpec::benchmark(seed);
    let data = spec.generate()?;
    println!(
        "synthetic benchmark: {} classes, seed {seed}, {epochs} epochs",
        spec.classes
    );

    let audio = evaluate(&data.eval.audio, &data.eval.labels)?;
    let visual = evaluate(&data.eval.visual, &data.eval.labels)?;
    println!("{:<24} {:>7} {:>7}", "model", "mAP", "mAUC");
    println!("{:<24} {:>7.2} {:>7.2}", "audio", audio.map(), audio.mauc());
    println!("{:<24} {:>7.2} {:>7.2}", "visual", visual.map(), visual.mauc());

    let cfg = FusionTrainConfig {
        train: TrainConfig {
            epochs,
            seed,
            ..TrainConfig::default()
        },
        learning_rates: lrs,
        ..FusionTrainConfig::default()
    };
    let runs = [
        (FusionMethod::Average, AttentionVariant::Multimodal),
        (FusionMethod::Regression, AttentionVariant::Multimodal),
        (FusionMethod::Mlp, AttentionVariant::Multimodal),
        (FusionMethod::Attention, variant),
    ];
    for (method, variant) in runs {
        let t = Instant::now();
        let (bundle, report) = train_fusion(method, variant, &data.train, &data.val, &cfg)?;
        let pred = bundle.predict(&data.eval.audio, &data.eval.visual)?;
        let r = evaluate(&pred.scores, &data.eval.labels)?;
        if std::env::var_os("AVFUSE_VERBOSE").is_some() {
            for e in report.iter().flat_map(|r| &r.epochs) {
                println!(
                    "    epoch {:>3} train {:.5} val {:.5} val mAP {:.4}",
                    e.epoch + 1,
                    e.train_loss,
                    e.val_loss,
                    e.val_map.unwrap_or(f64::NAN)
                );
            }
        }
        let best = report
            .map(|r| format!(" (best epoch {})", r.best_epoch + 1))
            .unwrap_or_default();
        println!(
            "{:<24} {:>7.2} {:>7.2}   {:.1}s{best}",
            method.name(),
            r.map(),
            r.mauc(),
            t.elapsed().as_secs_f64()
        );
    }
    Ok(())
}
