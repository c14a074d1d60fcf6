//! Trains the visual bag classifier on synthetic frame features and saves
//! it.
//!
//! Each class owns a direction in feature space; a clip's 64 frames are
//! noisy copies of the sum of its classes' directions.

use avfuse::data::LabelMatrix;
use avfuse::metrics::evaluate;
use avfuse::nn::train::{Split, TrainConfig};
use avfuse::visual::{bag_vector, VisualArch, VisualModel, FRAMES_PER_BAG};
use avfuse::Tensor;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const CLASSES: usize = 10;
const DIM: usize = 128;

fn clips(n: usize, rng: &mut ChaCha8Rng, dirs: &[Vec<f64>]) -> avfuse::Result<(Tensor, LabelMatrix)> {
    let mut bags = Vec::with_capacity(n);
    let mut lists = Vec::with_capacity(n);
    for _ in 0..n {
        let labels: Vec<usize> = (0..CLASSES).filter(|_| rng.random_bool(0.15)).collect();
        let signal: Vec<f64> = (0..DIM).map(|d| labels.iter().map(|&c| dirs[c][d]).sum()).collect();
        let mut frames = Vec::with_capacity(FRAMES_PER_BAG * DIM);
        for _ in 0..FRAMES_PER_BAG {
            frames.extend(signal.iter().map(|s| s + rng.random_range(-8.0..8.0)));
        }
        bags.push(bag_vector(&Tensor::new(vec![FRAMES_PER_BAG, DIM], frames)?)?);
        lists.push(labels);
    }
    Ok((Tensor::from_rows(&bags)?, LabelMatrix::from_indices(&lists, CLASSES)?))
}

fn main() -> avfuse::Result<()> {
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let dirs: Vec<Vec<f64>> = (0..CLASSES)
        .map(|_| (0..DIM).map(|_| rng.random_range(-0.2..0.2)).collect())
        .collect();
    let (x, y) = clips(2000, &mut rng, &dirs)?;
    let (xv, yv) = clips(300, &mut rng, &dirs)?;
    let (xe, ye) = clips(500, &mut rng, &dirs)?;

    let arch = VisualArch {
        input_dim: DIM,
        hidden: vec![256, 256, 128, 128],
        ..VisualArch::reference(CLASSES)
    };
    let cfg = TrainConfig {
        epochs: 20,
        batch_size: 144,
        ..TrainConfig::default()
    };
    let (model, report) = VisualModel::train(arch, Split::new(&x, &y)?, Split::new(&xv, &yv)?, &cfg)?;
    for e in &report.epochs {
        println!(
            "epoch {:>2}  train {:.4}  val {:.4}  val mAP {:.3}",
            e.epoch + 1,
            e.train_loss,
            e.val_loss,
            e.val_map.unwrap_or(f64::NAN)
        );
    }
    println!("selected epoch {}", report.best_epoch + 1);
    let r = evaluate(&model.predict(&xe)?, &ye)?;
    println!("eval mAP {:.2}  mAUC {:.2}", r.map(), r.mauc());

    let path = std::env::temp_dir().join("avfuse_visual_example.avf");
    model.save(&path)?;
    let back = VisualModel::load(&path)?;
    assert_eq!(back.predict(&xe)?, model.predict(&xe)?);
    println!("saved to {}", path.display());
    Ok(())
}
