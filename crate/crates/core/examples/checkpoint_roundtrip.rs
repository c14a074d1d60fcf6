//! Writes tensors, labels and a trained fusion bundle to archives and reads
//! them back bit for bit.

use avfuse::checkpoint::Archive;
use avfuse::data::SyntheticSpec;
use avfuse::fusion::{train_fusion, AttentionVariant, FusionBundle, FusionMethod, FusionTrainConfig};
use avfuse::nn::train::TrainConfig;
use avfuse::Tensor;

fn main() -> avfuse::Result<()> {
    let dir = std::env::temp_dir().join("avfuse_checkpoint_example");
    std::fs::create_dir_all(&dir)?;

    let t = Tensor::new(vec![2, 3], vec![0.1, -0.0, f64::MAX, f64::MIN_POSITIVE, 1e-300, -7.5])?;
    let mut a = Archive::new();
    a.put_tensor("weights", &t);
    a.put_bytes("note", b"free-form bytes".to_vec());
    let path = dir.join("tensors.avf");
    a.save(&path)?;
    let back = Archive::load(&path)?;
    let same = back
        .tensor("weights")?
        .data()
        .iter()
        .zip(t.data())
        .all(|(x, y)| x.to_bits() == y.to_bits());
    println!("{} entries, tensor bit-exact: {same}", back.len());
    for e in back.entries() {
        println!("  {} {:?} {:?}", e.name, e.payload.dtype(), e.shape);
    }

    let data = SyntheticSpec::with_sizes(8, 1000, 200, 200, 4).generate()?;
    let cfg = FusionTrainConfig {
        train: TrainConfig {
            epochs: 3,
            ..TrainConfig::default()
        },
        learning_rates: vec![1e-3],
        hidden: 32,
        ..FusionTrainConfig::default()
    };
    let (bundle, _) = train_fusion(
        FusionMethod::Mlp,
        AttentionVariant::default(),
        &data.train,
        &data.val,
        &cfg,
    )?;
    let path = dir.join("mlp.avf");
    bundle.save(&path)?;
    let loaded = FusionBundle::load(&path)?;
    let p1 = bundle.predict(&data.eval.audio, &data.eval.visual)?.scores;
    let p2 = loaded.predict(&data.eval.audio, &data.eval.visual)?.scores;
    println!(
        "bundle {} bytes, reloaded predictions identical: {}",
        std::fs::metadata(&path)?.len(),
        p1 == p2
    );

    let mut bytes = std::fs::read(&path)?;
    bytes[0] = b'?';
    match Archive::read_from(&bytes[..]) {
        Err(e) => println!("corrupted magic: {e}"),
        Ok(_) => println!("corrupted magic was accepted"),
    }
    Ok(())
}
