//! Shape trace of the audio network and a forward pass with random weights.
//!
//! ```text
//! cargo run --release --example audio_convnet_shapes -- [classes] [frames]
//! ```

use avfuse::audio::{segment_count, AudioArch, AudioModel, REFERENCE_FRAMES};
use avfuse::Tensor;

fn main() -> avfuse::Result<()> {
    let mut args = std::env::args().skip(1);
    let classes: usize = args.next().map_or(527, |s| s.parse().expect("classes"));
    let frames: usize = args.next().map_or(REFERENCE_FRAMES, |s| s.parse().expect("frames"));

    let arch = AudioArch::reference(classes);
    let spec = arch.spec()?;
    let shapes = spec.infer_shapes(&[1, frames, arch.n_mels])?;
    println!("input 1x{frames}x{}", arch.n_mels);
    for (layer, shape) in spec.layers.iter().zip(&shapes) {
        if layer.id.contains("conv") || layer.id.ends_with("pool") || layer.id == "g" {
            let dims: Vec<String> = shape.iter().map(usize::to_string).collect();
            println!("  {:<10} {}", layer.id, dims.join("x"));
        }
    }
    println!("{} parameters", spec.parameter_count());
    for t in [96, 127, 128, 1024, 1056, 2048] {
        println!("  T = {t:>4}: {} segments", segment_count(t).unwrap_or(0));
    }

    // The full-width network is slow on a CPU, so the forward pass uses
    // narrow blocks with the same topology.
    let small = AudioModel::init(
        AudioArch {
            block_filters: [8, 8, 16, 16],
            instance_dim: 32,
            hidden: 16,
            ..arch
        },
        0,
    )?;
    let x = Tensor::new(
        vec![frames, 64],
        (0..frames * 64)
            .map(|i| ((i * 7919) % 97) as f64 / 97.0 - 0.5)
            .collect(),
    )?;
    let out = small.forward(&x)?;
    let top = (0..out.bag.len())
        .max_by(|&a, &b| out.bag[a].total_cmp(&out.bag[b]))
        .unwrap();
    println!(
        "narrow network: segments {:?}, top class {top} at {:.3}",
        out.segments.shape(),
        out.bag[top]
    );
    Ok(())
}
