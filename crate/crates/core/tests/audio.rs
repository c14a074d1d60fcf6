//! Audio network behavior on full feature maps.

use avfuse::audio::{logmel, pad_or_crop, segment_count, AudioArch, AudioModel};
use avfuse::Tensor;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Receptive-field overhang of the convolutional blocks, in frames.
const HALO: usize = 58;

fn narrow(classes: usize) -> AudioArch {
    AudioArch {
        block_filters: [4, 4, 8, 8],
        instance_dim: 16,
        hidden: 8,
        ..AudioArch::reference(classes)
    }
}

fn random_features(rng: &mut ChaCha8Rng, frames: usize) -> Tensor {
    Tensor::new(
        vec![frames, 64],
        (0..frames * 64).map(|_| rng.random_range(-3.0..3.0)).collect(),
    )
    .unwrap()
}

fn append_zero_frames(x: &Tensor, extra: usize) -> Tensor {
    let mut d = x.data().to_vec();
    d.resize(d.len() + extra * 64, 0.0);
    Tensor::new(vec![x.rows() + extra, 64], d).unwrap()
}

#[test]
fn bag_output_is_a_probability_for_random_weights() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    for seed in 0..3 {
        let model = AudioModel::init(narrow(5), seed).unwrap();
        let frames = rng.random_range(96..400);
        let out = model.forward(&random_features(&mut rng, frames)).unwrap();
        assert_eq!(out.segments.shape(), &[5, segment_count(frames).unwrap()]);
        assert!(out.bag.iter().all(|&p| p > 0.0 && p < 1.0));
    }
}

#[test]
fn trailing_padding_keeps_segment_count_and_interior_segments() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let model = AudioModel::init(narrow(3), 7).unwrap();
    for frames in [96, 128, 320] {
        let x = random_features(&mut rng, frames);
        let padded = append_zero_frames(&x, 31);
        let (a, b) = (model.forward(&x).unwrap(), model.forward(&padded).unwrap());
        assert_eq!(a.segments.shape(), b.segments.shape());
        assert!(b.bag.iter().all(|&p| p > 0.0 && p < 1.0));
        // Segment j pools frames [32 j, 32 j + 96) and the same-padded 3x3
        // convolutions of blocks 1-4 widen that by 2 + 8 + 16 + 32 frames on
        // each side. Segments whose field ends inside the input are exact.
        let s = a.segments.cols();
        let exact = (0..s).filter(|j| 32 * j + 96 + HALO <= frames).collect::<Vec<_>>();
        assert!(frames < 320 || exact.len() >= 5);
        for c in 0..3 {
            for &j in &exact {
                assert_eq!(a.segments.get2(c, j), b.segments.get2(c, j), "class {c} segment {j}");
            }
        }
    }
}

#[test]
fn one_more_stride_adds_one_segment() {
    let model = AudioModel::init(narrow(2), 0).unwrap();
    let base = model.forward(&Tensor::zeros(&[1024, 64])).unwrap();
    let longer = model.forward(&Tensor::zeros(&[1056, 64])).unwrap();
    assert_eq!(base.segments.cols(), 30);
    assert_eq!(longer.segments.cols(), 31);
}

#[test]
fn ten_second_clip_runs_through_the_frontend_and_network() {
    let samples: Vec<f64> = (0..160_000).map(|k| (k as f64 * 0.2).sin() * 0.1).collect();
    let feats = pad_or_crop(&logmel(&samples).unwrap(), 1024).unwrap();
    assert_eq!(feats.shape(), &[1024, 64]);
    let out = AudioModel::init(narrow(4), 3).unwrap().forward(&feats).unwrap();
    assert_eq!(out.segments.shape(), &[4, 30]);
}
