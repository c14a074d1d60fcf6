//! Log-mel features for a WAV file, or for a synthetic 1 kHz tone when no
//! path is given.
//!
//! ```text
//! cargo run --release --example logmel_frontend -- [clip.wav]
//! ```

use avfuse::audio::{pad_or_crop, read_wav, LogMel, MelConfig, REFERENCE_FRAMES};

fn main() -> avfuse::Result<()> {
    let cfg = MelConfig::default();
    let samples = match std::env::args().nth(1) {
        Some(path) => read_wav(path, cfg.sample_rate)?,
        None => (0..160_000)
            .map(|i| 0.5 * (2.0 * std::f64::consts::PI * 1000.0 * i as f64 / cfg.sample_rate as f64).sin())
            .collect(),
    };
    let mel = LogMel::new(cfg)?;
    let feats = mel.compute(&samples)?;
    println!(
        "{} samples -> {} frames x {} bands ({:.1} frames/s)",
        samples.len(),
        feats.rows(),
        feats.cols(),
        mel.config().frames_per_second()
    );

    // Band holding the per-frame maximum, tallied over all frames.
    let mut votes = vec![0usize; feats.cols()];
    for i in 0..feats.rows() {
        let row = feats.row(i);
        let arg = (0..row.len()).max_by(|&a, &b| row[a].total_cmp(&row[b])).unwrap();
        votes[arg] += 1;
    }
    let band = (0..votes.len()).max_by_key(|&b| votes[b]).unwrap();
    println!(
        "loudest band {band} (center {:.0} Hz) in {} of {} frames",
        mel.center_frequencies()[band],
        votes[band],
        feats.rows()
    );

    let fixed = pad_or_crop(&feats, REFERENCE_FRAMES)?;
    println!("network input: {:?}", fixed.shape());
    Ok(())
}
