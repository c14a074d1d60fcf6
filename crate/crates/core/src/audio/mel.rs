//! Log-mel filterbank features.

use std::f64::consts::PI;
use std::sync::Arc;

use rustfft::num_complex::Complex;
use rustfft::{Fft, FftPlanner};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::Tensor;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MelConfig {
    pub sample_rate: u32,
    pub n_mels: usize,
    /// Window length in samples.
    pub window: usize,
    /// Hop length in samples.
    pub hop: usize,
    /// FFT size; the window is zero-padded up to it.
    pub n_fft: usize,
    pub fmin: f64,
    pub fmax: f64,
    /// Added before the logarithm.
    pub log_offset: f64,
}

impl Default for MelConfig {
    fn default() -> Self {
        MelConfig {
            sample_rate: 16_000,
            n_mels: 64,
            window: 256,
            hop: 160,
            n_fft: 256,
            fmin: 50.0,
            fmax: 8000.0,
            log_offset: 1e-10,
        }
    }
}

impl MelConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::InvalidArgument(format!("mel config: {m}")));
        if self.n_mels == 0 {
            return bad("n_mels must be at least 1");
        }
        if self.hop == 0 || self.hop > self.window {
            return bad("hop must be in 1..=window");
        }
        if self.n_fft < self.window {
            return bad("n_fft must be at least the window length");
        }
        if !(self.fmin >= 0.0 && self.fmin < self.fmax && self.fmax <= f64::from(self.sample_rate) / 2.0) {
            return bad("need 0 <= fmin < fmax <= sample_rate / 2");
        }
        if self.log_offset.is_nan() || self.log_offset <= 0.0 {
            return bad("log offset must be positive");
        }
        Ok(())
    }

    /// `1 + floor((len - window) / hop)`, or 0 when shorter than a window.
    pub fn frame_count(&self, samples: usize) -> usize {
        if samples < self.window {
            0
        } else {
            1 + (samples - self.window) / self.hop
        }
    }

    pub fn frames_per_second(&self) -> f64 {
        f64::from(self.sample_rate) / self.hop as f64
    }
}

pub fn hz_to_mel(hz: f64) -> f64 {
    2595.0 * (1.0 + hz / 700.0).log10()
}

pub fn mel_to_hz(mel: f64) -> f64 {
    700.0 * (10f64.powf(mel / 2595.0) - 1.0)
}

/// Feature extractor holding the window, filterbank and FFT plan.
pub struct LogMel {
    config: MelConfig,
    window: Vec<f64>,
    /// `n_mels x (n_fft / 2 + 1)`, row-major.
    filters: Vec<f64>,
    centers: Vec<f64>,
    fft: Arc<dyn Fft<f64>>,
}

impl LogMel {
    pub fn new(config: MelConfig) -> Result<Self> {
        config.validate()?;
        let window = (0..config.window)
            .map(|n| 0.5 - 0.5 * (2.0 * PI * n as f64 / config.window as f64).cos())
            .collect();
        let bins = config.n_fft / 2 + 1;
        let (lo, hi) = (hz_to_mel(config.fmin), hz_to_mel(config.fmax));
        let edges: Vec<f64> = (0..config.n_mels + 2)
            .map(|i| mel_to_hz(lo + (hi - lo) * i as f64 / (config.n_mels + 1) as f64))
            .collect();
        let bin_hz = f64::from(config.sample_rate) / config.n_fft as f64;
        let mut filters = vec![0.0; config.n_mels * bins];
        for m in 0..config.n_mels {
            let (l, c, r) = (edges[m], edges[m + 1], edges[m + 2]);
            for k in 0..bins {
                let f = k as f64 * bin_hz;
                let w = ((f - l) / (c - l)).min((r - f) / (r - c));
                filters[m * bins + k] = w.max(0.0);
            }
        }
        let fft = FftPlanner::new().plan_fft_forward(config.n_fft);
        Ok(LogMel {
            centers: edges[1..=config.n_mels].to_vec(),
            config,
            window,
            filters,
            fft,
        })
    }

    pub fn config(&self) -> &MelConfig {
        &self.config
    }

    /// Center frequency of every band in Hz.
    pub fn center_frequencies(&self) -> &[f64] {
        &self.centers
    }

    /// Filter weights of band `m` over the FFT bins.
    pub fn filter(&self, m: usize) -> &[f64] {
        let bins = self.config.n_fft / 2 + 1;
        &self.filters[m * bins..(m + 1) * bins]
    }

    /// `T x n_mels` log-mel energies of a mono waveform at the configured
    /// sample rate.
    pub fn compute(&self, samples: &[f64]) -> Result<Tensor> {
        let cfg = &self.config;
        let frames = cfg.frame_count(samples.len());
        if frames == 0 {
            return Err(Error::InvalidArgument(format!(
                "waveform of {} samples is shorter than one {}-sample window",
                samples.len(),
                cfg.window
            )));
        }
        let bins = cfg.n_fft / 2 + 1;
        let mut out = Vec::with_capacity(frames * cfg.n_mels);
        let mut buf = vec![Complex::new(0.0, 0.0); cfg.n_fft];
        let mut scratch = vec![Complex::new(0.0, 0.0); self.fft.get_inplace_scratch_len()];
        let mut power = vec![0.0; bins];
        for t in 0..frames {
            let start = t * cfg.hop;
            for (b, (x, w)) in buf
                .iter_mut()
                .zip(samples[start..start + cfg.window].iter().zip(&self.window))
            {
                *b = Complex::new(x * w, 0.0);
            }
            buf[cfg.window..].fill(Complex::new(0.0, 0.0));
            self.fft.process_with_scratch(&mut buf, &mut scratch);
            for (p, z) in power.iter_mut().zip(&buf) {
                *p = z.norm_sqr();
            }
            for m in 0..cfg.n_mels {
                let e: f64 = self.filter(m).iter().zip(&power).map(|(w, p)| w * p).sum();
                out.push((e + cfg.log_offset).ln());
            }
        }
        Tensor::new(vec![frames, cfg.n_mels], out)
    }
}

/// Log-mel features with the default configuration.
pub fn logmel(samples: &[f64]) -> Result<Tensor> {
    LogMel::new(MelConfig::default())?.compute(samples)
}

/// Zero-pads at the end or center-crops a `T x F` feature map to `target`
/// rows.
pub fn pad_or_crop(features: &Tensor, target: usize) -> Result<Tensor> {
    if features.rank() != 2 {
        return Err(Error::Shape(format!(
            "expected T x F features, got {:?}",
            features.shape()
        )));
    }
    let (t, f) = (features.rows(), features.cols());
    let data = if t <= target {
        let mut d = features.data().to_vec();
        d.resize(target * f, 0.0);
        d
    } else {
        let start = (t - target) / 2;
        features.data()[start * f..(start + target) * f].to_vec()
    };
    Tensor::new(vec![target, f], data)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn ten_seconds_give_999_frames() {
        let x = vec![0.0; 160_000];
        let m = logmel(&x).unwrap();
        assert_eq!(m.shape(), &[999, 64]);
        let floor = 1e-10f64.ln();
        assert!(m.data().iter().all(|&v| v == floor));
    }

    #[test]
    fn tone_peaks_in_its_band() {
        let lm = LogMel::new(MelConfig::default()).unwrap();
        let x: Vec<f64> = (0..16_000)
            .map(|n| (2.0 * PI * 1000.0 * n as f64 / 16_000.0).sin())
            .collect();
        let m = lm.compute(&x).unwrap();
        let band = lm
            .center_frequencies()
            .iter()
            .enumerate()
            .min_by(|a, b| (a.1 - 1000.0).abs().total_cmp(&(b.1 - 1000.0).abs()))
            .unwrap()
            .0;
        for t in 0..m.rows() {
            let row = m.row(t);
            let argmax = (0..row.len()).max_by(|&a, &b| row[a].total_cmp(&row[b])).unwrap();
            assert_eq!(argmax, band, "frame {t}");
        }
    }

    #[test]
    fn every_filter_covers_a_bin() {
        let lm = LogMel::new(MelConfig::default()).unwrap();
        for m in 0..64 {
            assert!(lm.filter(m).iter().any(|&w| w > 0.0), "band {m} is empty");
        }
        assert!((mel_to_hz(hz_to_mel(1234.5)) - 1234.5).abs() < 1e-9);
    }

    #[test]
    fn short_input_is_rejected() {
        assert!(logmel(&[0.0; 255]).is_err());
        assert_eq!(logmel(&[0.0; 256]).unwrap().rows(), 1);
    }

    #[test]
    fn pad_and_crop_examples() {
        let rows = |t: usize| Tensor::new(vec![t, 2], (0..t * 2).map(|v| v as f64).collect()).unwrap();
        let p = pad_or_crop(&rows(999), 1024).unwrap();
        assert_eq!(p.shape(), &[1024, 2]);
        assert_eq!(p.row(998), rows(999).row(998));
        assert!(p.data()[999 * 2..].iter().all(|&v| v == 0.0));
        assert_eq!(pad_or_crop(&rows(1024), 1024).unwrap(), rows(1024));
        let c = pad_or_crop(&rows(1100), 1024).unwrap();
        assert_eq!(c.row(0), rows(1100).row(38));
        assert_eq!(c.row(1023), rows(1100).row(1061));
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(32))]
        #[test]
        fn frame_count_matches_formula(len in 256usize..6000) {
            let x: Vec<f64> = (0..len).map(|i| ((i * 7919) % 13) as f64 / 13.0 - 0.5).collect();
            let m = logmel(&x).unwrap();
            prop_assert_eq!(m.rows(), 1 + (len - 256) / 160);
            prop_assert!(m.is_finite());
        }
    }
}
