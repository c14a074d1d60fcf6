use serde::{Deserialize, Serialize};

use crate::checkpoint::Archive;
use crate::data::ScoreMatrix;
use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Floor applied to standard deviations.
pub const STD_FLOOR: f64 = 1e-6;

/// Per-dimension standardization of audio and visual predictions, fit on
/// the training split.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Normalizer {
    pub audio_mean: Vec<f64>,
    pub audio_std: Vec<f64>,
    pub visual_mean: Vec<f64>,
    pub visual_std: Vec<f64>,
}

/// Population mean and standard deviation of every column.
fn column_stats(x: &ScoreMatrix) -> (Vec<f64>, Vec<f64>) {
    let (n, c) = (x.rows(), x.cols());
    let mut mean = vec![0.0; c];
    for i in 0..n {
        for (m, v) in mean.iter_mut().zip(x.row(i)) {
            *m += v;
        }
    }
    mean.iter_mut().for_each(|m| *m /= n as f64);
    let mut var = vec![0.0; c];
    for i in 0..n {
        for ((s, v), m) in var.iter_mut().zip(x.row(i)).zip(&mean) {
            *s += (v - m) * (v - m);
        }
    }
    let std = var.into_iter().map(|s| (s / n as f64).sqrt()).collect();
    (mean, std)
}

fn standardize(x: &ScoreMatrix, mean: &[f64], std: &[f64], what: &str) -> Result<Tensor> {
    if x.rank() != 2 || x.cols() != mean.len() {
        return Err(Error::Shape(format!(
            "{what} predictions {:?} vs normalizer of {} classes",
            x.shape(),
            mean.len()
        )));
    }
    let c = mean.len();
    let data = x
        .data()
        .iter()
        .enumerate()
        .map(|(k, v)| (v - mean[k % c]) / std[k % c].max(STD_FLOOR))
        .collect();
    Tensor::new(x.shape().to_vec(), data)
}

impl Normalizer {
    pub fn fit(audio: &ScoreMatrix, visual: &ScoreMatrix) -> Result<Self> {
        if audio.rank() != 2 || audio.shape() != visual.shape() {
            return Err(Error::Shape(format!(
                "audio {:?} vs visual {:?}",
                audio.shape(),
                visual.shape()
            )));
        }
        if audio.rows() < 2 {
            return Err(Error::InvalidArgument("normalizer needs at least 2 recordings".into()));
        }
        let (audio_mean, audio_std) = column_stats(audio);
        let (visual_mean, visual_std) = column_stats(visual);
        Ok(Normalizer {
            audio_mean,
            audio_std,
            visual_mean,
            visual_std,
        })
    }

    pub fn classes(&self) -> usize {
        self.audio_mean.len()
    }

    pub fn apply_audio(&self, audio: &ScoreMatrix) -> Result<Tensor> {
        standardize(audio, &self.audio_mean, &self.audio_std, "audio")
    }

    pub fn apply_visual(&self, visual: &ScoreMatrix) -> Result<Tensor> {
        standardize(visual, &self.visual_mean, &self.visual_std, "visual")
    }

    /// Normalized `[h_a, h_v]`, shape `N x 2C`.
    pub fn apply(&self, audio: &ScoreMatrix, visual: &ScoreMatrix) -> Result<Tensor> {
        Tensor::concat_cols(&self.apply_audio(audio)?, &self.apply_visual(visual)?)
    }

    pub fn store(&self, archive: &mut Archive, prefix: &str) {
        for (name, v) in [
            ("audio_mean", &self.audio_mean),
            ("audio_std", &self.audio_std),
            ("visual_mean", &self.visual_mean),
            ("visual_std", &self.visual_std),
        ] {
            archive.put_tensor(format!("{prefix}/{name}"), &Tensor::vector(v.clone()));
        }
    }

    pub fn restore(archive: &Archive, prefix: &str) -> Result<Self> {
        let get = |name: &str| archive.tensor(&format!("{prefix}/{name}")).map(Tensor::into_data);
        let n = Normalizer {
            audio_mean: get("audio_mean")?,
            audio_std: get("audio_std")?,
            visual_mean: get("visual_mean")?,
            visual_std: get("visual_std")?,
        };
        let c = n.audio_mean.len();
        if [n.audio_std.len(), n.visual_mean.len(), n.visual_std.len()] != [c; 3] {
            return Err(Error::Shape("normalizer statistics differ in length".into()));
        }
        Ok(n)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn constant_and_binary_columns() {
        let a = Tensor::from_rows(&[vec![0.3, 0.0], vec![0.3, 1.0]]).unwrap();
        let n = Normalizer::fit(&a, &a).unwrap();
        assert_eq!(n.audio_mean, vec![0.3, 0.5]);
        assert_eq!(n.audio_std[1], 0.5);
        let z = n.apply_audio(&a).unwrap();
        assert_eq!(z.column(0), vec![0.0, 0.0]);
        assert_eq!(z.column(1), vec![-1.0, 1.0]);
    }

    #[test]
    fn refit_on_normalized_data_is_standard() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(9);
        let x = Tensor::new(vec![500, 4], (0..2000).map(|_| rng.random::<f64>().powi(3)).collect()).unwrap();
        let n = Normalizer::fit(&x, &x).unwrap();
        let z = n.apply_audio(&x).unwrap();
        let again = Normalizer::fit(&z, &z).unwrap();
        for c in 0..4 {
            assert!(again.audio_mean[c].abs() < 1e-9);
            assert!((again.audio_std[c] - 1.0).abs() < 1e-9);
        }
    }

    #[test]
    fn mismatched_classes_and_tiny_sets_are_rejected() {
        let a = Tensor::zeros(&[3, 2]);
        let n = Normalizer::fit(&a, &a).unwrap();
        assert!(n.apply_audio(&Tensor::zeros(&[3, 3])).is_err());
        assert!(Normalizer::fit(&Tensor::zeros(&[1, 2]), &Tensor::zeros(&[1, 2])).is_err());
    }
}
