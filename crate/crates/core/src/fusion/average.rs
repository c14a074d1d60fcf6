use crate::data::ScoreMatrix;
use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Elementwise mean of raw audio and visual probabilities.
pub fn average_fuse(audio: &ScoreMatrix, visual: &ScoreMatrix) -> Result<Tensor> {
    if audio.shape() != visual.shape() {
        return Err(Error::Shape(format!(
            "audio {:?} vs visual {:?}",
            audio.shape(),
            visual.shape()
        )));
    }
    audio.zip_map(visual, |a, v| (a + v) / 2.0)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn examples() {
        let h = Tensor::from_rows(&[vec![0.1, 0.7]]).unwrap();
        assert_eq!(average_fuse(&h, &h).unwrap(), h);
        let a = Tensor::vector(vec![0.2]);
        let v = Tensor::vector(vec![0.8]);
        assert_eq!(average_fuse(&a, &v).unwrap().data(), &[0.5]);
        assert!(average_fuse(&a, &Tensor::zeros(&[2])).is_err());
    }

    proptest! {
        #[test]
        fn symmetric_mean_in_unit_interval(pairs in prop::collection::vec((0.0f64..=1.0, 0.0f64..=1.0), 1..40)) {
            let a = Tensor::vector(pairs.iter().map(|p| p.0).collect());
            let v = Tensor::vector(pairs.iter().map(|p| p.1).collect());
            let f = average_fuse(&a, &v).unwrap();
            prop_assert_eq!(&f, &average_fuse(&v, &a).unwrap());
            for ((x, y), m) in pairs.iter().map(|p| (p.0, p.1)).zip(f.data()) {
                prop_assert!((m - (x + y) / 2.0).abs() <= 1e-15);
                prop_assert!((0.0..=1.0).contains(m));
            }
        }
    }
}
