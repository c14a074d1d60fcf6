//! Score and label matrices on disk, plus the benchmark directory layout
//! `<dir>/{train,val,eval}/{audio,visual,labels}.avf`.

use std::fs;
use std::path::Path;

use super::{LabelMatrix, ScoreMatrix};
use crate::checkpoint::Archive;
use crate::error::{Error, Result};

pub const SPLIT_NAMES: [&str; 3] = ["train", "val", "eval"];

fn check_matrix(name: &str, t: &ScoreMatrix) -> Result<()> {
    if t.rank() != 2 {
        return Err(Error::Shape(format!(
            "{name}: expected an N x C matrix, got {:?}",
            t.shape()
        )));
    }
    Ok(())
}

pub fn write_scores(path: impl AsRef<Path>, scores: &ScoreMatrix) -> Result<()> {
    check_matrix("scores", scores)?;
    let mut a = Archive::new();
    a.put_tensor("scores", scores);
    a.save(path)
}

pub fn read_scores(path: impl AsRef<Path>) -> Result<ScoreMatrix> {
    let t = Archive::load(path)?.tensor("scores")?;
    check_matrix("scores", &t)?;
    Ok(t)
}

pub fn write_labels(path: impl AsRef<Path>, labels: &LabelMatrix) -> Result<()> {
    let mut a = Archive::new();
    a.put_labels("labels", labels);
    a.save(path)
}

pub fn read_labels(path: impl AsRef<Path>) -> Result<LabelMatrix> {
    Archive::load(path)?.labels("labels")
}

/// Aligned audio scores, visual scores and labels for one split.
#[derive(Clone, Debug, PartialEq)]
pub struct BenchmarkSplit {
    pub audio: ScoreMatrix,
    pub visual: ScoreMatrix,
    pub labels: LabelMatrix,
}

impl BenchmarkSplit {
    pub fn new(audio: ScoreMatrix, visual: ScoreMatrix, labels: LabelMatrix) -> Result<Self> {
        check_matrix("audio", &audio)?;
        check_matrix("visual", &visual)?;
        let want = [labels.rows(), labels.cols()];
        if audio.shape() != want || visual.shape() != want {
            return Err(Error::Shape(format!(
                "audio {:?}, visual {:?}, labels {want:?}",
                audio.shape(),
                visual.shape()
            )));
        }
        Ok(BenchmarkSplit { audio, visual, labels })
    }

    pub fn len(&self) -> usize {
        self.labels.rows()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn classes(&self) -> usize {
        self.labels.cols()
    }

    pub fn save(&self, dir: impl AsRef<Path>) -> Result<()> {
        let dir = dir.as_ref();
        fs::create_dir_all(dir).map_err(|e| Error::file(dir, e))?;
        write_scores(dir.join("audio.avf"), &self.audio)?;
        write_scores(dir.join("visual.avf"), &self.visual)?;
        write_labels(dir.join("labels.avf"), &self.labels)
    }

    pub fn load(dir: impl AsRef<Path>) -> Result<Self> {
        let dir = dir.as_ref();
        BenchmarkSplit::new(
            read_scores(dir.join("audio.avf"))?,
            read_scores(dir.join("visual.avf"))?,
            read_labels(dir.join("labels.avf"))?,
        )
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::Tensor;

    #[test]
    fn matrices_round_trip_through_files() {
        let dir = tempfile::tempdir().unwrap();
        let audio = Tensor::from_rows(&[vec![0.1, 0.9], vec![1.0 / 3.0, 0.0]]).unwrap();
        let visual = Tensor::from_rows(&[vec![0.5, 0.25], vec![0.75, 1e-300]]).unwrap();
        let labels = LabelMatrix::new(2, 2, vec![0, 1, 1, 0]).unwrap();
        let split = BenchmarkSplit::new(audio, visual, labels).unwrap();
        split.save(dir.path().join("train")).unwrap();
        assert_eq!(BenchmarkSplit::load(dir.path().join("train")).unwrap(), split);
    }

    #[test]
    fn misaligned_split_is_rejected() {
        let a = Tensor::zeros(&[2, 3]);
        let v = Tensor::zeros(&[3, 3]);
        assert!(BenchmarkSplit::new(a, v, LabelMatrix::zeros(2, 3)).is_err());
    }

    #[test]
    fn missing_file_is_a_file_error() {
        let err = read_scores("/nonexistent/x.avf").unwrap_err();
        assert!(matches!(err, Error::File { .. }));
    }
}
