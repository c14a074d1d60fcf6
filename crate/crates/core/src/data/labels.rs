use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// `N x C` real-valued scores: model outputs or normalized features.
pub type ScoreMatrix = Tensor;

/// `N x C` binary weak labels.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct LabelMatrix {
    rows: usize,
    cols: usize,
    data: Vec<u8>,
}

impl LabelMatrix {
    pub fn new(rows: usize, cols: usize, data: Vec<u8>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(Error::Shape(format!(
                "label matrix {rows}x{cols} needs {} values, got {}",
                rows * cols,
                data.len()
            )));
        }
        if let Some(bad) = data.iter().find(|&&v| v > 1) {
            return Err(Error::InvalidTarget(f64::from(*bad)));
        }
        Ok(LabelMatrix { rows, cols, data })
    }

    pub fn zeros(rows: usize, cols: usize) -> Self {
        LabelMatrix {
            rows,
            cols,
            data: vec![0; rows * cols],
        }
    }

    /// Multi-hot rows from per-recording class index lists.
    pub fn from_indices(lists: &[Vec<usize>], cols: usize) -> Result<Self> {
        let mut m = LabelMatrix::zeros(lists.len(), cols);
        for (i, list) in lists.iter().enumerate() {
            for &c in list {
                if c >= cols {
                    return Err(Error::InvalidArgument(format!(
                        "class index {c} out of range for {cols} classes"
                    )));
                }
                m.set(i, c, true);
            }
        }
        Ok(m)
    }

    /// Converts a tensor of exact 0/1 values.
    pub fn from_tensor(t: &Tensor) -> Result<Self> {
        if t.rank() != 2 {
            return Err(Error::Shape(format!("labels must be rank 2, got {:?}", t.shape())));
        }
        let data = t
            .data()
            .iter()
            .map(|&v| match v {
                0.0 => Ok(0),
                1.0 => Ok(1),
                other => Err(Error::InvalidTarget(other)),
            })
            .collect::<Result<_>>()?;
        Ok(LabelMatrix {
            rows: t.rows(),
            cols: t.cols(),
            data,
        })
    }

    pub fn to_tensor(&self) -> Tensor {
        Tensor::new(
            vec![self.rows, self.cols],
            self.data.iter().map(|&v| f64::from(v)).collect(),
        )
        .expect("shape matches data")
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn data(&self) -> &[u8] {
        &self.data
    }

    pub fn get(&self, i: usize, c: usize) -> bool {
        self.data[i * self.cols + c] == 1
    }

    pub fn set(&mut self, i: usize, c: usize, on: bool) {
        self.data[i * self.cols + c] = u8::from(on);
    }

    pub fn column(&self, c: usize) -> Vec<bool> {
        (0..self.rows).map(|i| self.get(i, c)).collect()
    }

    pub fn row_indices(&self, i: usize) -> Vec<usize> {
        (0..self.cols).filter(|&c| self.get(i, c)).collect()
    }

    pub fn positives(&self, c: usize) -> usize {
        (0..self.rows).filter(|&i| self.get(i, c)).count()
    }

    pub fn select_rows(&self, idx: &[usize]) -> LabelMatrix {
        let mut data = Vec::with_capacity(idx.len() * self.cols);
        for &i in idx {
            data.extend_from_slice(&self.data[i * self.cols..(i + 1) * self.cols]);
        }
        LabelMatrix {
            rows: idx.len(),
            cols: self.cols,
            data,
        }
    }
}
