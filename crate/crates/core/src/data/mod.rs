//! Manifests, splits, matrix files and the synthetic benchmark.

mod io;
mod labels;
mod manifest;
mod split;
mod synth;

pub use io::{read_labels, read_scores, write_labels, write_scores, BenchmarkSplit, SPLIT_NAMES};
pub use labels::{LabelMatrix, ScoreMatrix};
pub use manifest::{Manifest, Record, SplitTag};
pub use split::{split, split_counts};
pub use synth::{ClassKind, SyntheticData, SyntheticSpec};
