//! JSON-lines manifests, one recording per line:
//!
//! ```text
//! {"id": "rec001", "labels": [0, 17], "split": "train", "wav": "a/rec001.wav"}
//! ```
//!
//! `split` and the artifact paths (`wav`, `frames`, `scores`) are optional.

use std::collections::HashSet;
use std::fs::File;
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::LabelMatrix;
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SplitTag {
    Train,
    Val,
    Eval,
}

impl SplitTag {
    pub fn name(self) -> &'static str {
        match self {
            SplitTag::Train => "train",
            SplitTag::Val => "val",
            SplitTag::Eval => "eval",
        }
    }
}

impl std::str::FromStr for SplitTag {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        [SplitTag::Train, SplitTag::Val, SplitTag::Eval]
            .into_iter()
            .find(|t| t.name() == s)
            .ok_or_else(|| Error::InvalidArgument(format!("unknown split `{s}`")))
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Record {
    pub id: String,
    #[serde(default)]
    pub labels: Vec<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub split: Option<SplitTag>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub wav: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub frames: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub scores: Option<PathBuf>,
}

impl Record {
    pub fn new(id: impl Into<String>, labels: Vec<usize>) -> Self {
        Record {
            id: id.into(),
            labels,
            split: None,
            wav: None,
            frames: None,
            scores: None,
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct Manifest {
    pub records: Vec<Record>,
}

impl Manifest {
    pub fn new(records: Vec<Record>) -> Result<Self> {
        let m = Manifest { records };
        m.check_ids()?;
        Ok(m)
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    fn check_ids(&self) -> Result<()> {
        let mut seen = HashSet::new();
        for (i, r) in self.records.iter().enumerate() {
            if !seen.insert(r.id.as_str()) {
                return Err(Error::Manifest {
                    line: i + 1,
                    message: format!("duplicate id `{}`", r.id),
                });
            }
        }
        Ok(())
    }

    /// Checks every class index against `classes`.
    pub fn validate(&self, classes: usize) -> Result<()> {
        for (i, r) in self.records.iter().enumerate() {
            if let Some(&c) = r.labels.iter().find(|&&c| c >= classes) {
                return Err(Error::Manifest {
                    line: i + 1,
                    message: format!("class index {c} out of range for {classes} classes"),
                });
            }
        }
        Ok(())
    }

    /// Largest class index plus one.
    pub fn inferred_classes(&self) -> usize {
        self.records
            .iter()
            .flat_map(|r| r.labels.iter())
            .max()
            .map_or(0, |&c| c + 1)
    }

    pub fn labels(&self, classes: usize) -> Result<LabelMatrix> {
        self.validate(classes)?;
        let lists: Vec<Vec<usize>> = self.records.iter().map(|r| r.labels.clone()).collect();
        LabelMatrix::from_indices(&lists, classes)
    }

    pub fn ids(&self) -> Vec<String> {
        self.records.iter().map(|r| r.id.clone()).collect()
    }

    /// Records carrying the given split tag.
    pub fn subset(&self, tag: SplitTag) -> Manifest {
        Manifest {
            records: self.records.iter().filter(|r| r.split == Some(tag)).cloned().collect(),
        }
    }

    pub fn parse(text: &str) -> Result<Self> {
        let mut records = Vec::new();
        for (i, line) in text.lines().enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let r: Record = serde_json::from_str(line).map_err(|e| Error::Manifest {
                line: i + 1,
                message: e.to_string(),
            })?;
            records.push(r);
        }
        Manifest::new(records)
    }

    pub fn to_jsonl(&self) -> String {
        let mut out = String::new();
        for r in &self.records {
            out.push_str(&serde_json::to_string(r).expect("record serializes"));
            out.push('\n');
        }
        out
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let f = File::open(path).map_err(|e| Error::file(path, e))?;
        let mut text = String::new();
        for line in BufReader::new(f).lines() {
            text.push_str(&line?);
            text.push('\n');
        }
        Manifest::parse(&text)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let mut f = File::create(path).map_err(|e| Error::file(path, e))?;
        f.write_all(self.to_jsonl().as_bytes())?;
        Ok(())
    }
}
