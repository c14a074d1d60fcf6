//! Deterministic train/validation assignment stratified by rarest label.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{Manifest, SplitTag};
use crate::error::{Error, Result};

/// Assigns a split tag to every record. Records already tagged `eval` keep
/// that tag; all others become `train` or `val`.
///
/// Candidates are grouped by their rarest label (unlabeled records form a
/// final group), groups are visited from rarest to most common with a
/// seeded shuffle inside each group, and every `1/fraction`-th record of
/// that ordering goes to validation from a seeded random offset. The
/// validation count is therefore `floor(n f)` or `ceil(n f)`.
pub fn split(manifest: &Manifest, val_fraction: f64, seed: u64) -> Result<Vec<SplitTag>> {
    if manifest.is_empty() {
        return Err(Error::InvalidArgument("cannot split an empty manifest".into()));
    }
    if !(val_fraction > 0.0 && val_fraction < 1.0) {
        return Err(Error::InvalidArgument(format!(
            "validation fraction {val_fraction} outside (0, 1)"
        )));
    }
    let mut tags = vec![SplitTag::Train; manifest.len()];
    let candidates: Vec<usize> = (0..manifest.len())
        .filter(|&i| manifest.records[i].split != Some(SplitTag::Eval))
        .collect();
    for (i, r) in manifest.records.iter().enumerate() {
        if r.split == Some(SplitTag::Eval) {
            tags[i] = SplitTag::Eval;
        }
    }

    let classes = manifest.inferred_classes();
    let mut freq = vec![0usize; classes];
    for &i in &candidates {
        for &c in &manifest.records[i].labels {
            freq[c] += 1;
        }
    }
    // Group key: (frequency, class) of the rarest label; unlabeled last.
    let key = |i: usize| {
        manifest.records[i]
            .labels
            .iter()
            .map(|&c| (freq[c], c))
            .min()
            .unwrap_or((usize::MAX, usize::MAX))
    };
    let mut keyed: Vec<((usize, usize), usize)> = candidates.iter().map(|&i| (key(i), i)).collect();
    keyed.sort();

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut order = Vec::with_capacity(keyed.len());
    for group in keyed.chunk_by(|a, b| a.0 == b.0) {
        let mut members: Vec<usize> = group.iter().map(|&(_, i)| i).collect();
        members.shuffle(&mut rng);
        order.extend(members);
    }

    let offset: f64 = rng.random();
    for (k, &i) in order.iter().enumerate() {
        let before = (k as f64 * val_fraction + offset).floor();
        let after = ((k + 1) as f64 * val_fraction + offset).floor();
        if after > before {
            tags[i] = SplitTag::Val;
        }
    }
    Ok(tags)
}

/// `(train, val, eval)` counts.
pub fn split_counts(tags: &[SplitTag]) -> (usize, usize, usize) {
    let n = |t| tags.iter().filter(|&&x| x == t).count();
    (n(SplitTag::Train), n(SplitTag::Val), n(SplitTag::Eval))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::Record;

    fn manifest(n: usize) -> Manifest {
        let records = (0..n)
            .map(|i| {
                let mut r = Record::new(format!("r{i}"), vec![i % 7, (i * 13) % 50]);
                if i % 10 == 0 {
                    r.split = Some(SplitTag::Eval);
                }
                r
            })
            .collect();
        Manifest::new(records).unwrap()
    }

    #[test]
    fn validation_size_is_floor_or_ceil() {
        let m = manifest(5000);
        for (f, seed) in [(0.0125, 0), (0.1, 1), (0.37, 2)] {
            let tags = split(&m, f, seed).unwrap();
            let (train, val, eval) = split_counts(&tags);
            assert_eq!(eval, 500);
            assert_eq!(train + val, 4500);
            let target = 4500.0 * f;
            assert!(
                val as f64 >= target.floor() && val as f64 <= target.ceil(),
                "{val} vs {target}"
            );
        }
    }

    #[test]
    fn rare_classes_reach_validation() {
        // Class 99 appears in exactly 10 records; a 0.1 split should put one
        // of them in validation.
        let records = (0..1000)
            .map(|i| Record::new(format!("r{i}"), if i % 100 == 0 { vec![99] } else { vec![i % 3] }))
            .collect();
        let m = Manifest::new(records).unwrap();
        let tags = split(&m, 0.1, 7).unwrap();
        let rare_val = (0..1000).filter(|i| i % 100 == 0 && tags[*i] == SplitTag::Val).count();
        assert_eq!(rare_val, 1);
    }

    #[test]
    fn deterministic_and_rejects_bad_input() {
        let m = manifest(300);
        assert_eq!(split(&m, 0.2, 3).unwrap(), split(&m, 0.2, 3).unwrap());
        assert!(split(&Manifest::default(), 0.2, 0).is_err());
        assert!(split(&m, 0.0, 0).is_err());
        assert!(split(&m, 1.0, 0).is_err());
    }
}
