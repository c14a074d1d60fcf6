//! Ranking metrics for multi-label evaluation.
//!
//! AP is the non-interpolated average precision: sort by descending score,
//! then average precision@k over the ranks k that hold a positive. Equal
//! scores keep their original order (stable sort), so ties are broken by
//! index. AUC uses the Mann-Whitney form with half credit for ties.

pub mod analysis;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::data::{LabelMatrix, ScoreMatrix};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Error)]
pub enum MetricError {
    #[error("scores and labels differ in length ({scores} vs {labels})")]
    LengthMismatch { scores: usize, labels: usize },
    #[error("class has no positive examples")]
    NoPositives,
    #[error("class has no negative examples")]
    NoNegatives,
}

impl From<MetricError> for Error {
    fn from(e: MetricError) -> Self {
        Error::Shape(e.to_string())
    }
}

fn check_lengths(scores: &[f64], labels: &[bool]) -> Result<(), MetricError> {
    if scores.len() != labels.len() {
        return Err(MetricError::LengthMismatch {
            scores: scores.len(),
            labels: labels.len(),
        });
    }
    Ok(())
}

/// Non-interpolated average precision of one class.
pub fn average_precision(scores: &[f64], labels: &[bool]) -> Result<f64, MetricError> {
    check_lengths(scores, labels)?;
    let positives = labels.iter().filter(|&&l| l).count();
    if positives == 0 {
        return Err(MetricError::NoPositives);
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]));
    let mut hits = 0usize;
    let mut sum = Compensated::default();
    for (rank, &i) in order.iter().enumerate() {
        if labels[i] {
            hits += 1;
            sum.add_ratio(hits as f64, (rank + 1) as f64);
        }
    }
    Ok(sum.value() / positives as f64)
}

/// Neumaier summation of `a / b` terms that also carries each quotient's
/// rounding residual, so small cases such as `1/1 + 2/3` round once.
#[derive(Default)]
struct Compensated {
    sum: f64,
    carry: f64,
}

impl Compensated {
    fn add(&mut self, x: f64) {
        let t = self.sum + x;
        self.carry += if self.sum.abs() >= x.abs() {
            (self.sum - t) + x
        } else {
            (x - t) + self.sum
        };
        self.sum = t;
    }

    fn add_ratio(&mut self, a: f64, b: f64) {
        let q = a / b;
        self.add(q);
        self.add((-q).mul_add(b, a) / b);
    }

    fn value(&self) -> f64 {
        self.sum + self.carry
    }
}

/// Area under the ROC curve: `(concordant + ties / 2) / (P * N)`.
pub fn auc(scores: &[f64], labels: &[bool]) -> Result<f64, MetricError> {
    check_lengths(scores, labels)?;
    let pos = labels.iter().filter(|&&l| l).count();
    let neg = labels.len() - pos;
    if pos == 0 {
        return Err(MetricError::NoPositives);
    }
    if neg == 0 {
        return Err(MetricError::NoNegatives);
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]));
    // Mid-ranks (1-based) over tie groups; the positive rank sum gives U.
    let mut rank_sum_pos = 0.0;
    let mut start = 0;
    while start < order.len() {
        let mut end = start + 1;
        while end < order.len() && scores[order[end]] == scores[order[start]] {
            end += 1;
        }
        let mid_rank = (start + 1 + end) as f64 / 2.0;
        let group_pos = order[start..end].iter().filter(|&&i| labels[i]).count();
        rank_sum_pos += mid_rank * group_pos as f64;
        start = end;
    }
    let p = pos as f64;
    let u = rank_sum_pos - p * (p + 1.0) / 2.0;
    Ok(u / (p * neg as f64))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClassMetrics {
    pub class: usize,
    pub positives: usize,
    /// `None` when the class has no positives.
    pub ap: Option<f64>,
    /// `None` when the class lacks positives or negatives.
    pub auc: Option<f64>,
}

/// Per-class AP/AUC and their means over the non-degenerate classes.
#[derive(Clone, Debug, PartialEq)]
pub struct EvalReport {
    pub classes: Vec<ClassMetrics>,
    /// Mean AP over classes with a defined AP, as a fraction in `[0, 1]`.
    pub mean_ap: f64,
    pub mean_auc: f64,
    pub excluded_ap: Vec<usize>,
    pub excluded_auc: Vec<usize>,
}

impl EvalReport {
    /// mAP in points (x100), the convention of published AudioSet tables.
    pub fn map(&self) -> f64 {
        100.0 * self.mean_ap
    }

    pub fn mauc(&self) -> f64 {
        100.0 * self.mean_auc
    }

    pub fn ap_vector(&self) -> Vec<Option<f64>> {
        self.classes.iter().map(|c| c.ap).collect()
    }

    /// JSON form: mAP/mAUC in points rounded to 4 decimals.
    pub fn to_json(&self) -> serde_json::Value {
        let round4 = |x: f64| (x * 1e4).round() / 1e4;
        serde_json::json!({
            "map": round4(self.map()),
            "mauc": round4(self.mauc()),
            "num_classes": self.classes.len(),
            "excluded_ap": self.excluded_ap,
            "excluded_auc": self.excluded_auc,
            "classes": self.classes.iter().map(|c| serde_json::json!({
                "class": c.class,
                "positives": c.positives,
                "ap": c.ap.map(round_fixed),
                "auc": c.auc.map(round_fixed),
            })).collect::<Vec<_>>(),
        })
    }
}

fn round_fixed(x: f64) -> f64 {
    (x * 1e6).round() / 1e6
}

/// Scores every class of `scores` against `labels`.
pub fn evaluate(scores: &ScoreMatrix, labels: &LabelMatrix) -> Result<EvalReport> {
    if scores.rank() != 2 || scores.rows() != labels.rows() || scores.cols() != labels.cols() {
        return Err(Error::Shape(format!(
            "scores {:?} vs labels {}x{}",
            scores.shape(),
            labels.rows(),
            labels.cols()
        )));
    }
    let mut classes = Vec::with_capacity(labels.cols());
    let (mut excluded_ap, mut excluded_auc) = (Vec::new(), Vec::new());
    for c in 0..labels.cols() {
        let s = scores.column(c);
        let l = labels.column(c);
        let ap = average_precision(&s, &l).ok();
        let auc = auc(&s, &l).ok();
        if ap.is_none() {
            excluded_ap.push(c);
        }
        if auc.is_none() {
            excluded_auc.push(c);
        }
        classes.push(ClassMetrics {
            class: c,
            positives: l.iter().filter(|&&x| x).count(),
            ap,
            auc,
        });
    }
    let mean = |xs: Vec<f64>| {
        if xs.is_empty() {
            f64::NAN
        } else {
            xs.iter().sum::<f64>() / xs.len() as f64
        }
    };
    let mean_ap = mean(classes.iter().filter_map(|c| c.ap).collect());
    let mean_auc = mean(classes.iter().filter_map(|c| c.auc).collect());
    Ok(EvalReport {
        classes,
        mean_ap,
        mean_auc,
        excluded_ap,
        excluded_auc,
    })
}

/// Mean AP over classes with at least one positive, or `None` if there are
/// none. Used for validation-based model selection.
pub fn mean_average_precision(scores: &ScoreMatrix, labels: &LabelMatrix) -> Result<Option<f64>> {
    let report = evaluate(scores, labels)?;
    Ok((report.excluded_ap.len() < report.classes.len()).then_some(report.mean_ap))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::Tensor;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    /// Definitional AP: rank of item i counts every item ordered before it
    /// (higher score, or equal score and lower index) plus itself.
    fn oracle_ap(scores: &[f64], labels: &[bool]) -> f64 {
        let n = scores.len();
        let ahead = |i: usize, j: usize| scores[j] > scores[i] || (scores[j] == scores[i] && j < i);
        let mut total = 0.0;
        let mut p = 0;
        for i in 0..n {
            if !labels[i] {
                continue;
            }
            p += 1;
            let rank = 1 + (0..n).filter(|&j| ahead(i, j)).count();
            let pos_at_or_above = 1 + (0..n).filter(|&j| labels[j] && ahead(i, j)).count();
            total += pos_at_or_above as f64 / rank as f64;
        }
        total / p as f64
    }

    /// Pair enumeration.
    fn oracle_auc(scores: &[f64], labels: &[bool]) -> f64 {
        let (mut credit, mut pairs) = (0.0, 0.0);
        for i in 0..scores.len() {
            for j in 0..scores.len() {
                if labels[i] && !labels[j] {
                    pairs += 1.0;
                    if scores[i] > scores[j] {
                        credit += 1.0;
                    } else if scores[i] == scores[j] {
                        credit += 0.5;
                    }
                }
            }
        }
        credit / pairs
    }

    #[test]
    fn worked_example() {
        let s = [0.9, 0.8, 0.1];
        let l = [true, false, true];
        assert_eq!(average_precision(&s, &l).unwrap(), 5.0 / 6.0);
        assert_eq!(auc(&s, &l).unwrap(), 0.5);
    }

    #[test]
    fn perfect_and_constant_rankings() {
        let s = [0.9, 0.7, 0.3, 0.1];
        let l = [true, true, false, false];
        assert_eq!(average_precision(&s, &l).unwrap(), 1.0);
        assert_eq!(auc(&s, &l).unwrap(), 1.0);
        assert_eq!(auc(&[0.4; 4], &l).unwrap(), 0.5);
    }

    #[test]
    fn degenerate_classes_are_flagged() {
        assert_eq!(
            average_precision(&[0.1, 0.2], &[false, false]),
            Err(MetricError::NoPositives)
        );
        assert_eq!(auc(&[0.1, 0.2], &[true, true]), Err(MetricError::NoNegatives));
        assert!(matches!(
            average_precision(&[0.1], &[true, false]),
            Err(MetricError::LengthMismatch { .. })
        ));
    }

    #[test]
    fn oracles_agree_on_random_instances_with_ties() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..1000 {
            let n = rng.random_range(2..=50);
            // Coarse score grid forces frequent ties.
            let s: Vec<f64> = (0..n).map(|_| f64::from(rng.random_range(0..8u8)) / 8.0).collect();
            let mut l: Vec<bool> = (0..n).map(|_| rng.random_bool(0.4)).collect();
            l[0] = true;
            l[1] = false;
            assert!((average_precision(&s, &l).unwrap() - oracle_ap(&s, &l)).abs() < 1e-12);
            assert!((auc(&s, &l).unwrap() - oracle_auc(&s, &l)).abs() < 1e-12);
        }
    }

    #[test]
    fn single_class_evaluate_reduces_to_scalar_metrics() {
        let scores = Tensor::new(vec![3, 1], vec![0.9, 0.8, 0.1]).unwrap();
        let labels = LabelMatrix::new(3, 1, vec![1, 0, 1]).unwrap();
        let r = evaluate(&scores, &labels).unwrap();
        assert_eq!(r.mean_ap, 5.0 / 6.0);
        assert_eq!(r.mean_auc, 0.5);
        assert!((r.map() - 83.3333).abs() < 1e-3);
    }

    #[test]
    fn report_means_skip_excluded_classes() {
        let scores = Tensor::new(vec![2, 3], vec![0.9, 0.1, 0.5, 0.2, 0.8, 0.5]).unwrap();
        let labels = LabelMatrix::new(2, 3, vec![1, 0, 0, 0, 1, 0]).unwrap();
        let r = evaluate(&scores, &labels).unwrap();
        assert_eq!(r.excluded_ap, vec![2]);
        assert_eq!(r.excluded_auc, vec![2]);
        assert_eq!(r.mean_ap, 1.0);
        let json = r.to_json();
        assert_eq!(json["map"], 100.0);
    }

    proptest! {
        #[test]
        fn invariant_under_monotone_transform(
            s in prop::collection::vec(-5.0f64..5.0, 2..40),
            bits in any::<u64>(),
        ) {
            let mut l: Vec<bool> = (0..s.len()).map(|i| (bits >> (i % 64)) & 1 == 1).collect();
            l[0] = true;
            l[1] = false;
            let t: Vec<f64> = s.iter().map(|x| (2.0 * x).exp() + 3.0).collect();
            prop_assert!((average_precision(&s, &l).unwrap() - average_precision(&t, &l).unwrap()).abs() < 1e-12);
            prop_assert!((auc(&s, &l).unwrap() - auc(&t, &l).unwrap()).abs() < 1e-12);
        }

        #[test]
        fn report_invariant_under_row_permutation(seed in any::<u64>()) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let (n, c) = (20, 3);
            let scores = Tensor::new(vec![n, c], (0..n * c).map(|_| rng.random::<f64>()).collect()).unwrap();
            let labels = LabelMatrix::new(n, c, (0..n * c).map(|_| u8::from(rng.random_bool(0.3))).collect()).unwrap();
            let mut perm: Vec<usize> = (0..n).collect();
            rand::seq::SliceRandom::shuffle(perm.as_mut_slice(), &mut rng);
            let a = evaluate(&scores, &labels).unwrap();
            let b = evaluate(&scores.select_rows(&perm), &labels.select_rows(&perm)).unwrap();
            prop_assert!((a.mean_ap - b.mean_ap).abs() < 1e-12 || (a.mean_ap.is_nan() && b.mean_ap.is_nan()));
            prop_assert!((a.mean_auc - b.mean_auc).abs() < 1e-12 || (a.mean_auc.is_nan() && b.mean_auc.is_nan()));
        }
    }

    #[test]
    fn random_ranking_ap_approaches_prevalence() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let n = 100;
        let labels: Vec<bool> = (0..n).map(|i| i % 5 == 0).collect();
        let prevalence = 0.2;
        let aps: Vec<f64> = (0..1000)
            .map(|_| {
                let s: Vec<f64> = (0..n).map(|_| rng.random()).collect();
                average_precision(&s, &labels).unwrap()
            })
            .collect();
        let mean = aps.iter().sum::<f64>() / aps.len() as f64;
        let var = aps.iter().map(|a| (a - mean).powi(2)).sum::<f64>() / (aps.len() - 1) as f64;
        let se = (var / aps.len() as f64).sqrt();
        // At finite N a random ranking's expected AP sits above prevalence:
        // E[AP] = q + (1 - q) * H_N / N with q = (P - 1) / (N - 1).
        let (p, nn) = (20.0, n as f64);
        let h: f64 = (1..=n).map(|k| 1.0 / k as f64).sum();
        let q = (p - 1.0) / (nn - 1.0);
        let bias = q + (1.0 - q) * h / nn - prevalence;
        assert!(
            (mean - prevalence - bias).abs() < 3.0 * se,
            "mean {mean}, se {se}, bias {bias}"
        );
    }
}
