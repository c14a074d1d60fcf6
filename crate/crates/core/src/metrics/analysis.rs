//! Per-class comparisons between fused and single-modality models, and
//! summaries of learned attention weights. Everything here emits plain
//! numbers or CSV; plotting is left to the caller.

use std::io::Write;

use serde::Serialize;

use crate::data::{LabelMatrix, ScoreMatrix};
use crate::error::{Error, Result};

fn check_len(what: &str, a: usize, b: usize) -> Result<()> {
    if a != b {
        return Err(Error::Shape(format!("{what}: {a} vs {b} classes")));
    }
    Ok(())
}

/// `AP_fused - max(AP_audio, AP_visual)` per class.
pub fn ap_deltas(ap_fused: &[f64], ap_audio: &[f64], ap_visual: &[f64]) -> Result<Vec<f64>> {
    check_len("fused vs audio AP", ap_fused.len(), ap_audio.len())?;
    check_len("fused vs visual AP", ap_fused.len(), ap_visual.len())?;
    Ok(ap_fused
        .iter()
        .zip(ap_audio.iter().zip(ap_visual))
        .map(|(f, (a, v))| f - a.max(*v))
        .collect())
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct HistogramBin {
    /// Inclusive lower edge.
    pub lo: f64,
    /// Exclusive upper edge.
    pub hi: f64,
    pub count: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ImprovementSummary {
    pub classes: usize,
    pub improved: usize,
    pub deteriorated: usize,
    pub unchanged: usize,
    pub improved_over_10: usize,
    pub improved_over_5: usize,
    pub deteriorated_over_5: usize,
    pub deteriorated_over_10: usize,
}

impl ImprovementSummary {
    pub fn improved_fraction(&self) -> f64 {
        self.improved as f64 / self.classes as f64
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ImprovementHistogram {
    pub bin_width: f64,
    pub bins: Vec<HistogramBin>,
    pub summary: ImprovementSummary,
}

/// Histogram of per-class AP change of the fused model over the better
/// single-modality model. Bins are `[k w, (k + 1) w)` for integer `k`, so a
/// zero change lands in `[0, w)`. The ±10 and ±5 AP-point thresholds of the
/// summary are 0.10 and 0.05 in AP units.
pub fn improvement_histogram(
    ap_fused: &[f64],
    ap_audio: &[f64],
    ap_visual: &[f64],
    bin_width: f64,
) -> Result<ImprovementHistogram> {
    if !(bin_width > 0.0 && bin_width.is_finite()) {
        return Err(Error::InvalidArgument(format!("bin width {bin_width}")));
    }
    let deltas = ap_deltas(ap_fused, ap_audio, ap_visual)?;
    let index = |d: f64| (d / bin_width).floor() as i64;
    let mut bins = Vec::new();
    if let (Some(lo), Some(hi)) = (
        deltas.iter().map(|&d| index(d)).min(),
        deltas.iter().map(|&d| index(d)).max(),
    ) {
        for k in lo..=hi {
            bins.push(HistogramBin {
                lo: k as f64 * bin_width,
                hi: (k + 1) as f64 * bin_width,
                count: 0,
            });
        }
        for &d in &deltas {
            bins[(index(d) - lo) as usize].count += 1;
        }
    }
    let count = |f: &dyn Fn(f64) -> bool| deltas.iter().filter(|&&d| f(d)).count();
    let summary = ImprovementSummary {
        classes: deltas.len(),
        improved: count(&|d| d > 0.0),
        deteriorated: count(&|d| d < 0.0),
        unchanged: count(&|d| d == 0.0),
        improved_over_10: count(&|d| d > 0.10),
        improved_over_5: count(&|d| d > 0.05),
        deteriorated_over_5: count(&|d| d < -0.05),
        deteriorated_over_10: count(&|d| d < -0.10),
    };
    Ok(ImprovementHistogram {
        bin_width,
        bins,
        summary,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct AttentionSummary {
    /// Mean audio weight over the positives of each class; `None` for
    /// classes without positives.
    pub per_class: Vec<Option<f64>>,
    /// Counts of per-class means in ten equal bins over `[0, 1]`.
    pub histogram: Vec<usize>,
    pub flagged: Vec<usize>,
}

/// Mean of the audio attention weight per class over the recordings labeled
/// with that class.
pub fn mean_attention_weights(alpha_audio: &ScoreMatrix, labels: &LabelMatrix) -> Result<AttentionSummary> {
    if alpha_audio.rank() != 2 || alpha_audio.rows() != labels.rows() || alpha_audio.cols() != labels.cols() {
        return Err(Error::Shape(format!(
            "attention {:?} vs labels {}x{}",
            alpha_audio.shape(),
            labels.rows(),
            labels.cols()
        )));
    }
    let mut per_class = Vec::with_capacity(labels.cols());
    let mut flagged = Vec::new();
    let mut histogram = vec![0; 10];
    for c in 0..labels.cols() {
        let (mut sum, mut n) = (0.0, 0usize);
        for i in 0..labels.rows() {
            if labels.get(i, c) {
                sum += alpha_audio.get2(i, c);
                n += 1;
            }
        }
        if n == 0 {
            flagged.push(c);
            per_class.push(None);
        } else {
            let m = sum / n as f64;
            histogram[((m * 10.0) as usize).min(9)] += 1;
            per_class.push(Some(m));
        }
    }
    Ok(AttentionSummary {
        per_class,
        histogram,
        flagged,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct BubbleRow {
    pub class_id: usize,
    pub ap_audio: f64,
    pub ap_visual: f64,
    pub ap_fused: f64,
    pub delta: f64,
}

/// One row per class: the two single-modality APs and the fused change.
pub fn bubble_data(ap_audio: &[f64], ap_visual: &[f64], ap_fused: &[f64]) -> Result<Vec<BubbleRow>> {
    let deltas = ap_deltas(ap_fused, ap_audio, ap_visual)?;
    Ok(deltas
        .into_iter()
        .enumerate()
        .map(|(c, delta)| BubbleRow {
            class_id: c,
            ap_audio: ap_audio[c],
            ap_visual: ap_visual[c],
            ap_fused: ap_fused[c],
            delta,
        })
        .collect())
}

pub const BUBBLE_HEADER: &str = "class_id,ap_audio,ap_visual,ap_fused,delta";
pub const HISTOGRAM_HEADER: &str = "bin_lo,bin_hi,count";
pub const ATTENTION_HEADER: &str = "class_id,mean_alpha_audio,positives";

pub fn write_bubble_csv(rows: &[BubbleRow], mut w: impl Write) -> Result<()> {
    writeln!(w, "{BUBBLE_HEADER}")?;
    for r in rows {
        writeln!(
            w,
            "{},{:.6},{:.6},{:.6},{:.6}",
            r.class_id, r.ap_audio, r.ap_visual, r.ap_fused, r.delta
        )?;
    }
    Ok(())
}

pub fn write_histogram_csv(h: &ImprovementHistogram, mut w: impl Write) -> Result<()> {
    writeln!(w, "{HISTOGRAM_HEADER}")?;
    for b in &h.bins {
        writeln!(w, "{:.4},{:.4},{}", b.lo, b.hi, b.count)?;
    }
    Ok(())
}

pub fn write_attention_csv(s: &AttentionSummary, labels: &LabelMatrix, mut w: impl Write) -> Result<()> {
    writeln!(w, "{ATTENTION_HEADER}")?;
    for (c, m) in s.per_class.iter().enumerate() {
        match m {
            Some(m) => writeln!(w, "{c},{m:.6},{}", labels.positives(c))?,
            None => writeln!(w, "{c},,0")?,
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::Tensor;

    #[test]
    fn identical_models_give_single_zero_spike() {
        let ap = [0.3, 0.5, 0.9];
        let h = improvement_histogram(&ap, &ap, &[0.1, 0.2, 0.3], 0.05).unwrap();
        assert_eq!(h.bins.len(), 1);
        assert_eq!((h.bins[0].lo, h.bins[0].count), (0.0, 3));
        assert_eq!(h.summary.unchanged, 3);
    }

    #[test]
    fn uniform_gain_lands_in_one_bin() {
        let audio = [0.2, 0.4, 0.6, 0.7];
        let visual = [0.1, 0.4, 0.3, 0.0];
        let fused: Vec<f64> = audio.iter().map(|a| a + 0.12).collect();
        let h = improvement_histogram(&fused, &audio, &visual, 0.05).unwrap();
        assert_eq!(h.bins.len(), 1);
        assert!((h.bins[0].lo - 0.10).abs() < 1e-12 && (h.bins[0].hi - 0.15).abs() < 1e-12);
        assert_eq!(h.bins[0].count, 4);
        assert_eq!(h.summary.improved_over_10, 4);
    }

    #[test]
    fn counts_partition_all_classes() {
        let fused = [0.5, 0.1, 0.9, 0.45, 0.3];
        let audio = [0.4, 0.3, 0.2, 0.45, 0.1];
        let visual = [0.1, 0.2, 0.95, 0.2, 0.5];
        let h = improvement_histogram(&fused, &audio, &visual, 0.1).unwrap();
        assert_eq!(h.bins.iter().map(|b| b.count).sum::<usize>(), 5);
        let s = &h.summary;
        assert_eq!(s.improved + s.deteriorated + s.unchanged, 5);
        assert!(improvement_histogram(&fused, &audio[..4], &visual, 0.1).is_err());
    }

    #[test]
    fn attention_means_over_positives() {
        let alpha = Tensor::from_rows(&[vec![0.2, 1.0], vec![0.8, 1.0], vec![0.0, 1.0]]).unwrap();
        let labels = LabelMatrix::new(3, 2, vec![1, 1, 1, 0, 0, 0]).unwrap();
        let s = mean_attention_weights(&alpha, &labels).unwrap();
        assert_eq!(s.per_class, vec![Some(0.5), Some(1.0)]);
        let empty = LabelMatrix::new(3, 2, vec![1, 0, 0, 0, 0, 0]).unwrap();
        assert_eq!(mean_attention_weights(&alpha, &empty).unwrap().flagged, vec![1]);
    }

    #[test]
    fn bubble_rows_share_histogram_deltas() {
        let (a, v, f) = ([0.5, 0.2], [0.5, 0.6], [0.5, 0.7]);
        let rows = bubble_data(&a, &v, &f).unwrap();
        assert_eq!(rows.len(), 2);
        assert_eq!(rows[0].delta, 0.0);
        let deltas = ap_deltas(&f, &a, &v).unwrap();
        assert_eq!(rows.iter().map(|r| r.delta).collect::<Vec<_>>(), deltas);
        let mut buf = Vec::new();
        write_bubble_csv(&rows, &mut buf).unwrap();
        assert!(String::from_utf8(buf).unwrap().starts_with(BUBBLE_HEADER));
    }
}
