//! AP, AUC and the per-class report on a hand-made example.

use avfuse::data::LabelMatrix;
use avfuse::metrics::{auc, average_precision, evaluate};
use avfuse::Tensor;

fn main() -> avfuse::Result<()> {
    let scores = [0.9, 0.8, 0.1];
    let labels = [true, false, true];
    println!("AP  = {}", average_precision(&scores, &labels)?);
    println!("AUC = {}", auc(&scores, &labels)?);

    // Ties share rank credit in AUC.
    println!(
        "AUC with all scores tied = {}",
        auc(&[0.5; 4], &[true, false, true, false])?
    );

    // Three recordings, three classes; the last class has no positives and
    // is left out of the means.
    let s = Tensor::from_rows(&[vec![0.9, 0.5, 0.4], vec![0.3, 0.7, 0.1], vec![0.6, 0.4, 0.3]])?;
    let y = LabelMatrix::from_indices(&[vec![0], vec![1], vec![0, 1]], 3)?;
    let report = evaluate(&s, &y)?;
    println!("{}", serde_json::to_string_pretty(&report.to_json())?);
    Ok(())
}
