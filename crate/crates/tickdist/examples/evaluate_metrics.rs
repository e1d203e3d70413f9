//! The evaluation metrics on a hand-checkable score set: accuracy,
//! confusion counts, rank-based ROC-AUC, average-precision PR-AUC, and the
//! fold summary format.
//!
//! Usage: cargo run --release --example evaluate_metrics

use tickdist::metrics::{
    accuracy, confusion_matrix, evaluate, pr_auc, roc_auc, summarize_folds, ScoredSample,
    DEFAULT_THRESHOLD,
};

fn main() -> tickdist::Result<()> {
    // two positives {0.8, 0.4}, two negatives {0.6, 0.2}
    let samples = vec![
        ScoredSample::new(0, 0.8, 1),
        ScoredSample::new(1, 0.4, 1),
        ScoredSample::new(2, 0.6, 0),
        ScoredSample::new(3, 0.2, 0),
    ];
    println!("scores: pos {{0.8, 0.4}}, neg {{0.6, 0.2}}");
    println!("accuracy  = {:.4}", accuracy(&samples, DEFAULT_THRESHOLD)?);
    println!("roc_auc   = {:.4}  (3 of 4 pairs ranked correctly)", roc_auc(&samples)?);
    println!("pr_auc    = {:.4}", pr_auc(&samples)?);
    let c = confusion_matrix(&samples, DEFAULT_THRESHOLD)?;
    println!("confusion = tp {} fp {} tn {} fn {}", c.tp, c.fp, c.tn, c.fn_);

    let report = evaluate(&samples, DEFAULT_THRESHOLD)?;
    println!("\nreport as JSON:\n{}", serde_json::to_string_pretty(&report).unwrap());

    // fold summary in the mean +/- std reporting format
    let fold_reports = vec![report.clone(), report.clone(), report];
    let summary = summarize_folds(fold_reports)?;
    println!(
        "\nfolds: accuracy {:.2} ± {:.2} (three identical folds, zero spread)",
        summary.accuracy.mean * 100.0,
        summary.accuracy.std * 100.0
    );
    Ok(())
}
