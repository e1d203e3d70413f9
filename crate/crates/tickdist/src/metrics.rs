//! Binary classification metrics: accuracy, confusion counts, ROC-AUC via
//! the rank statistic, and PR-AUC as step-integrated average precision.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Classification threshold used throughout; scores at the threshold
/// classify positive.
pub const DEFAULT_THRESHOLD: f64 = 0.5;

/// One scored sample: model probability for the positive class plus the
/// hard label.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ScoredSample {
    pub id: u32,
    pub score: f64,
    pub label: u8,
}

impl ScoredSample {
    pub fn new(id: u32, score: f64, label: u8) -> Self {
        Self { id, score, label }
    }
}

fn validate(samples: &[ScoredSample]) -> Result<()> {
    if samples.is_empty() {
        return Err(Error::UndefinedMetric("no samples".into()));
    }
    for s in samples {
        if !s.score.is_finite() || !(0.0..=1.0).contains(&s.score) {
            return Err(Error::Contract(format!(
                "sample {} has invalid score {}",
                s.id, s.score
            )));
        }
        if s.label > 1 {
            return Err(Error::Contract(format!(
                "sample {} has non-binary label {}",
                s.id, s.label
            )));
        }
    }
    Ok(())
}

/// Confusion counts at a threshold.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Confusion {
    pub tp: usize,
    pub fp: usize,
    pub tn: usize,
    #[serde(rename = "fn")]
    pub fn_: usize,
}

impl Confusion {
    pub fn total(&self) -> usize {
        self.tp + self.fp + self.tn + self.fn_
    }

    pub fn accuracy(&self) -> f64 {
        (self.tp + self.tn) as f64 / self.total() as f64
    }
}

/// Fraction of samples classified correctly at `threshold`.
pub fn accuracy(samples: &[ScoredSample], threshold: f64) -> Result<f64> {
    Ok(confusion_matrix(samples, threshold)?.accuracy())
}

pub fn confusion_matrix(samples: &[ScoredSample], threshold: f64) -> Result<Confusion> {
    validate(samples)?;
    let mut c = Confusion {
        tp: 0,
        fp: 0,
        tn: 0,
        fn_: 0,
    };
    for s in samples {
        let predicted_pos = s.score >= threshold;
        match (predicted_pos, s.label == 1) {
            (true, true) => c.tp += 1,
            (true, false) => c.fp += 1,
            (false, false) => c.tn += 1,
            (false, true) => c.fn_ += 1,
        }
    }
    Ok(c)
}

/// Area under the ROC curve, computed as the Mann-Whitney rank statistic:
/// the fraction of (positive, negative) pairs where the positive outscores
/// the negative, ties counted one half. O(n log n) via average ranks.
pub fn roc_auc(samples: &[ScoredSample]) -> Result<f64> {
    validate(samples)?;
    let pos = samples.iter().filter(|s| s.label == 1).count();
    let neg = samples.len() - pos;
    if pos == 0 || neg == 0 {
        return Err(Error::UndefinedMetric(
            "roc_auc needs at least one positive and one negative".into(),
        ));
    }
    let mut order: Vec<usize> = (0..samples.len()).collect();
    order.sort_by(|&a, &b| {
        samples[a]
            .score
            .partial_cmp(&samples[b].score)
            .expect("scores validated finite")
    });
    // average ranks over tie groups (1-based)
    let mut rank_sum_pos = 0.0f64;
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && samples[order[j + 1]].score == samples[order[i]].score {
            j += 1;
        }
        let avg_rank = (i + 1 + j + 1) as f64 / 2.0;
        for &idx in &order[i..=j] {
            if samples[idx].label == 1 {
                rank_sum_pos += avg_rank;
            }
        }
        i = j + 1;
    }
    let p = pos as f64;
    Ok((rank_sum_pos - p * (p + 1.0) / 2.0) / (p * neg as f64))
}

/// Area under the precision-recall curve as average precision: the sum over
/// ranked positives of precision-at-rank times the recall increment.
/// Ranking is by descending score with ties broken by ascending id.
pub fn pr_auc(samples: &[ScoredSample]) -> Result<f64> {
    validate(samples)?;
    let pos = samples.iter().filter(|s| s.label == 1).count();
    if pos == 0 {
        return Err(Error::UndefinedMetric(
            "pr_auc needs at least one positive".into(),
        ));
    }
    let mut order: Vec<&ScoredSample> = samples.iter().collect();
    order.sort_by(|a, b| {
        b.score
            .partial_cmp(&a.score)
            .expect("scores validated finite")
            .then(a.id.cmp(&b.id))
    });
    let mut tp = 0usize;
    let mut ap = 0.0f64;
    for (rank0, s) in order.iter().enumerate() {
        if s.label == 1 {
            tp += 1;
            ap += tp as f64 / (rank0 + 1) as f64;
        }
    }
    Ok(ap / pos as f64)
}

/// Single-split evaluation report.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EvalReport {
    pub n: usize,
    pub threshold: f64,
    pub accuracy: f64,
    pub roc_auc: f64,
    pub pr_auc: f64,
    pub confusion: Confusion,
}

pub fn evaluate(samples: &[ScoredSample], threshold: f64) -> Result<EvalReport> {
    let confusion = confusion_matrix(samples, threshold)?;
    Ok(EvalReport {
        n: samples.len(),
        threshold,
        accuracy: confusion.accuracy(),
        roc_auc: roc_auc(samples)?,
        pr_auc: pr_auc(samples)?,
        confusion,
    })
}

/// Mean and sample standard deviation (ddof = 1) across folds.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct MeanStd {
    pub mean: f64,
    pub std: f64,
}

pub fn mean_std(values: &[f64]) -> MeanStd {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let std = if values.len() > 1 {
        (values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1.0)).sqrt()
    } else {
        0.0
    };
    MeanStd { mean, std }
}

/// Fold-wise evaluation: per-fold reports plus mean +/- std per metric.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FoldSummary {
    pub folds: Vec<EvalReport>,
    pub accuracy: MeanStd,
    pub roc_auc: MeanStd,
    pub pr_auc: MeanStd,
}

pub fn summarize_folds(folds: Vec<EvalReport>) -> Result<FoldSummary> {
    if folds.is_empty() {
        return Err(Error::UndefinedMetric("no folds to summarize".into()));
    }
    let take = |f: fn(&EvalReport) -> f64| -> Vec<f64> { folds.iter().map(f).collect() };
    Ok(FoldSummary {
        accuracy: mean_std(&take(|r| r.accuracy)),
        roc_auc: mean_std(&take(|r| r.roc_auc)),
        pr_auc: mean_std(&take(|r| r.pr_auc)),
        folds,
    })
}
