//! Ranking metrics (MAP, nDCG@10) and thresholded classification metrics
//! (weighted F1, positive-class precision and recall).

use std::cmp::Ordering;

use serde::{Deserialize, Serialize};

use crate::corpus::{RankSide, RankingTask};

#[derive(Debug, thiserror::Error)]
pub enum EvalError {
    #[error("scorer failed on query `{query}`: {message}")]
    Scorer { query: String, message: String },
    #[error("query `{query}`: expected {expected} scores, got {got}")]
    ScoreCount { query: String, expected: usize, got: usize },
    #[error("query `{query}`: non-finite score")]
    NonFinite { query: String },
    #[error("threshold selection needs both classes in the validation labels")]
    SingleClass,
    #[error("{scores} scores but {labels} labels")]
    LengthMismatch { scores: usize, labels: usize },
}

/// Mean of precision@i over the positions `i` of relevant items.
pub fn average_precision(relevance: &[bool]) -> f64 {
    let mut hits = 0usize;
    let mut sum = 0.0;
    for (i, &rel) in relevance.iter().enumerate() {
        if rel {
            hits += 1;
            sum += hits as f64 / (i + 1) as f64;
        }
    }
    if hits == 0 {
        0.0
    } else {
        sum / hits as f64
    }
}

/// Binary-gain nDCG truncated at `k`, with a `log2(i + 1)` discount.
pub fn ndcg_at_k(relevance: &[bool], k: usize) -> f64 {
    let discount = |i: usize| 1.0 / ((i + 2) as f64).log2();
    let dcg: f64 = relevance.iter().take(k).enumerate().filter(|(_, r)| **r).map(|(i, _)| discount(i)).sum::<f64>() + 0.0;
    let n_rel = relevance.iter().filter(|r| **r).count();
    let idcg: f64 = (0..n_rel.min(k)).map(discount).sum();
    if idcg == 0.0 {
        0.0
    } else {
        dcg / idcg
    }
}

/// Candidates of one task ordered by score (descending, ties by id).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankedResult {
    pub query_id: String,
    pub ids: Vec<String>,
    pub scores: Vec<f64>,
    pub relevance: Vec<bool>,
}

/// Orders by score descending, then id ascending.
pub fn rank_order(ids: &[String], scores: &[f64]) -> Vec<usize> {
    let mut order: Vec<usize> = (0..ids.len()).collect();
    order.sort_by(|&a, &b| match scores[b].total_cmp(&scores[a]) {
        Ordering::Equal => ids[a].cmp(&ids[b]),
        o => o,
    });
    order
}

pub fn rank_task(task: &RankingTask, scores: &[f64]) -> RankedResult {
    let order = rank_order(&task.candidates, scores);
    RankedResult {
        query_id: task.query_id.clone(),
        ids: order.iter().map(|&i| task.candidates[i].clone()).collect(),
        scores: order.iter().map(|&i| scores[i]).collect(),
        relevance: order.iter().map(|&i| task.relevance[i]).collect(),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaskMetrics {
    pub query_id: String,
    pub average_precision: f64,
    pub ndcg_at_10: f64,
}

/// MAP and mean nDCG@10 in percent, with the per-task values in [0, 1].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankingReport {
    pub side: RankSide,
    pub map: f64,
    pub ndcg_at_10: f64,
    pub per_task: Vec<TaskMetrics>,
}

/// Scores every task with `scorer` (one score per candidate, in candidate
/// order) and averages AP and nDCG@10.
pub fn evaluate_ranking<F>(side: RankSide, tasks: &[RankingTask], mut scorer: F) -> Result<RankingReport, EvalError>
where
    F: FnMut(&RankingTask) -> Result<Vec<f64>, String>,
{
    let mut per_task = Vec::with_capacity(tasks.len());
    for task in tasks {
        let scores = scorer(task).map_err(|message| EvalError::Scorer { query: task.query_id.clone(), message })?;
        if scores.len() != task.candidates.len() {
            return Err(EvalError::ScoreCount {
                query: task.query_id.clone(),
                expected: task.candidates.len(),
                got: scores.len(),
            });
        }
        if scores.iter().any(|s| !s.is_finite()) {
            return Err(EvalError::NonFinite { query: task.query_id.clone() });
        }
        let ranked = rank_task(task, &scores);
        per_task.push(TaskMetrics {
            query_id: task.query_id.clone(),
            average_precision: average_precision(&ranked.relevance),
            ndcg_at_10: ndcg_at_k(&ranked.relevance, 10),
        });
    }
    let n = per_task.len().max(1) as f64;
    Ok(RankingReport {
        side,
        map: 100.0 * per_task.iter().map(|t| t.average_precision).sum::<f64>() / n + 0.0,
        ndcg_at_10: 100.0 * per_task.iter().map(|t| t.ndcg_at_10).sum::<f64>() / n + 0.0,
        per_task,
    })
}

/// Predicts accept when `score >= threshold`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ClassifierDecision {
    pub threshold: f64,
}

impl ClassifierDecision {
    pub fn predict(&self, score: f64) -> bool {
        score >= self.threshold
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Confusion {
    pub tp: usize,
    pub fp: usize,
    pub fn_: usize,
    pub tn: usize,
}

impl Confusion {
    pub fn from_predictions(predicted: impl IntoIterator<Item = bool>, labels: &[bool]) -> Self {
        let mut c = Confusion::default();
        for (p, &y) in predicted.into_iter().zip(labels) {
            match (p, y) {
                (true, true) => c.tp += 1,
                (true, false) => c.fp += 1,
                (false, true) => c.fn_ += 1,
                (false, false) => c.tn += 1,
            }
        }
        c
    }

    /// Support-weighted mean of the per-class F1 scores, in [0, 1].
    pub fn weighted_f1(&self) -> f64 {
        let n = (self.tp + self.fp + self.fn_ + self.tn) as f64;
        if n == 0.0 {
            return 0.0;
        }
        let f1 = |tp: usize, fp: usize, fn_: usize| {
            let denom = 2 * tp + fp + fn_;
            if denom == 0 {
                0.0
            } else {
                2.0 * tp as f64 / denom as f64
            }
        };
        let pos_support = (self.tp + self.fn_) as f64;
        let neg_support = (self.tn + self.fp) as f64;
        (pos_support * f1(self.tp, self.fp, self.fn_) + neg_support * f1(self.tn, self.fn_, self.fp)) / n
    }
}

/// Weighted F1, Prc+ and Rcl+ in percent.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassificationReport {
    pub threshold: f64,
    pub weighted_f1: f64,
    pub precision_pos: f64,
    pub recall_pos: f64,
    /// Set when there were no positive predictions, so Prc+ is reported as 0.
    pub precision_undefined: bool,
    pub confusion: Confusion,
}

pub fn classify_metrics(scores: &[f64], labels: &[bool], decision: ClassifierDecision) -> Result<ClassificationReport, EvalError> {
    if scores.len() != labels.len() {
        return Err(EvalError::LengthMismatch { scores: scores.len(), labels: labels.len() });
    }
    let c = Confusion::from_predictions(scores.iter().map(|&s| decision.predict(s)), labels);
    let predicted_pos = c.tp + c.fp;
    let actual_pos = c.tp + c.fn_;
    Ok(ClassificationReport {
        threshold: decision.threshold,
        weighted_f1: 100.0 * c.weighted_f1(),
        precision_pos: if predicted_pos == 0 { 0.0 } else { 100.0 * c.tp as f64 / predicted_pos as f64 },
        recall_pos: if actual_pos == 0 { 0.0 } else { 100.0 * c.tp as f64 / actual_pos as f64 },
        precision_undefined: predicted_pos == 0,
        confusion: c,
    })
}

/// Candidate thresholds: one below the minimum, the midpoints between
/// consecutive distinct scores, and one above the maximum, ascending.
pub fn candidate_thresholds(scores: &[f64]) -> Vec<f64> {
    let mut distinct: Vec<f64> = scores.to_vec();
    distinct.sort_by(f64::total_cmp);
    distinct.dedup();
    let (Some(&lo), Some(&hi)) = (distinct.first(), distinct.last()) else {
        return vec![0.0];
    };
    let mut out = Vec::with_capacity(distinct.len() + 1);
    out.push(lo - 1.0);
    out.extend(distinct.windows(2).map(|w| w[0] + (w[1] - w[0]) / 2.0));
    out.push(hi + 1.0);
    out
}

/// Threshold maximising weighted F1 on validation data; ties go to the lower
/// threshold. Returns the decision and its weighted F1 in percent.
pub fn select_threshold(scores: &[f64], labels: &[bool]) -> Result<(ClassifierDecision, f64), EvalError> {
    if scores.len() != labels.len() {
        return Err(EvalError::LengthMismatch { scores: scores.len(), labels: labels.len() });
    }
    if !labels.iter().any(|&y| y) || labels.iter().all(|&y| y) {
        return Err(EvalError::SingleClass);
    }
    // Sweep thresholds upward over the sorted scores, moving items from
    // predicted-positive to predicted-negative as the threshold passes them.
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]));
    let total_pos = labels.iter().filter(|&&y| y).count();
    let mut c = Confusion { tp: total_pos, fp: scores.len() - total_pos, fn_: 0, tn: 0 };
    let mut best = (f64::NEG_INFINITY, 0.0);
    let mut cursor = 0;
    for t in candidate_thresholds(scores) {
        while cursor < order.len() && scores[order[cursor]] < t {
            if labels[order[cursor]] {
                c.tp -= 1;
                c.fn_ += 1;
            } else {
                c.fp -= 1;
                c.tn += 1;
            }
            cursor += 1;
        }
        let f1 = c.weighted_f1();
        if f1 > best.0 {
            best = (f1, t);
        }
    }
    Ok((ClassifierDecision { threshold: best.1 }, 100.0 * best.0))
}
