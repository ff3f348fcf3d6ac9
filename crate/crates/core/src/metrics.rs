//! Threshold-free detection metrics with in-distribution as the positive
//! class: AUROC, AUPR and TNR at a fixed TPR.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Label {
    Positive,
    Negative,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ScoredDataset {
    pub scores: Vec<f64>,
    pub labels: Vec<Label>,
    pub name: String,
}

impl ScoredDataset {
    pub fn new(scores: Vec<f64>, labels: Vec<Label>, name: impl Into<String>) -> Result<Self> {
        if scores.len() != labels.len() {
            return Err(Error::invalid(format!(
                "{} scores but {} labels",
                scores.len(),
                labels.len()
            )));
        }
        if scores.iter().any(|s| s.is_nan()) {
            return Err(Error::invalid("scores contain NaN"));
        }
        Ok(ScoredDataset {
            scores,
            labels,
            name: name.into(),
        })
    }

    /// Positives first, then negatives.
    pub fn from_pos_neg(pos: &[f64], neg: &[f64], name: impl Into<String>) -> Result<Self> {
        let scores = pos.iter().chain(neg).copied().collect();
        let labels = std::iter::repeat_n(Label::Positive, pos.len())
            .chain(std::iter::repeat_n(Label::Negative, neg.len()))
            .collect();
        Self::new(scores, labels, name)
    }

    pub fn n_pos(&self) -> usize {
        self.labels
            .iter()
            .filter(|l| **l == Label::Positive)
            .count()
    }

    pub fn n_neg(&self) -> usize {
        self.labels.len() - self.n_pos()
    }

    fn check_both_classes(&self) -> Result<(usize, usize)> {
        let (p, n) = (self.n_pos(), self.n_neg());
        if p == 0 || n == 0 {
            return Err(Error::invalid(format!(
                "dataset '{}' needs both classes, has {p} positives and {n} negatives",
                self.name
            )));
        }
        Ok((p, n))
    }

    /// Distinct scores in descending order with the number of positives
    /// and negatives at each.
    fn grouped_descending(&self) -> Vec<(f64, usize, usize)> {
        let mut pairs: Vec<(f64, Label)> = self
            .scores
            .iter()
            .copied()
            .zip(self.labels.iter().copied())
            .collect();
        pairs.sort_by(|a, b| b.0.total_cmp(&a.0));
        let mut groups: Vec<(f64, usize, usize)> = Vec::new();
        for (s, l) in pairs {
            match groups.last_mut() {
                Some(g) if g.0 == s => match l {
                    Label::Positive => g.1 += 1,
                    Label::Negative => g.2 += 1,
                },
                _ => groups.push(match l {
                    Label::Positive => (s, 1, 0),
                    Label::Negative => (s, 0, 1),
                }),
            }
        }
        groups
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub tnr_at_95_tpr: f64,
    pub auroc: f64,
    pub aupr: f64,
    pub n_pos: usize,
    pub n_neg: usize,
}

/// Probability that a random positive outscores a random negative, ties
/// counting one half (midrank Mann-Whitney statistic).
pub fn auroc(data: &ScoredDataset) -> Result<f64> {
    let (n_pos, n_neg) = data.check_both_classes()?;
    // Walking groups in descending order: each positive in a group beats
    // every negative in later groups and ties with the group's negatives.
    let mut negatives_below = n_neg;
    let mut twice_wins: u128 = 0;
    for (_, p, n) in data.grouped_descending() {
        negatives_below -= n;
        twice_wins += 2 * (p as u128) * (negatives_below as u128) + (p as u128) * (n as u128);
    }
    Ok(twice_wins as f64 / 2.0 / (n_pos as f64 * n_neg as f64))
}

/// Area under the step-wise precision-recall curve, summing
/// `(R_k - R_{k-1}) * P_k` over distinct thresholds in descending order.
pub fn aupr(data: &ScoredDataset) -> Result<f64> {
    let (n_pos, _) = data.check_both_classes()?;
    let mut tp = 0usize;
    let mut fp = 0usize;
    let mut prev_recall = 0.0;
    let mut area = 0.0;
    for (_, p, n) in data.grouped_descending() {
        tp += p;
        fp += n;
        let recall = tp as f64 / n_pos as f64;
        let precision = tp as f64 / (tp + fp) as f64;
        area += (recall - prev_recall) * precision;
        prev_recall = recall;
    }
    Ok(area)
}

/// True negative rate at the largest threshold whose true positive rate
/// reaches `tpr_target`; a score `>= t` predicts positive.
pub fn tnr_at_tpr(data: &ScoredDataset, tpr_target: f64) -> Result<f64> {
    let (n_pos, n_neg) = data.check_both_classes()?;
    if !(tpr_target > 0.0 && tpr_target <= 1.0) {
        return Err(Error::invalid(format!(
            "TPR target {tpr_target} outside (0, 1]"
        )));
    }
    let mut tp = 0usize;
    let mut fp = 0usize;
    for (_, p, n) in data.grouped_descending() {
        tp += p;
        fp += n;
        if tp as f64 / n_pos as f64 >= tpr_target {
            return Ok((n_neg - fp) as f64 / n_neg as f64);
        }
    }
    unreachable!("every positive is counted by the lowest threshold")
}

pub fn evaluate(data: &ScoredDataset, tpr_target: f64) -> Result<MetricsReport> {
    Ok(MetricsReport {
        tnr_at_95_tpr: tnr_at_tpr(data, tpr_target)?,
        auroc: auroc(data)?,
        aupr: aupr(data)?,
        n_pos: data.n_pos(),
        n_neg: data.n_neg(),
    })
}
