use serde::{Deserialize, Serialize};

use super::EvalError;
use crate::Label;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct RocPoint {
    /// Scores `>= threshold` are predicted occupied.
    pub threshold: f64,
    pub tpr: f64,
    pub fpr: f64,
}

/// ROC curve with occupied as the positive class, ordered by threshold
/// descending. The first point is the `+∞` sentinel at `(0, 0)` and the last
/// the `−∞` sentinel at `(1, 1)`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RocCurve {
    pub points: Vec<RocPoint>,
    pub positive_count: usize,
    pub negative_count: usize,
}

fn check_inputs(scores: &[f64], labels: &[Label]) -> Result<(usize, usize), EvalError> {
    if scores.len() != labels.len() {
        return Err(EvalError::Validation(format!(
            "{} scores for {} labels",
            scores.len(),
            labels.len()
        )));
    }
    if let Some(bad) = scores.iter().find(|s| s.is_nan()) {
        return Err(EvalError::Validation(format!(
            "score {bad} is not a number"
        )));
    }
    let pos = labels.iter().filter(|&&l| l == Label::Occupied).count();
    let neg = labels.len() - pos;
    if pos == 0 || neg == 0 {
        return Err(EvalError::Validation(format!(
            "need both classes, got {pos} occupied and {neg} vacant"
        )));
    }
    Ok((pos, neg))
}

/// Builds the ROC curve with one point per distinct score (the lowest
/// distinct score coincides with the `−∞` sentinel and is folded into it).
pub fn roc(scores: &[f64], labels: &[Label]) -> Result<RocCurve, EvalError> {
    let (pos, neg) = check_inputs(scores, labels)?;
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]));

    let mut points = vec![RocPoint {
        threshold: f64::INFINITY,
        tpr: 0.0,
        fpr: 0.0,
    }];
    let (mut tp, mut fp) = (0usize, 0usize);
    let mut i = 0;
    while i < order.len() {
        let threshold = scores[order[i]];
        while i < order.len() && scores[order[i]] == threshold {
            match labels[order[i]] {
                Label::Occupied => tp += 1,
                Label::Vacant => fp += 1,
            }
            i += 1;
        }
        if i < order.len() {
            points.push(RocPoint {
                threshold,
                tpr: tp as f64 / pos as f64,
                fpr: fp as f64 / neg as f64,
            });
        }
    }
    points.push(RocPoint {
        threshold: f64::NEG_INFINITY,
        tpr: 1.0,
        fpr: 1.0,
    });
    Ok(RocCurve {
        points,
        positive_count: pos,
        negative_count: neg,
    })
}

impl RocCurve {
    /// Trapezoidal area under the curve.
    pub fn auc(&self) -> f64 {
        self.points
            .windows(2)
            .map(|w| (w[1].fpr - w[0].fpr) * (w[1].tpr + w[0].tpr) / 2.0)
            .sum()
    }
}

pub fn auc(scores: &[f64], labels: &[Label]) -> Result<f64, EvalError> {
    Ok(roc(scores, labels)?.auc())
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Rates {
    /// Vacant stalls reported occupied, over all vacant stalls.
    pub fpr: f64,
    /// Occupied stalls reported vacant, over all occupied stalls.
    pub fnr: f64,
}

/// Error rates when predicting occupied iff `score >= threshold`.
pub fn rates_at(scores: &[f64], labels: &[Label], threshold: f64) -> Result<Rates, EvalError> {
    let (pos, neg) = check_inputs(scores, labels)?;
    let (mut fp, mut fn_) = (0usize, 0usize);
    for (&s, &l) in scores.iter().zip(labels) {
        let predicted_occupied = s >= threshold;
        match (l, predicted_occupied) {
            (Label::Vacant, true) => fp += 1,
            (Label::Occupied, false) => fn_ += 1,
            _ => {}
        }
    }
    Ok(Rates {
        fpr: fp as f64 / neg as f64,
        fnr: fn_ as f64 / pos as f64,
    })
}
