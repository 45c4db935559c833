//! Open-set evaluation metrics.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Label in the `C + 1`-way output space.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum OpenSetLabel {
    Known(usize),
    Unknown,
}

impl OpenSetLabel {
    pub fn is_unknown(self) -> bool {
        matches!(self, OpenSetLabel::Unknown)
    }
}

/// Unweighted mean of per-class F1. Classes that occur in neither `truth` nor
/// `preds` are skipped; a class that is predicted but never true scores 0.
/// With `c_plus_one = false` the UNKNOWN class is left out of the mean (it
/// still counts as an error for the known classes).
pub fn macro_f1(preds: &[OpenSetLabel], truth: &[OpenSetLabel], c_plus_one: bool) -> Result<f64> {
    if preds.len() != truth.len() {
        return Err(Error::DimensionMismatch(format!(
            "{} predictions for {} truths",
            preds.len(),
            truth.len()
        )));
    }
    if preds.is_empty() {
        return Err(Error::InvalidArgument("macro_f1 of empty input".into()));
    }
    let mut classes: Vec<OpenSetLabel> = preds.iter().chain(truth).copied().collect();
    classes.sort_unstable();
    classes.dedup();
    let mut total = 0.0;
    let mut counted = 0usize;
    for class in classes {
        if class.is_unknown() && !c_plus_one {
            continue;
        }
        let (mut tp, mut fp, mut fne) = (0usize, 0usize, 0usize);
        for (&p, &t) in preds.iter().zip(truth) {
            match (p == class, t == class) {
                (true, true) => tp += 1,
                (true, false) => fp += 1,
                (false, true) => fne += 1,
                (false, false) => {}
            }
        }
        total += (2 * tp) as f64 / (2 * tp + fp + fne) as f64;
        counted += 1;
    }
    Ok(if counted == 0 { 0.0 } else { total / counted as f64 })
}

/// Probability that a random unknown node receives a higher unknown-score
/// than a random known node, ties counting one half (Mann-Whitney U).
pub fn auroc(unknown_scores: &[f64], is_unknown: &[bool]) -> Result<f64> {
    if unknown_scores.len() != is_unknown.len() {
        return Err(Error::DimensionMismatch(format!(
            "{} scores for {} flags",
            unknown_scores.len(),
            is_unknown.len()
        )));
    }
    if unknown_scores.iter().any(|v| v.is_nan()) {
        return Err(Error::NonFinite("auroc scores".into()));
    }
    let n_pos = is_unknown.iter().filter(|&&b| b).count() as u64;
    let n_neg = is_unknown.len() as u64 - n_pos;
    if n_pos == 0 || n_neg == 0 {
        return Err(Error::InvalidArgument("auroc needs both known and unknown nodes".into()));
    }
    let mut order: Vec<usize> = (0..unknown_scores.len()).collect();
    order.sort_by(|&a, &b| unknown_scores[a].total_cmp(&unknown_scores[b]));
    // Twice the U statistic, accumulated in integers so ties stay exact.
    let mut u2: u64 = 0;
    let mut neg_below: u64 = 0;
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j < order.len() && unknown_scores[order[j]] == unknown_scores[order[i]] {
            j += 1;
        }
        let pos_here = order[i..j].iter().filter(|&&k| is_unknown[k]).count() as u64;
        let neg_here = (j - i) as u64 - pos_here;
        u2 += pos_here * (2 * neg_below + neg_here);
        neg_below += neg_here;
        i = j;
    }
    Ok(u2 as f64 / (2 * n_pos * n_neg) as f64)
}

/// Summary metrics of one open-set evaluation.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub macro_f1: f64,
    pub auroc: f64,
    pub known_acc: f64,
    pub unknown_acc: f64,
    pub overall_acc: f64,
}

/// Evaluates predictions against truth. `confidence` is the per-node
/// confidence used for ranking (`1 - confidence` is the unknown score).
/// AUROC is NaN when the truth has only one side.
pub fn evaluate(preds: &[OpenSetLabel], confidence: &[f64], truth: &[OpenSetLabel]) -> Result<Metrics> {
    let macro_f1 = macro_f1(preds, truth, true)?;
    let flags: Vec<bool> = truth.iter().map(|t| t.is_unknown()).collect();
    let unknown_scores: Vec<f64> = confidence.iter().map(|c| 1.0 - c).collect();
    let auroc = auroc(&unknown_scores, &flags).unwrap_or(f64::NAN);
    let frac = |keep: &dyn Fn(OpenSetLabel) -> bool| {
        let (mut hit, mut n) = (0usize, 0usize);
        for (&p, &t) in preds.iter().zip(truth) {
            if keep(t) {
                n += 1;
                hit += usize::from(p == t);
            }
        }
        if n == 0 {
            f64::NAN
        } else {
            hit as f64 / n as f64
        }
    };
    Ok(Metrics {
        macro_f1,
        auroc,
        known_acc: frac(&|t| !t.is_unknown()),
        unknown_acc: frac(&|t| t.is_unknown()),
        overall_acc: frac(&|_| true),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use OpenSetLabel::{Known, Unknown};

    #[test]
    fn perfect_predictions() {
        let t = [Known(0), Known(1), Unknown];
        assert_eq!(macro_f1(&t, &t, true).unwrap(), 1.0);
    }

    #[test]
    fn binary_toy() {
        let truth = [Known(0), Known(0), Known(1), Known(1)];
        let preds = [Known(0), Known(1), Known(1), Known(1)];
        let f = macro_f1(&preds, &truth, true).unwrap();
        assert!((f - (2.0 / 3.0 + 0.8) / 2.0).abs() < 1e-15);
        assert!((f - 0.7333).abs() < 1e-4);
    }

    #[test]
    fn single_class_predictions_over_balanced_truth() {
        let truth = [Known(0), Known(1), Known(2), Known(0), Known(1), Known(2)];
        let preds = [Known(0); 6];
        let f = macro_f1(&preds, &truth, true).unwrap();
        assert!((f - 1.0 / 6.0).abs() < 1e-15);
    }

    #[test]
    fn predicted_but_absent_class_scores_zero() {
        let truth = [Known(0), Known(0)];
        let preds = [Known(0), Unknown];
        // Known(0): 2/3, Unknown: 0.
        assert!((macro_f1(&preds, &truth, true).unwrap() - 1.0 / 3.0).abs() < 1e-15);
        assert!((macro_f1(&preds, &truth, false).unwrap() - 2.0 / 3.0).abs() < 1e-15);
        assert!(macro_f1(&[], &[], true).is_err());
    }

    #[test]
    fn auroc_edges() {
        assert_eq!(auroc(&[0.1, 0.2, 0.8, 0.9], &[false, false, true, true]).unwrap(), 1.0);
        assert_eq!(auroc(&[0.5; 4], &[false, true, false, true]).unwrap(), 0.5);
        assert!(auroc(&[0.1, 0.2], &[true, true]).is_err());
    }

    #[test]
    fn evaluate_accuracies() {
        let truth = [Known(0), Known(1), Unknown, Unknown];
        let preds = [Known(0), Unknown, Unknown, Known(1)];
        let m = evaluate(&preds, &[0.9, 0.2, 0.1, 0.8], &truth).unwrap();
        assert_eq!(m.known_acc, 0.5);
        assert_eq!(m.unknown_acc, 0.5);
        assert_eq!(m.overall_acc, 0.5);
        assert_eq!(m.auroc, 0.75);
    }
}
