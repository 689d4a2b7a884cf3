//! AUC-ROC with ties counted as one half.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::Matrix;

/// Binary AUC: P(score⁺ > score⁻) + ½·P(score⁺ = score⁻) over all
/// positive/negative pairs. Runs in O(n log n) by sorting and sweeping
/// groups of tied scores.
pub fn auc_roc(scores: &[f64], positive: &[bool]) -> Result<f64> {
    if scores.len() != positive.len() {
        return Err(Error::Shape {
            op: "auc_roc",
            lhs: (scores.len(), 1),
            rhs: (positive.len(), 1),
        });
    }
    let n_pos = positive.iter().filter(|&&p| p).count() as u64;
    let n_neg = positive.len() as u64 - n_pos;
    if n_pos == 0 || n_neg == 0 {
        return Err(Error::AucSingleClass);
    }
    if let Some(s) = scores.iter().find(|s| s.is_nan()) {
        return Err(Error::NonFinite(format!("score {s}")));
    }

    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]));

    // twice the Mann-Whitney U statistic, kept integral
    let mut twice_u: u64 = 0;
    let mut neg_below: u64 = 0;
    let mut i = 0;
    while i < order.len() {
        let s = scores[order[i]];
        let (mut p, mut n) = (0u64, 0u64);
        while i < order.len() && scores[order[i]] == s {
            if positive[order[i]] {
                p += 1;
            } else {
                n += 1;
            }
            i += 1;
        }
        twice_u += 2 * p * neg_below + p * n;
        neg_below += n;
    }
    Ok(twice_u as f64 / (2 * n_pos * n_neg) as f64)
}

/// Macro-averaged one-vs-rest AUC over the columns of `probs` (n × C).
/// Classes absent from `labels` (or covering every row) are skipped; an
/// error is returned if no class can be scored.
pub fn macro_auc_ovr(probs: &Matrix, labels: &[usize]) -> Result<f64> {
    let (n, c) = probs.shape();
    if labels.len() != n {
        return Err(Error::Shape {
            op: "macro_auc_ovr",
            lhs: (n, c),
            rhs: (labels.len(), 1),
        });
    }
    let mut total = 0.0;
    let mut counted = 0usize;
    for class in 0..c {
        let positive: Vec<bool> = labels.iter().map(|&l| l == class).collect();
        let scores: Vec<f64> = (0..n).map(|r| probs.get(r, class)).collect();
        match auc_roc(&scores, &positive) {
            Ok(a) => {
                total += a;
                counted += 1;
            }
            Err(Error::AucSingleClass) => continue,
            Err(e) => return Err(e),
        }
    }
    if counted == 0 {
        return Err(Error::AucSingleClass);
    }
    Ok(total / counted as f64)
}

/// AUC of class probabilities: positive-class column for two classes,
/// macro one-vs-rest otherwise.
pub fn auc_from_probs(probs: &Matrix, labels: &[usize]) -> Result<f64> {
    if probs.cols() == 2 {
        let scores: Vec<f64> = (0..probs.rows()).map(|r| probs.get(r, 1)).collect();
        let positive: Vec<bool> = labels.iter().map(|&l| l == 1).collect();
        auc_roc(&scores, &positive)
    } else {
        macro_auc_ovr(probs, labels)
    }
}

/// Mean and population standard deviation.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub mean: f64,
    pub std: f64,
}

pub fn summarize(values: &[f64]) -> Summary {
    if values.is_empty() {
        return Summary {
            mean: f64::NAN,
            std: f64::NAN,
        };
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
    Summary {
        mean,
        std: var.sqrt(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn perfect_ranking() {
        let a = auc_roc(&[0.9, 0.8, 0.2, 0.1], &[true, true, false, false]).unwrap();
        assert_eq!(a, 1.0);
    }

    #[test]
    fn hand_counted_pairs() {
        // positives {0.35, 0.8} vs negatives {0.1, 0.4}: 3 of 4 pairs ordered
        let a = auc_roc(&[0.1, 0.4, 0.35, 0.8], &[false, false, true, true]).unwrap();
        assert_eq!(a, 0.75);
    }

    #[test]
    fn all_ties() {
        assert_eq!(
            auc_roc(&[0.3; 5], &[true, false, true, false, false]).unwrap(),
            0.5
        );
    }

    #[test]
    fn single_class_errors() {
        assert!(matches!(
            auc_roc(&[0.1, 0.2], &[true, true]),
            Err(Error::AucSingleClass)
        ));
        let probs = Matrix::from_rows(&[vec![0.5, 0.5], vec![0.4, 0.6]]).unwrap();
        assert!(auc_from_probs(&probs, &[0, 0]).is_err());
    }

    #[test]
    fn macro_three_class() {
        let probs = Matrix::from_rows(&[
            vec![0.8, 0.1, 0.1],
            vec![0.1, 0.8, 0.1],
            vec![0.1, 0.1, 0.8],
            vec![0.6, 0.3, 0.1],
        ])
        .unwrap();
        assert_eq!(macro_auc_ovr(&probs, &[0, 1, 2, 0]).unwrap(), 1.0);
    }

    #[test]
    fn summary_stats() {
        let s = summarize(&[0.8, 0.9]);
        assert!((s.mean - 0.85).abs() < 1e-15);
        assert!((s.std - 0.05).abs() < 1e-12);
        assert_eq!(summarize(&[0.7]).std, 0.0);
    }
}
