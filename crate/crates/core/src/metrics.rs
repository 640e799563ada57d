//! Classification metrics: macro-F1, macro one-vs-rest AUC, and the
//! Shannon entropy of vote counts.

use crate::numcore::Matrix;

/// Macro-averaged F1 over the classes that occur among the labels or the
/// predictions. A class never predicted contributes F1 = 0.
pub fn macro_f1(labels: &[usize], pred: &[usize], classes: usize) -> f64 {
    assert_eq!(labels.len(), pred.len(), "labels and predictions differ in length");
    let mut tp = vec![0usize; classes];
    let mut fp = vec![0usize; classes];
    let mut fn_ = vec![0usize; classes];
    for (&y, &p) in labels.iter().zip(pred) {
        if y == p {
            tp[y] += 1;
        } else {
            fp[p] += 1;
            fn_[y] += 1;
        }
    }
    let mut total = 0.0;
    let mut counted = 0;
    for c in 0..classes {
        if tp[c] + fp[c] + fn_[c] == 0 {
            continue;
        }
        counted += 1;
        total += 2.0 * tp[c] as f64 / (2 * tp[c] + fp[c] + fn_[c]) as f64;
    }
    if counted == 0 {
        0.0
    } else {
        total / counted as f64
    }
}

/// Area under the ROC curve of `scores` for the binary labels `positive`,
/// via the Mann-Whitney statistic with tied scores sharing their mean rank.
/// `None` when either class is empty.
pub fn binary_auc(scores: &[f64], positive: &[bool]) -> Option<f64> {
    let n_pos = positive.iter().filter(|p| **p).count();
    let n_neg = positive.len() - n_pos;
    if n_pos == 0 || n_neg == 0 {
        return None;
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]));
    let mut rank_sum = 0.0;
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && scores[order[j + 1]] == scores[order[i]] {
            j += 1;
        }
        // ranks i+1 ..= j+1 share their mean
        let mean_rank = (i + j + 2) as f64 / 2.0;
        rank_sum += mean_rank * order[i..=j].iter().filter(|&&k| positive[k]).count() as f64;
        i = j + 1;
    }
    let u = rank_sum - (n_pos * (n_pos + 1)) as f64 / 2.0;
    Some(u / (n_pos * n_neg) as f64)
}

/// Macro one-vs-rest AUC of class probabilities (one row per sample),
/// averaged over classes that have both positive and negative samples.
/// Falls back to 0.5 when no class qualifies.
pub fn macro_auc(labels: &[usize], probs: &Matrix) -> f64 {
    assert_eq!(
        labels.len(),
        probs.rows(),
        "labels and probability rows differ in length"
    );
    let aucs: Vec<f64> = (0..probs.cols())
        .filter_map(|c| {
            let positive: Vec<bool> = labels.iter().map(|&y| y == c).collect();
            binary_auc(&probs.col_values(c), &positive)
        })
        .collect();
    if aucs.is_empty() {
        0.5
    } else {
        aucs.iter().sum::<f64>() / aucs.len() as f64
    }
}

/// Natural-log entropy of the empirical distribution given by `counts`.
pub fn count_entropy(counts: &[usize]) -> f64 {
    let total: usize = counts.iter().sum();
    if total == 0 {
        return 0.0;
    }
    counts
        .iter()
        .filter(|&&c| c > 0)
        .map(|&c| {
            let p = c as f64 / total as f64;
            -p * p.ln()
        })
        .sum()
}

/// Row-wise argmax of a probability matrix; ties go to the lowest class.
pub fn argmax_rows(probs: &Matrix) -> Vec<usize> {
    (0..probs.rows()).map(|k| probs.argmax_row(k)).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn f1_hand_values() {
        assert_eq!(macro_f1(&[0, 1, 2], &[0, 1, 2], 3), 1.0);
        // class 0: tp 1 fp 1 fn 0 -> 2/3; class 1: tp 0 fn 1 -> 0
        assert!((macro_f1(&[0, 1], &[0, 0], 2) - 1.0 / 3.0).abs() < 1e-15);
    }

    #[test]
    fn auc_hand_values() {
        assert_eq!(binary_auc(&[0.1, 0.9], &[false, true]), Some(1.0));
        assert_eq!(binary_auc(&[0.9, 0.1], &[false, true]), Some(0.0));
        assert_eq!(binary_auc(&[0.5, 0.5], &[false, true]), Some(0.5));
        assert_eq!(binary_auc(&[0.5], &[true]), None);
    }

    #[test]
    fn entropy_hand_values() {
        assert_eq!(count_entropy(&[4, 0, 0]), 0.0);
        assert!((count_entropy(&[2, 2]) - 2f64.ln()).abs() < 1e-15);
    }
}
