//! Threshold-free detection metrics. Positives (label `true`) are
//! in-distribution and should score higher.

use crate::error::{Error, Result};
use crate::eval::average_ranks;

fn counts(scores: &[f64], labels: &[bool]) -> Result<(usize, usize)> {
    if scores.len() != labels.len() {
        return Err(Error::shape("roc", &[labels.len()], &[scores.len()]));
    }
    if scores.iter().any(|s| s.is_nan()) {
        return Err(Error::contract("NaN score"));
    }
    let pos = labels.iter().filter(|&&l| l).count();
    let neg = labels.len() - pos;
    if pos == 0 || neg == 0 {
        return Err(Error::contract("need both positive and negative instances"));
    }
    Ok((pos, neg))
}

/// Probability a random positive outscores a random negative, ties
/// counting one half. Computed from the rank-sum statistic.
pub fn auroc(scores: &[f64], labels: &[bool]) -> Result<f64> {
    let (pos, neg) = counts(scores, labels)?;
    let ranks = average_ranks(scores);
    let rank_sum: f64 = ranks
        .iter()
        .zip(labels)
        .filter(|(_, &l)| l)
        .map(|(r, _)| r)
        .sum();
    let u = rank_sum - (pos * (pos + 1)) as f64 / 2.0;
    Ok(u / (pos * neg) as f64)
}

/// False positive rate at the highest threshold `tau` for which the
/// rule `score >= tau` keeps at least `tpr_target` of the positives.
pub fn fpr_at_tpr(scores: &[f64], labels: &[bool], tpr_target: f64) -> Result<f64> {
    let (pos, neg) = counts(scores, labels)?;
    if !(tpr_target > 0.0 && tpr_target <= 1.0) {
        return Err(Error::config("tpr_target", "must lie in (0, 1]"));
    }
    let mut positives: Vec<f64> = scores
        .iter()
        .zip(labels)
        .filter(|(_, &l)| l)
        .map(|(&s, _)| s)
        .collect();
    positives.sort_by(|a, b| b.total_cmp(a));
    // Guard against 0.95 * 20 landing a hair above 19.
    let needed = ((tpr_target * pos as f64) - 1e-9).ceil().max(1.0) as usize;
    let tau = positives[needed.min(pos) - 1];
    let false_pos = scores
        .iter()
        .zip(labels)
        .filter(|(&s, &l)| !l && s >= tau)
        .count();
    Ok(false_pos as f64 / neg as f64)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn separation_extremes() {
        let s = [0.9, 0.8, 0.2, 0.1];
        let l = [true, true, false, false];
        assert_eq!(auroc(&s, &l).unwrap(), 1.0);
        assert_eq!(fpr_at_tpr(&s, &l, 0.95).unwrap(), 0.0);
        let flipped = [false, false, true, true];
        assert_eq!(auroc(&s, &flipped).unwrap(), 0.0);
        assert_eq!(fpr_at_tpr(&s, &flipped, 0.95).unwrap(), 1.0);
    }

    #[test]
    fn all_tied_is_chance() {
        assert_eq!(
            auroc(&[0.3; 6], &[true, false, true, false, true, false]).unwrap(),
            0.5
        );
    }

    #[test]
    fn rejects_one_sided_labels() {
        assert!(auroc(&[0.1, 0.2], &[true, true]).is_err());
        assert!(fpr_at_tpr(&[0.1, 0.2], &[true, false], 0.0).is_err());
    }
}
