//! Rank-based detection metrics with exact tie handling.

use serde::{Deserialize, Serialize};

use crate::error::{FateError, Result};
use crate::model::Label;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoredEntry {
    pub doc_id: String,
    pub score: f64,
    pub label: Label,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct ScoredSet {
    pub entries: Vec<ScoredEntry>,
}

impl ScoredSet {
    pub fn new(entries: Vec<ScoredEntry>) -> Self {
        Self { entries }
    }

    pub fn from_scores(scores: &[f64], labels: &[Label]) -> Self {
        assert_eq!(scores.len(), labels.len(), "one label per score");
        let entries = scores
            .iter()
            .zip(labels)
            .enumerate()
            .map(|(i, (&score, &label))| ScoredEntry {
                doc_id: format!("doc-{i}"),
                score,
                label,
            })
            .collect();
        Self { entries }
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn positives(&self) -> usize {
        self.entries.iter().filter(|e| e.label.is_outlier()).count()
    }

    /// Entries sorted by descending score (most anomalous first), ties by doc id.
    pub fn ranked(&self) -> Vec<&ScoredEntry> {
        let mut out: Vec<_> = self.entries.iter().collect();
        out.sort_by(|a, b| {
            b.score
                .total_cmp(&a.score)
                .then_with(|| a.doc_id.cmp(&b.doc_id))
        });
        out
    }

    fn check_finite(&self) -> Result<()> {
        match self.entries.iter().find(|e| !e.score.is_finite()) {
            Some(e) => Err(FateError::numeric("scored set", Some(&e.doc_id))),
            None => Ok(()),
        }
    }
}

/// Groups of equal scores in the given order, as `(positives, negatives)`.
fn tie_blocks(sorted: &[(f64, bool)]) -> Vec<(usize, usize)> {
    let mut blocks: Vec<(usize, usize)> = Vec::new();
    let mut prev: Option<f64> = None;
    for &(score, positive) in sorted {
        if prev != Some(score) {
            blocks.push((0, 0));
            prev = Some(score);
        }
        let last = blocks.last_mut().unwrap();
        if positive {
            last.0 += 1;
        } else {
            last.1 += 1;
        }
    }
    blocks
}

fn pairs(s: &ScoredSet) -> Vec<(f64, bool)> {
    s.entries
        .iter()
        .map(|e| (e.score, e.label.is_outlier()))
        .collect()
}

/// Area under the ROC curve as the Mann–Whitney statistic:
/// `P(score_pos > score_neg) + ½ P(tie)`.
pub fn auroc(s: &ScoredSet) -> Result<f64> {
    s.check_finite()?;
    let positives = s.positives();
    let negatives = s.len() - positives;
    if positives == 0 || negatives == 0 {
        return Err(FateError::MetricUndefined(format!(
            "AUROC needs both classes ({positives} positives, {negatives} negatives)"
        )));
    }
    let mut sorted = pairs(s);
    sorted.sort_by(|a, b| a.0.total_cmp(&b.0));
    // Count, for every positive, negatives strictly below plus half the tied ones.
    // Doubled so the accumulator stays integral.
    let mut twice_wins: u128 = 0;
    let mut negatives_below: u128 = 0;
    for (pos, neg) in tie_blocks(&sorted) {
        twice_wins += pos as u128 * (2 * negatives_below + neg as u128);
        negatives_below += neg as u128;
    }
    Ok(twice_wins as f64 / (2.0 * positives as f64 * negatives as f64))
}

/// Step-wise average precision over descending score thresholds. Equal
/// scores form a single threshold.
pub fn auprc(s: &ScoredSet) -> Result<f64> {
    s.check_finite()?;
    let positives = s.positives();
    if positives == 0 {
        return Err(FateError::MetricUndefined(
            "AUPRC needs at least one positive".into(),
        ));
    }
    let mut sorted = pairs(s);
    sorted.sort_by(|a, b| b.0.total_cmp(&a.0));
    let mut tp = 0usize;
    let mut fp = 0usize;
    let mut weighted = 0.0;
    for (pos, neg) in tie_blocks(&sorted) {
        tp += pos;
        fp += neg;
        if pos > 0 {
            weighted += (tp as f64 / (tp + fp) as f64) * pos as f64;
        }
    }
    // Rounding can push a perfect ranking a hair above 1.
    Ok((weighted / positives as f64).min(1.0))
}

#[cfg(test)]
mod tests {
    use super::*;
    use Label::{Inlier as N, Outlier as P};

    #[test]
    fn perfect_separation() {
        let s = ScoredSet::from_scores(&[0.9, 0.8, 0.1, 0.2], &[P, P, N, N]);
        assert_eq!(auroc(&s).unwrap(), 1.0);
        assert_eq!(auprc(&s).unwrap(), 1.0);
        let scores: Vec<f64> = (0..500).map(|i| -(i as f64)).collect();
        let labels: Vec<_> = (0..500).map(|i| if i < 100 { P } else { N }).collect();
        assert_eq!(
            auprc(&ScoredSet::from_scores(&scores, &labels)).unwrap(),
            1.0
        );
    }

    #[test]
    fn all_ties() {
        let s = ScoredSet::from_scores(&[0.3; 6], &[P, N, N, P, N, N]);
        assert_eq!(auroc(&s).unwrap(), 0.5);
        // One threshold: precision = prevalence.
        assert!((auprc(&s).unwrap() - 2.0 / 6.0).abs() < 1e-15);
    }

    #[test]
    fn single_positive_ranked_last() {
        let scores: Vec<f64> = (0..7).map(|i| 10.0 - i as f64).collect();
        let mut labels = vec![N; 7];
        labels[6] = P;
        let s = ScoredSet::from_scores(&scores, &labels);
        assert!((auprc(&s).unwrap() - 1.0 / 7.0).abs() < 1e-15);
        assert_eq!(auroc(&s).unwrap(), 0.0);
    }

    #[test]
    fn undefined_cases() {
        let s = ScoredSet::from_scores(&[0.1, 0.2], &[N, N]);
        assert!(matches!(auroc(&s), Err(FateError::MetricUndefined(_))));
        assert!(matches!(auprc(&s), Err(FateError::MetricUndefined(_))));
        let s = ScoredSet::from_scores(&[0.1, 0.2], &[P, P]);
        assert!(auroc(&s).is_err());
        assert_eq!(auprc(&s).unwrap(), 1.0);
        let s = ScoredSet::from_scores(&[f64::NAN, 0.2], &[P, N]);
        assert!(matches!(auroc(&s), Err(FateError::Numeric { .. })));
    }

    #[test]
    fn partial_ties_hand_count() {
        // positives 0.5, 0.2; negatives 0.5, 0.1, 0.2
        // pairs: (0.5: >0.1, >0.2, tie 0.5) = 2.5; (0.2: >0.1, tie 0.2) = 1.5 → 4/6
        let s = ScoredSet::from_scores(&[0.5, 0.2, 0.5, 0.1, 0.2], &[P, P, N, N, N]);
        assert!((auroc(&s).unwrap() - 4.0 / 6.0).abs() < 1e-15);
    }

    #[test]
    fn ranked_listing_is_descending() {
        let s = ScoredSet::from_scores(&[0.1, 0.7, 0.4], &[N, P, N]);
        let ids: Vec<_> = s.ranked().iter().map(|e| e.doc_id.as_str()).collect();
        assert_eq!(ids, vec!["doc-1", "doc-2", "doc-0"]);
    }
}
