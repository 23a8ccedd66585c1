//! Top-k accuracy and confusion matrices.
//!
//! Ranking is by descending score with ties broken by ascending class code.

use std::cmp::Ordering;
use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::registry::ClassCode;

fn rank_order(scores: &[f64], a: usize, b: usize) -> Ordering {
    scores[b]
        .partial_cmp(&scores[a])
        .unwrap_or(Ordering::Equal)
        .then(a.cmp(&b))
}

/// All class indices, best first.
pub fn rank_classes(scores: &[f64]) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..scores.len()).collect();
    idx.sort_by(|&a, &b| rank_order(scores, a, b));
    idx
}

/// Zero-based rank of `class` under the ranking order.
pub fn rank_of(scores: &[f64], class: usize) -> usize {
    let s = scores[class];
    scores
        .iter()
        .enumerate()
        .filter(|&(i, &v)| v > s || (v == s && i < class))
        .count()
}

pub fn argmax(scores: &[f64]) -> usize {
    (0..scores.len())
        .min_by(|&a, &b| rank_order(scores, a, b))
        .expect("argmax of empty scores")
}

#[derive(Copy, Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RankedClass {
    pub class_code: ClassCode,
    pub score: f64,
}

/// Scored top-N predictions for one sample.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PredictionSet {
    pub sample_id: String,
    /// Probability per class, indexed by class code.
    pub scores: Vec<f64>,
    pub top: Vec<RankedClass>,
}

impl PredictionSet {
    pub fn new(sample_id: impl Into<String>, scores: Vec<f64>, n: usize) -> Result<Self> {
        if n == 0 || n > scores.len() {
            return Err(Error::InvalidInput(format!(
                "top-n must be in 1..={}, got {n}",
                scores.len()
            )));
        }
        let top = rank_classes(&scores)
            .into_iter()
            .take(n)
            .map(|i| RankedClass {
                class_code: ClassCode::from_index(i),
                score: scores[i],
            })
            .collect();
        Ok(PredictionSet {
            sample_id: sample_id.into(),
            scores,
            top,
        })
    }

    pub fn codes(&self) -> Vec<ClassCode> {
        self.top.iter().map(|r| r.class_code).collect()
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionMatrix {
    /// `counts[gold][predicted]`.
    pub counts: Vec<Vec<u64>>,
}

impl ConfusionMatrix {
    pub fn new(n: usize) -> Self {
        ConfusionMatrix {
            counts: vec![vec![0; n]; n],
        }
    }

    pub fn size(&self) -> usize {
        self.counts.len()
    }

    pub fn record(&mut self, gold: usize, predicted: usize) {
        self.counts[gold][predicted] += 1;
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().flatten().sum()
    }

    pub fn trace(&self) -> u64 {
        (0..self.size()).map(|i| self.counts[i][i]).sum()
    }

    pub fn row_sum(&self, gold: usize) -> u64 {
        self.counts[gold].iter().sum()
    }

    /// Each row divided by its sum; empty rows stay zero.
    pub fn row_normalized(&self) -> Vec<Vec<f64>> {
        self.counts
            .iter()
            .map(|row| {
                let s: u64 = row.iter().sum();
                row.iter()
                    .map(|&c| if s == 0 { 0.0 } else { c as f64 / s as f64 })
                    .collect()
            })
            .collect()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvaluationReport {
    pub total: u64,
    pub top_k_accuracy: BTreeMap<usize, f64>,
    pub confusion: ConfusionMatrix,
    /// `None` for classes with no evaluated samples.
    pub per_class_recall: Vec<Option<f64>>,
}

impl EvaluationReport {
    pub fn top1(&self) -> f64 {
        self.top_k_accuracy.get(&1).copied().unwrap_or(0.0)
    }

    pub fn accuracy_confusion(&self) -> Vec<Vec<f64>> {
        self.confusion.row_normalized()
    }

    fn finish(total: u64, correct: BTreeMap<usize, u64>, confusion: ConfusionMatrix) -> Self {
        let top_k_accuracy = correct
            .into_iter()
            .map(|(k, c)| (k, if total == 0 { 0.0 } else { c as f64 / total as f64 }))
            .collect();
        let per_class_recall = (0..confusion.size())
            .map(|i| {
                let row = confusion.row_sum(i);
                (row > 0).then(|| confusion.counts[i][i] as f64 / row as f64)
            })
            .collect();
        EvaluationReport {
            total,
            top_k_accuracy,
            confusion,
            per_class_recall,
        }
    }
}

/// Accumulates scored samples into an [`EvaluationReport`].
#[derive(Clone, Debug)]
pub struct ScoreAccumulator {
    num_classes: usize,
    ks: Vec<usize>,
    correct: BTreeMap<usize, u64>,
    confusion: ConfusionMatrix,
    total: u64,
}

impl ScoreAccumulator {
    pub fn new(num_classes: usize, ks: &[usize]) -> Self {
        ScoreAccumulator {
            num_classes,
            ks: ks.to_vec(),
            correct: ks.iter().map(|&k| (k, 0)).collect(),
            confusion: ConfusionMatrix::new(num_classes),
            total: 0,
        }
    }

    pub fn add(&mut self, gold: ClassCode, scores: &[f64]) -> Result<()> {
        if scores.len() != self.num_classes {
            return Err(Error::InvalidInput(format!(
                "expected {} scores, got {}",
                self.num_classes,
                scores.len()
            )));
        }
        let g = gold.index();
        if g >= self.num_classes {
            return Err(Error::UnknownCode(gold));
        }
        let rank = rank_of(scores, g);
        for &k in &self.ks {
            if rank < k {
                *self.correct.get_mut(&k).expect("k registered") += 1;
            }
        }
        self.confusion.record(g, argmax(scores));
        self.total += 1;
        Ok(())
    }

    pub fn finish(self) -> EvaluationReport {
        EvaluationReport::finish(self.total, self.correct, self.confusion)
    }
}

/// Top-k report over `(gold, scores)` pairs.
pub fn evaluate_scores<'a, I>(num_classes: usize, ks: &[usize], samples: I) -> Result<EvaluationReport>
where
    I: IntoIterator<Item = (ClassCode, &'a [f64])>,
{
    let mut acc = ScoreAccumulator::new(num_classes, ks);
    for (gold, scores) in samples {
        acc.add(gold, scores)?;
    }
    Ok(acc.finish())
}

/// Top-1 report over hard `(gold, predicted)` decisions.
pub fn evaluate_decisions<I>(num_classes: usize, pairs: I) -> Result<EvaluationReport>
where
    I: IntoIterator<Item = (ClassCode, ClassCode)>,
{
    let mut confusion = ConfusionMatrix::new(num_classes);
    let mut total = 0;
    for (gold, pred) in pairs {
        if gold.index() >= num_classes {
            return Err(Error::UnknownCode(gold));
        }
        if pred.index() >= num_classes {
            return Err(Error::UnknownCode(pred));
        }
        confusion.record(gold.index(), pred.index());
        total += 1;
    }
    let correct = BTreeMap::from([(1, confusion.trace())]);
    Ok(EvaluationReport::finish(total, correct, confusion))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ties_break_by_ascending_code() {
        assert_eq!(rank_classes(&[0.25, 0.25, 0.25, 0.25]), vec![0, 1, 2, 3]);
        assert_eq!(rank_classes(&[0.1, 0.4, 0.4, 0.1]), vec![1, 2, 0, 3]);
        assert_eq!(argmax(&[0.4, 0.6, 0.6]), 1);
        assert_eq!(rank_of(&[0.1, 0.4, 0.4, 0.1], 3), 3);
    }

    #[test]
    fn oracle_scores_give_perfect_report() {
        let n = 4;
        let rows: Vec<(ClassCode, Vec<f64>)> = (0..12)
            .map(|i| {
                let mut s = vec![0.0; n];
                s[i % n] = 1.0;
                (ClassCode::from_index(i % n), s)
            })
            .collect();
        let r = evaluate_scores(n, &[1, 3, 5], rows.iter().map(|(g, s)| (*g, s.as_slice()))).unwrap();
        assert_eq!(r.top_k_accuracy[&1], 1.0);
        assert_eq!(r.top_k_accuracy[&3], 1.0);
        assert_eq!(r.top_k_accuracy[&5], 1.0);
        assert_eq!(r.confusion.trace(), 12);
        assert!(r.per_class_recall.iter().all(|r| *r == Some(1.0)));
    }

    #[test]
    fn three_sample_hand_built_matrix() {
        // gold 0 ranked 2nd, gold 2 ranked 1st, gold 1 ranked 4th
        let scores = [
            (ClassCode(0), vec![0.3, 0.5, 0.1, 0.1]),
            (ClassCode(2), vec![0.1, 0.2, 0.6, 0.1]),
            (ClassCode(1), vec![0.4, 0.1, 0.3, 0.2]),
        ];
        let r = evaluate_scores(4, &[1, 3], scores.iter().map(|(g, s)| (*g, s.as_slice()))).unwrap();
        assert!((r.top_k_accuracy[&1] - 1.0 / 3.0).abs() < 1e-12);
        assert!((r.top_k_accuracy[&3] - 2.0 / 3.0).abs() < 1e-12);
        assert_eq!(r.confusion.counts[0][1], 1);
        assert_eq!(r.confusion.counts[2][2], 1);
        assert_eq!(r.confusion.counts[1][0], 1);
    }

    #[test]
    fn prediction_set_tie_break_and_bounds() {
        let p = PredictionSet::new("x", vec![0.25; 4], 4).unwrap();
        assert_eq!(p.codes(), vec![ClassCode(0), ClassCode(1), ClassCode(2), ClassCode(3)]);
        assert!(PredictionSet::new("x", vec![0.5, 0.5], 3).is_err());
        assert!(PredictionSet::new("x", vec![0.5, 0.5], 0).is_err());
    }

    #[test]
    fn row_normalized_confusion() {
        let r = evaluate_decisions(
            2,
            [(ClassCode(0), ClassCode(0)), (ClassCode(0), ClassCode(1)), (ClassCode(1), ClassCode(1))],
        )
        .unwrap();
        assert_eq!(r.accuracy_confusion(), vec![vec![0.5, 0.5], vec![0.0, 1.0]]);
        assert!((r.top1() - 2.0 / 3.0).abs() < 1e-12);
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            #[test]
            fn report_invariants(rows in proptest::collection::vec((0usize..6, proptest::collection::vec(0u8..4, 6)), 1..40)) {
                let data: Vec<(ClassCode, Vec<f64>)> = rows
                    .into_iter()
                    .map(|(g, s)| (ClassCode::from_index(g), s.into_iter().map(f64::from).collect()))
                    .collect();
                let r = evaluate_scores(6, &[1, 3, 5], data.iter().map(|(g, s)| (*g, s.as_slice()))).unwrap();
                prop_assert!(r.top_k_accuracy[&1] <= r.top_k_accuracy[&3]);
                prop_assert!(r.top_k_accuracy[&3] <= r.top_k_accuracy[&5]);
                prop_assert_eq!(r.confusion.total(), data.len() as u64);
                prop_assert!((r.top1() - r.confusion.trace() as f64 / data.len() as f64).abs() < 1e-12);
                for c in 0..6 {
                    let n = data.iter().filter(|(g, _)| g.index() == c).count() as u64;
                    prop_assert_eq!(r.confusion.row_sum(c), n);
                }
            }
        }
    }
}
