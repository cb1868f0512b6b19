use serde::{Deserialize, Serialize};

use super::EvalError;
use crate::corpus::StanceLabel;

fn check(gold: &[StanceLabel], pred: &[StanceLabel]) -> Result<(), EvalError> {
    if gold.len() != pred.len() {
        return Err(EvalError::LengthMismatch {
            gold: gold.len(),
            pred: pred.len(),
        });
    }
    if gold.is_empty() {
        return Err(EvalError::EmptyInput);
    }
    Ok(())
}

/// F1 of one class. Precision or recall with a zero denominator counts as 0.
pub fn per_class_f1(
    gold: &[StanceLabel],
    pred: &[StanceLabel],
    cls: StanceLabel,
) -> Result<f64, EvalError> {
    check(gold, pred)?;
    let (mut tp, mut fp, mut fn_) = (0usize, 0usize, 0usize);
    for (&g, &p) in gold.iter().zip(pred) {
        match (g == cls, p == cls) {
            (true, true) => tp += 1,
            (false, true) => fp += 1,
            (true, false) => fn_ += 1,
            (false, false) => {}
        }
    }
    let precision = if tp + fp == 0 {
        0.0
    } else {
        tp as f64 / (tp + fp) as f64
    };
    let recall = if tp + fn_ == 0 {
        0.0
    } else {
        tp as f64 / (tp + fn_) as f64
    };
    Ok(if precision + recall == 0.0 {
        0.0
    } else {
        2.0 * precision * recall / (precision + recall)
    })
}

pub fn accuracy(gold: &[StanceLabel], pred: &[StanceLabel]) -> Result<f64, EvalError> {
    check(gold, pred)?;
    let hits = gold.iter().zip(pred).filter(|(g, p)| g == p).count();
    Ok(hits as f64 / gold.len() as f64)
}

/// The four table columns plus the 3-class macro F1 and NONE-F1.
/// `f1_macro_fa_ag` is always `(favor_f1 + against_f1) / 2`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MetricSet {
    pub f1_macro_fa_ag: f64,
    pub f1_macro_3class: f64,
    /// `None` when the test set's protocol does not report accuracy.
    pub accuracy: Option<f64>,
    pub favor_f1: f64,
    pub against_f1: f64,
    pub none_f1: f64,
}

impl MetricSet {
    pub fn compute(
        gold: &[StanceLabel],
        pred: &[StanceLabel],
        with_accuracy: bool,
    ) -> Result<Self, EvalError> {
        let favor_f1 = per_class_f1(gold, pred, StanceLabel::Favor)?;
        let against_f1 = per_class_f1(gold, pred, StanceLabel::Against)?;
        let none_f1 = per_class_f1(gold, pred, StanceLabel::None)?;
        let accuracy = if with_accuracy {
            Some(accuracy(gold, pred)?)
        } else {
            None
        };
        Ok(Self::from_parts(favor_f1, against_f1, none_f1, accuracy))
    }

    fn from_parts(favor_f1: f64, against_f1: f64, none_f1: f64, accuracy: Option<f64>) -> Self {
        MetricSet {
            f1_macro_fa_ag: (favor_f1 + against_f1) / 2.0,
            f1_macro_3class: (favor_f1 + against_f1 + none_f1) / 3.0,
            accuracy,
            favor_f1,
            against_f1,
            none_f1,
        }
    }

    /// Field-wise mean; the macro columns are re-derived from the averaged
    /// per-class values so the identity above still holds exactly.
    pub fn mean(sets: &[MetricSet]) -> Option<Self> {
        if sets.is_empty() {
            return None;
        }
        let n = sets.len() as f64;
        let avg = |f: fn(&MetricSet) -> f64| sets.iter().map(f).sum::<f64>() / n;
        let accuracy = sets
            .iter()
            .map(|s| s.accuracy)
            .collect::<Option<Vec<f64>>>()
            .map(|v| v.iter().sum::<f64>() / n);
        Some(Self::from_parts(
            avg(|s| s.favor_f1),
            avg(|s| s.against_f1),
            avg(|s| s.none_f1),
            accuracy,
        ))
    }

    /// Field-wise sample standard deviation (0 for a single set).
    pub fn std(sets: &[MetricSet]) -> Option<Self> {
        let m = Self::mean(sets)?;
        let n = sets.len();
        let sd = |f: fn(&MetricSet) -> f64, mu: f64| {
            if n < 2 {
                0.0
            } else {
                (sets.iter().map(|s| (f(s) - mu).powi(2)).sum::<f64>() / (n - 1) as f64).sqrt()
            }
        };
        let accuracy = match m.accuracy {
            Some(mu) => Some(sd(|s| s.accuracy.unwrap_or(0.0), mu)),
            None => None,
        };
        Some(MetricSet {
            f1_macro_fa_ag: sd(|s| s.f1_macro_fa_ag, m.f1_macro_fa_ag),
            f1_macro_3class: sd(|s| s.f1_macro_3class, m.f1_macro_3class),
            accuracy,
            favor_f1: sd(|s| s.favor_f1, m.favor_f1),
            against_f1: sd(|s| s.against_f1, m.against_f1),
            none_f1: sd(|s| s.none_f1, m.none_f1),
        })
    }

    pub fn in_unit_range(&self) -> bool {
        [
            self.f1_macro_fa_ag,
            self.f1_macro_3class,
            self.accuracy.unwrap_or(0.0),
            self.favor_f1,
            self.against_f1,
            self.none_f1,
        ]
        .iter()
        .all(|v| (0.0..=1.0).contains(v))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use StanceLabel::{Against as A, Favor as F, None as N};

    #[test]
    fn worked_example() {
        let gold = [F, F, A, N];
        let pred = [F, A, A, N];
        assert!((per_class_f1(&gold, &pred, F).unwrap() - 2.0 / 3.0).abs() < 1e-15);
        assert!((per_class_f1(&gold, &pred, A).unwrap() - 2.0 / 3.0).abs() < 1e-15);
        assert_eq!(accuracy(&gold, &pred).unwrap(), 0.75);
    }

    #[test]
    fn perfect_and_absent() {
        let gold = [F, A, A];
        let m = MetricSet::compute(&gold, &gold, true).unwrap();
        assert_eq!(
            (m.favor_f1, m.against_f1, m.accuracy),
            (1.0, 1.0, Some(1.0))
        );
        assert_eq!(m.none_f1, 0.0);
    }

    #[test]
    fn errors() {
        assert!(matches!(
            accuracy(&[F], &[F, A]),
            Err(EvalError::LengthMismatch { .. })
        ));
        assert!(matches!(accuracy(&[], &[]), Err(EvalError::EmptyInput)));
    }

    #[test]
    fn mean_keeps_identity() {
        let a = MetricSet::compute(&[F, A, N, F], &[F, A, A, N], true).unwrap();
        let b = MetricSet::compute(&[F, A, N, F], &[A, A, N, F], false).unwrap();
        let m = MetricSet::mean(&[a, b]).unwrap();
        assert_eq!(m.f1_macro_fa_ag, (m.favor_f1 + m.against_f1) / 2.0);
        assert_eq!(m.accuracy, None);
        let s = MetricSet::std(&[a]).unwrap();
        assert_eq!(s.favor_f1, 0.0);
    }
}
