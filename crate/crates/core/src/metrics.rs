//! Confusion-matrix based classification metrics.

use crate::error::{Error, Result};

/// Which classes enter the macro average.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum MacroAverage {
    /// Every configured class, absent ones contributing 0.
    #[default]
    AllClasses,
    /// Only classes occurring in the truth or the predictions.
    PresentClasses,
}

/// `counts[true][pred]`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ConfusionMatrix {
    counts: Vec<Vec<u64>>,
}

impl ConfusionMatrix {
    pub fn new(y_true: &[usize], y_pred: &[usize], num_classes: usize) -> Result<Self> {
        if y_true.len() != y_pred.len() {
            return Err(Error::Metric(format!(
                "length mismatch: {} labels vs {} predictions",
                y_true.len(),
                y_pred.len()
            )));
        }
        if y_true.is_empty() {
            return Err(Error::Metric("no predictions to score".into()));
        }
        let mut counts = vec![vec![0u64; num_classes]; num_classes];
        for (row, (&t, &p)) in y_true.iter().zip(y_pred).enumerate() {
            if t >= num_classes || p >= num_classes {
                return Err(Error::Label {
                    row,
                    target: t.max(p) as i64,
                    classes: num_classes,
                });
            }
            counts[t][p] += 1;
        }
        Ok(ConfusionMatrix { counts })
    }

    pub fn num_classes(&self) -> usize {
        self.counts.len()
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().flatten().sum()
    }

    pub fn tp(&self, c: usize) -> u64 {
        self.counts[c][c]
    }

    pub fn fp(&self, c: usize) -> u64 {
        (0..self.num_classes()).filter(|&t| t != c).map(|t| self.counts[t][c]).sum()
    }

    pub fn fn_(&self, c: usize) -> u64 {
        (0..self.num_classes()).filter(|&p| p != c).map(|p| self.counts[c][p]).sum()
    }

    /// F1 of one class; 0 when undefined.
    pub fn f1(&self, c: usize) -> f64 {
        let tp = self.tp(c) as f64;
        let denom = 2.0 * tp + self.fp(c) as f64 + self.fn_(c) as f64;
        if denom == 0.0 {
            0.0
        } else {
            2.0 * tp / denom
        }
    }

    pub fn accuracy(&self) -> f64 {
        let correct: u64 = (0..self.num_classes()).map(|c| self.tp(c)).sum();
        correct as f64 / self.total() as f64
    }

    pub fn macro_f1(&self, average: MacroAverage) -> f64 {
        let classes: Vec<usize> = match average {
            MacroAverage::AllClasses => (0..self.num_classes()).collect(),
            MacroAverage::PresentClasses => (0..self.num_classes())
                .filter(|&c| self.tp(c) + self.fp(c) + self.fn_(c) > 0)
                .collect(),
        };
        classes.iter().map(|&c| self.f1(c)).sum::<f64>() / classes.len() as f64
    }
}

/// Unweighted mean of per-class F1 over all `num_classes` classes.
pub fn macro_f1(y_true: &[usize], y_pred: &[usize], num_classes: usize) -> Result<f64> {
    Ok(ConfusionMatrix::new(y_true, y_pred, num_classes)?.macro_f1(MacroAverage::AllClasses))
}

pub fn accuracy(y_true: &[usize], y_pred: &[usize], num_classes: usize) -> Result<f64> {
    Ok(ConfusionMatrix::new(y_true, y_pred, num_classes)?.accuracy())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn hand_computed_example() {
        let f = macro_f1(&[0, 0, 1, 1], &[0, 1, 1, 1], 2).unwrap();
        assert!((f - (2.0 / 3.0 + 0.8) / 2.0).abs() < 1e-15);
    }

    #[test]
    fn perfect_and_constant_predictors() {
        assert_eq!(macro_f1(&[0, 1, 2, 1], &[0, 1, 2, 1], 3).unwrap(), 1.0);
        let f = macro_f1(&[0, 0, 1, 1], &[1, 1, 1, 1], 2).unwrap();
        assert!((f - 1.0 / 3.0).abs() < 1e-15);
    }

    #[test]
    fn absent_classes_count_as_zero_unless_present_mode() {
        let cm = ConfusionMatrix::new(&[0, 1], &[0, 1], 4).unwrap();
        assert_eq!(cm.macro_f1(MacroAverage::AllClasses), 0.5);
        assert_eq!(cm.macro_f1(MacroAverage::PresentClasses), 1.0);
    }

    #[test]
    fn empty_input_is_metric_error() {
        assert!(matches!(macro_f1(&[], &[], 2), Err(Error::Metric(_))));
    }

    #[test]
    fn counts_and_accuracy() {
        let cm = ConfusionMatrix::new(&[0, 0, 1, 2, 2], &[0, 2, 1, 2, 1], 3).unwrap();
        assert_eq!(cm.total(), 5);
        assert_eq!((cm.tp(2), cm.fp(2), cm.fn_(2)), (1, 1, 1));
        assert!((cm.accuracy() - 0.6).abs() < 1e-15);
    }
}
