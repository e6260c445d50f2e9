//! Confusion-matrix evaluation.

use std::fmt::Write as _;

use crate::error::{Error, Result};

/// `counts[i][j]` = samples of true class `i` predicted as `j`.
pub fn confusion_matrix(truth: &[usize], pred: &[usize], classes: usize) -> Result<Vec<Vec<u64>>> {
    if truth.len() != pred.len() {
        return Err(Error::Shape(format!(
            "{} true labels but {} predictions",
            truth.len(),
            pred.len()
        )));
    }
    let mut counts = vec![vec![0u64; classes]; classes];
    for (&t, &p) in truth.iter().zip(pred) {
        for l in [t, p] {
            if l >= classes {
                return Err(Error::LabelOutOfRange { label: l, classes });
            }
        }
        counts[t][p] += 1;
    }
    Ok(counts)
}

/// Divide each row by its sum; all-zero rows stay zero.
pub fn normalize_rows(counts: &[Vec<u64>]) -> Vec<Vec<f64>> {
    counts
        .iter()
        .map(|row| {
            let s: u64 = row.iter().sum();
            row.iter()
                .map(|&c| if s == 0 { 0.0 } else { c as f64 / s as f64 })
                .collect()
        })
        .collect()
}

/// Per-class scores. `undefined` is set when any of the three hit 0/0
/// and was reported as 0.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ClassScores {
    pub recall: f64,
    pub precision: f64,
    pub f1: f64,
    pub undefined: bool,
}

fn ratio(num: f64, den: f64) -> (f64, bool) {
    if den == 0.0 {
        (0.0, true)
    } else {
        (num / den, false)
    }
}

/// F1 as the harmonic mean of precision and recall.
pub fn f1_score(precision: f64, recall: f64) -> (f64, bool) {
    ratio(2.0 * precision * recall, precision + recall)
}

pub fn per_class_prf1(counts: &[Vec<u64>]) -> Vec<ClassScores> {
    let k = counts.len();
    (0..k)
        .map(|c| {
            let tp = counts[c][c] as f64;
            let row: u64 = counts[c].iter().sum();
            let col: u64 = counts.iter().map(|r| r[c]).sum();
            let (recall, ur) = ratio(tp, row as f64);
            let (precision, up) = ratio(tp, col as f64);
            let (f1, uf) = f1_score(precision, recall);
            ClassScores {
                recall,
                precision,
                f1,
                undefined: ur || up || uf,
            }
        })
        .collect()
}

pub fn overall_accuracy(counts: &[Vec<u64>]) -> Result<f64> {
    let total: u64 = counts.iter().flatten().sum();
    if total == 0 {
        return Err(Error::InvalidArgument("accuracy of an empty confusion matrix".into()));
    }
    let trace: u64 = (0..counts.len()).map(|i| counts[i][i]).sum();
    Ok(trace as f64 / total as f64)
}

/// Round half to even at `decimals` places, deciding ties on the shortest
/// decimal rendering of `v` so that e.g. 0.125 → 0.12 and 0.135 → 0.14.
pub fn round_half_even(v: f64, decimals: u32) -> f64 {
    let scale = 10f64.powi(decimals as i32);
    let scaled = v * scale;
    let floor = scaled.floor();
    let diff = scaled - floor;
    // distance from an exact tie in units of the decimal grid
    let tie = (diff - 0.5).abs() < 1e-9 * scaled.abs().max(1.0);
    let r = if tie {
        if floor % 2.0 == 0.0 {
            floor
        } else {
            floor + 1.0
        }
    } else {
        scaled.round()
    };
    r / scale
}

/// Fixed two-decimal rendering after half-even rounding.
pub fn fmt2(v: f64) -> String {
    format!("{:.2}", round_half_even(v, 2))
}

/// Everything reported for one evaluation.
#[derive(Clone, Debug, PartialEq)]
pub struct MetricsReport {
    pub counts: Vec<Vec<u64>>,
    pub normalized: Vec<Vec<f64>>,
    pub per_class: Vec<ClassScores>,
    pub accuracy: f64,
}

impl MetricsReport {
    pub fn from_labels(truth: &[usize], pred: &[usize], classes: usize) -> Result<Self> {
        let counts = confusion_matrix(truth, pred, classes)?;
        Ok(Self {
            normalized: normalize_rows(&counts),
            per_class: per_class_prf1(&counts),
            accuracy: overall_accuracy(&counts)?,
            counts,
        })
    }

    /// `metrics.tsv`: header, one row per class, then an `accuracy` row.
    pub fn metrics_tsv(&self, class_names: &[String]) -> String {
        let mut s = String::from("class\trecall\tprecision\tf1\tundefined\n");
        for (i, c) in self.per_class.iter().enumerate() {
            let name = class_names.get(i).cloned().unwrap_or_else(|| i.to_string());
            let _ = writeln!(
                s,
                "{name}\t{}\t{}\t{}\t{}",
                fmt2(c.recall),
                fmt2(c.precision),
                fmt2(c.f1),
                c.undefined
            );
        }
        let _ = writeln!(s, "accuracy\t{}", fmt2(self.accuracy));
        s
    }

    /// `confusion.tsv`: raw counts, rows = true class, columns = predicted.
    pub fn confusion_tsv(&self, class_names: &[String]) -> String {
        let name = |i: usize| class_names.get(i).cloned().unwrap_or_else(|| i.to_string());
        let mut s = String::from("true\\pred");
        for j in 0..self.counts.len() {
            let _ = write!(s, "\t{}", name(j));
        }
        s.push('\n');
        for (i, row) in self.counts.iter().enumerate() {
            s.push_str(&name(i));
            for c in row {
                let _ = write!(s, "\t{c}");
            }
            s.push('\n');
        }
        s
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn enumeration_example() {
        assert_eq!(
            confusion_matrix(&[0, 0, 1], &[0, 1, 1], 2).unwrap(),
            vec![vec![1, 1], vec![0, 1]]
        );
        assert!(confusion_matrix(&[0], &[0, 1], 2).is_err());
    }

    #[test]
    fn normalization_and_accuracy() {
        let c = vec![vec![9, 1], vec![2, 8]];
        assert_eq!(normalize_rows(&c), vec![vec![0.9, 0.1], vec![0.2, 0.8]]);
        assert_eq!(overall_accuracy(&c).unwrap(), 0.85);
        assert_eq!(normalize_rows(&[vec![0, 0]]), vec![vec![0.0, 0.0]]);
        assert!(overall_accuracy(&[vec![0]]).is_err());
    }

    #[test]
    fn half_even_ties() {
        assert_eq!(fmt2(0.125), "0.12");
        assert_eq!(fmt2(0.135), "0.14");
        assert_eq!(fmt2(0.644), "0.64");
        assert_eq!(fmt2(1.0), "1.00");
    }

    #[test]
    fn absent_class_is_flagged() {
        let s = per_class_prf1(&[vec![2, 0], vec![0, 0]]);
        assert!(!s[0].undefined && s[1].undefined);
        assert_eq!((s[1].recall, s[1].precision, s[1].f1), (0.0, 0.0, 0.0));
    }
}
