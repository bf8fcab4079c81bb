//! Calibrated predictors, prediction sets and batch summaries.

use std::fmt;
use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::stats::{self, ScoreVector};

/// Which calibration rule a predictor uses.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Method {
    /// Rank rule: include label `y` iff `score(y) <= threshold`.
    #[serde(rename = "p")]
    PValue,
    /// Mean-scaled rule: include label `y` iff `score(y) < threshold`.
    #[serde(rename = "bb")]
    Bb,
}

impl Method {
    pub fn check_level(self, level: f64) -> Result<()> {
        match self {
            Method::PValue => stats::check_epsilon(level),
            Method::Bb => stats::check_alpha(level),
        }
    }

    /// Whether a score is inside the set for the given threshold.
    #[inline]
    pub fn accepts(self, score: f64, threshold: f64) -> bool {
        match self {
            Method::PValue => score <= threshold,
            Method::Bb => score < threshold,
        }
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Method::PValue => "p",
            Method::Bb => "bb",
        })
    }
}

impl FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "p" | "p_value" | "pvalue" => Ok(Method::PValue),
            "bb" => Ok(Method::Bb),
            other => Err(Error::domain(format!(
                "unknown method {other:?} (expected p or bb)"
            ))),
        }
    }
}

/// An immutable calibrated rule. `threshold` may be infinite.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CalibratedPredictor {
    pub method: Method,
    pub level: f64,
    #[serde(with = "crate::io::extended_f64")]
    pub threshold: f64,
    pub n_calib: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub calib_mean: Option<f64>,
    pub calib_digest: String,
}

pub fn calibrate(method: Method, level: f64, calib: &ScoreVector) -> Result<CalibratedPredictor> {
    method.check_level(level)?;
    let (threshold, calib_mean) = match method {
        Method::Bb => (stats::bb_threshold(level, calib)?, Some(calib.mean())),
        Method::PValue => (stats::p_quantile_threshold(level, calib)?, None),
    };
    Ok(CalibratedPredictor {
        method,
        level,
        threshold,
        n_calib: calib.len(),
        calib_mean,
        calib_digest: crate::io::calibration_digest(calib),
    })
}

impl CalibratedPredictor {
    pub fn predict_set(&self, id: impl Into<String>, row: &[f64]) -> PredictionSet {
        let labels = row
            .iter()
            .enumerate()
            .filter(|(_, &s)| self.method.accepts(s, self.threshold))
            .map(|(y, _)| y)
            .collect();
        PredictionSet {
            id: id.into(),
            labels,
        }
    }

    /// Prediction sets for every row, in row order.
    pub fn predict_all(&self, matrix: &ScoreMatrix) -> Vec<PredictionSet> {
        (0..matrix.n_rows())
            .into_par_iter()
            .map(|i| self.predict_set(matrix.ids[i].clone(), matrix.row(i)))
            .collect()
    }
}

/// Checks the row against `k` before building the set.
pub fn predict_set(
    pred: &CalibratedPredictor,
    id: impl Into<String>,
    row: &[f64],
    k: usize,
) -> Result<PredictionSet> {
    if row.len() != k {
        return Err(Error::shape(format!(
            "row has {} scores, expected {k}",
            row.len()
        )));
    }
    if row.iter().any(|s| s.is_nan() || *s < 0.0) {
        return Err(Error::domain("scores must be non-negative"));
    }
    Ok(pred.predict_set(id, row))
}

/// Per-example, per-candidate-label scores, stored row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct ScoreMatrix {
    pub ids: Vec<String>,
    k: usize,
    scores: Vec<f64>,
}

impl ScoreMatrix {
    pub fn new(ids: Vec<String>, k: usize, scores: Vec<f64>) -> Result<Self> {
        if k < 2 {
            return Err(Error::shape(format!("need at least two labels, got {k}")));
        }
        if scores.len() != ids.len() * k {
            return Err(Error::shape(format!(
                "{} scores do not fill {} rows of {k} labels",
                scores.len(),
                ids.len()
            )));
        }
        if let Some(i) = scores.iter().position(|s| !s.is_finite() || *s < 0.0) {
            return Err(Error::domain(format!(
                "score at row {}, label {} is {}; scores must be finite and non-negative",
                i / k,
                i % k,
                scores[i]
            )));
        }
        let mut seen = std::collections::HashSet::with_capacity(ids.len());
        if let Some(dup) = ids.iter().find(|id| !seen.insert(id.as_str())) {
            return Err(Error::domain(format!("duplicate example id {dup:?}")));
        }
        Ok(ScoreMatrix { ids, k, scores })
    }

    pub fn from_rows(ids: Vec<String>, rows: &[Vec<f64>]) -> Result<Self> {
        let k = rows.first().map_or(0, Vec::len);
        if let Some(i) = rows.iter().position(|r| r.len() != k) {
            return Err(Error::shape(format!(
                "row {i} has {} scores, expected {k}",
                rows[i].len()
            )));
        }
        ScoreMatrix::new(ids, k, rows.concat())
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn n_rows(&self) -> usize {
        self.ids.len()
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.scores[i * self.k..(i + 1) * self.k]
    }

    pub fn rows(&self) -> impl Iterator<Item = &[f64]> {
        self.scores.chunks_exact(self.k)
    }

    /// Applies `f` to every score; fails if the result leaves `[0, inf)`.
    pub fn map(&self, f: impl Fn(f64) -> f64) -> Result<Self> {
        ScoreMatrix::new(
            self.ids.clone(),
            self.k,
            self.scores.iter().map(|&s| f(s)).collect(),
        )
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PredictionSet {
    pub id: String,
    /// Sorted, distinct label indices.
    pub labels: Vec<usize>,
}

impl PredictionSet {
    pub fn contains(&self, label: usize) -> bool {
        self.labels.binary_search(&label).is_ok()
    }

    pub fn is_subset_of(&self, other: &PredictionSet) -> bool {
        self.labels.iter().all(|&y| other.contains(y))
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct SetSummary {
    pub empty: usize,
    pub singleton: usize,
    pub multiple: usize,
    pub total: usize,
}

pub fn summarize<'a>(sets: impl IntoIterator<Item = &'a PredictionSet>) -> SetSummary {
    sets.into_iter().fold(SetSummary::default(), |mut acc, s| {
        match s.labels.len() {
            0 => acc.empty += 1,
            1 => acc.singleton += 1,
            _ => acc.multiple += 1,
        }
        acc.total += 1;
        acc
    })
}

/// Fraction of rows whose true label lands in the prediction set.
pub fn coverage_on_labeled(
    pred: &CalibratedPredictor,
    matrix: &ScoreMatrix,
    true_labels: &[usize],
) -> Result<f64> {
    if true_labels.len() != matrix.n_rows() {
        return Err(Error::shape(format!(
            "{} labels for {} rows",
            true_labels.len(),
            matrix.n_rows()
        )));
    }
    if matrix.n_rows() == 0 {
        return Err(Error::shape("coverage of an empty matrix"));
    }
    let mut covered = 0usize;
    for (row, &y) in matrix.rows().zip(true_labels) {
        let score = *row.get(y).ok_or_else(|| {
            Error::shape(format!("label {y} out of range for K = {}", matrix.k()))
        })?;
        if pred.method.accepts(score, pred.threshold) {
            covered += 1;
        }
    }
    Ok(covered as f64 / matrix.n_rows() as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn fixed(method: Method, threshold: f64) -> CalibratedPredictor {
        CalibratedPredictor {
            method,
            level: 0.1,
            threshold,
            n_calib: 1,
            calib_mean: None,
            calib_digest: String::new(),
        }
    }

    #[test]
    fn calibrate_examples() {
        let calib = ScoreVector::new(vec![1.0, 3.0]).unwrap();
        let p = calibrate(Method::Bb, 1.0, &calib).unwrap();
        assert_eq!(p.threshold, 2.0);
        assert_eq!(p.calib_mean, Some(2.0));
        assert_eq!(p.n_calib, 2);
        let calib = ScoreVector::new(vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        assert_eq!(
            calibrate(Method::PValue, 0.5, &calib).unwrap().threshold,
            3.0
        );
        assert!(calibrate(Method::Bb, 0.0, &calib).is_err());
        assert!(calibrate(Method::PValue, 1.01, &calib).is_err());
    }

    #[test]
    fn boundary_conventions() {
        let row = [0.1, 2.0, 0.05, 1.5];
        assert_eq!(
            fixed(Method::Bb, 1.5).predict_set("a", &row).labels,
            vec![0, 2]
        );
        assert_eq!(
            fixed(Method::PValue, 1.5).predict_set("a", &row).labels,
            vec![0, 2, 3]
        );
        assert_eq!(
            fixed(Method::Bb, f64::INFINITY)
                .predict_set("a", &row)
                .labels,
            vec![0, 1, 2, 3]
        );
        assert!(fixed(Method::PValue, 0.0247)
            .predict_set("a", &[0.03, 0.5, 1.0])
            .labels
            .is_empty());
    }

    #[test]
    fn predict_set_checks_shape() {
        let p = fixed(Method::Bb, 1.0);
        assert!(matches!(
            predict_set(&p, "x", &[0.1, 0.2], 3),
            Err(Error::Shape(_))
        ));
        assert!(predict_set(&p, "x", &[0.1, -0.2], 2).is_err());
        assert_eq!(
            predict_set(&p, "x", &[0.1, 2.0], 2).unwrap().labels,
            vec![0]
        );
    }

    #[test]
    fn summarize_counts() {
        let sets: Vec<PredictionSet> = [vec![0], vec![1], vec![0, 2], vec![]]
            .into_iter()
            .enumerate()
            .map(|(i, labels)| PredictionSet {
                id: i.to_string(),
                labels,
            })
            .collect();
        assert_eq!(
            summarize(&sets),
            SetSummary {
                empty: 1,
                singleton: 2,
                multiple: 1,
                total: 4
            }
        );
        assert_eq!(summarize(&[]), SetSummary::default());
    }

    #[test]
    fn matrix_validation() {
        let ids = vec!["a".to_string(), "b".to_string()];
        assert!(ScoreMatrix::new(ids.clone(), 2, vec![0.0; 4]).is_ok());
        assert!(ScoreMatrix::new(ids.clone(), 1, vec![0.0; 2]).is_err());
        assert!(ScoreMatrix::new(ids.clone(), 2, vec![0.0; 3]).is_err());
        assert!(ScoreMatrix::new(ids, 2, vec![0.0, -1.0, 0.0, 0.0]).is_err());
        let dup = vec!["a".to_string(), "a".to_string()];
        assert!(ScoreMatrix::new(dup, 2, vec![0.0; 4]).is_err());
        assert!(
            ScoreMatrix::from_rows(vec!["a".into(), "b".into()], &[vec![0.0, 1.0], vec![0.0]])
                .is_err()
        );
    }

    #[test]
    fn coverage_examples() {
        let m = ScoreMatrix::from_rows(
            vec!["a".into(), "b".into(), "c".into()],
            &[vec![0.1, 3.0], vec![2.0, 0.2], vec![0.3, 0.3]],
        )
        .unwrap();
        assert_eq!(
            coverage_on_labeled(&fixed(Method::Bb, 1.0), &m, &[0, 1, 0]).unwrap(),
            1.0
        );
        assert_eq!(
            coverage_on_labeled(&fixed(Method::Bb, f64::INFINITY), &m, &[1, 0, 1]).unwrap(),
            1.0
        );
        let c = coverage_on_labeled(&fixed(Method::Bb, 1.0), &m, &[1, 1, 0]).unwrap();
        assert!((c - 2.0 / 3.0).abs() < 1e-15);
        assert!(coverage_on_labeled(&fixed(Method::Bb, 1.0), &m, &[0, 1]).is_err());
        assert!(coverage_on_labeled(&fixed(Method::Bb, 1.0), &m, &[0, 1, 5]).is_err());
    }

    proptest! {
        #[test]
        fn nested_in_level(
            calib in prop::collection::vec(0.0..10.0f64, 5..80),
            row in prop::collection::vec(0.0..10.0f64, 2..8),
            a in 0.0..1.0f64,
            b in 0.0..1.0f64,
        ) {
            let cv = ScoreVector::new(calib).unwrap();
            let (lo, hi) = (a.min(b), a.max(b));
            let p_lo = calibrate(Method::PValue, lo, &cv).unwrap().predict_set("r", &row);
            let p_hi = calibrate(Method::PValue, hi, &cv).unwrap().predict_set("r", &row);
            prop_assert!(p_hi.is_subset_of(&p_lo));
            let (lo, hi) = (lo.max(1e-6), hi.max(1e-6));
            let b_lo = calibrate(Method::Bb, lo, &cv).unwrap().predict_set("r", &row);
            let b_hi = calibrate(Method::Bb, hi, &cv).unwrap().predict_set("r", &row);
            prop_assert!(b_hi.is_subset_of(&b_lo));
        }

        #[test]
        fn summary_total_and_permutation(sizes in prop::collection::vec(0usize..4, 0..40)) {
            let sets: Vec<PredictionSet> = sizes
                .iter()
                .map(|&n| PredictionSet { id: String::new(), labels: (0..n).collect() })
                .collect();
            let s = summarize(&sets);
            prop_assert_eq!(s.empty + s.singleton + s.multiple, s.total);
            prop_assert_eq!(s.total, sizes.len());
            let rev: Vec<_> = sets.iter().rev().cloned().collect();
            prop_assert_eq!(summarize(&rev), s);
        }
    }
}
