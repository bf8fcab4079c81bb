//! Plain-text score files and JSON documents.
//!
//! * Calibration file: header `score`, then one non-negative decimal per line.
//! * Score-matrix file: header `id,label_0,...,label_{K-1}`, one row per example.
//! * Labels file: header `id,label`, one true label per example.
//!
//! Floats are written with Rust's shortest round-trip formatting, so
//! `parse(serialize(x)) == x` bit for bit. Lines end in `\n`.

use std::collections::HashMap;
use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::predictors::{
    summarize, CalibratedPredictor, Method, PredictionSet, ScoreMatrix, SetSummary,
};
use crate::stats::ScoreVector;

pub const CALIBRATION_HEADER: &str = "score";

fn parse_score(text: &str, line: usize) -> Result<f64> {
    let v: f64 = text
        .trim()
        .parse()
        .map_err(|_| Error::parse(line, format!("{:?} is not a number", text.trim())))?;
    if !v.is_finite() || v < 0.0 {
        return Err(Error::parse(
            line,
            format!("score {v} must be finite and non-negative"),
        ));
    }
    Ok(v)
}

fn strip_cr(line: &str) -> &str {
    line.strip_suffix('\r').unwrap_or(line)
}

pub fn parse_calibration(text: &str) -> Result<ScoreVector> {
    let mut lines = text.lines().map(strip_cr).enumerate();
    match lines.next() {
        Some((_, h)) if h.trim() == CALIBRATION_HEADER => {}
        Some((_, h)) => {
            return Err(Error::parse(
                1,
                format!("expected header {CALIBRATION_HEADER:?}, found {h:?}"),
            ))
        }
        None => return Err(Error::parse(1, "empty calibration file")),
    }
    let mut values = Vec::new();
    for (i, line) in lines {
        if line.trim().is_empty() {
            continue;
        }
        values.push(parse_score(line, i + 1)?);
    }
    if values.is_empty() {
        return Err(Error::parse(2, "calibration file has no scores"));
    }
    ScoreVector::new(values)
}

pub fn serialize_calibration(scores: &ScoreVector) -> String {
    let mut out = String::with_capacity(scores.len() * 12 + 8);
    out.push_str(CALIBRATION_HEADER);
    out.push('\n');
    for v in scores.as_slice() {
        writeln!(out, "{v}").unwrap();
    }
    out
}

pub fn read_calibration(path: &Path) -> Result<ScoreVector> {
    parse_calibration(&fs::read_to_string(path)?)
}

pub fn write_calibration(path: &Path, scores: &ScoreVector) -> Result<()> {
    fs::write(path, serialize_calibration(scores))?;
    Ok(())
}

/// SHA-256 (hex) of the canonical serialisation of the scores.
pub fn calibration_digest(scores: &ScoreVector) -> String {
    hex::encode(Sha256::digest(serialize_calibration(scores).as_bytes()))
}

pub fn parse_score_matrix(text: &str) -> Result<ScoreMatrix> {
    let mut lines = text.lines().map(strip_cr).enumerate();
    let (_, header) = lines
        .next()
        .ok_or_else(|| Error::parse(1, "empty score-matrix file"))?;
    let cols: Vec<&str> = header.split(',').map(str::trim).collect();
    if cols.first() != Some(&"id") {
        return Err(Error::parse(1, "header must start with \"id\""));
    }
    let k = cols.len() - 1;
    for (y, c) in cols[1..].iter().enumerate() {
        if *c != format!("label_{y}") {
            return Err(Error::parse(
                1,
                format!("column {} should be label_{y}, found {c:?}", y + 1),
            ));
        }
    }
    if k < 2 {
        return Err(Error::parse(
            1,
            format!("need at least two label columns, found {k}"),
        ));
    }
    let mut ids = Vec::new();
    let mut scores = Vec::new();
    let mut seen: HashMap<String, usize> = HashMap::new();
    for (i, line) in lines {
        let lineno = i + 1;
        if line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != k + 1 {
            return Err(Error::parse(
                lineno,
                format!("expected {} fields, found {}", k + 1, fields.len()),
            ));
        }
        let id = fields[0].trim().to_string();
        if let Some(prev) = seen.insert(id.clone(), lineno) {
            return Err(Error::parse(
                lineno,
                format!("id {id:?} already used on line {prev}"),
            ));
        }
        for f in &fields[1..] {
            scores.push(parse_score(f, lineno)?);
        }
        ids.push(id);
    }
    ScoreMatrix::new(ids, k, scores)
}

pub fn serialize_score_matrix(matrix: &ScoreMatrix) -> String {
    let mut out = String::from("id");
    for y in 0..matrix.k() {
        write!(out, ",label_{y}").unwrap();
    }
    out.push('\n');
    for (id, row) in matrix.ids.iter().zip(matrix.rows()) {
        out.push_str(id);
        for v in row {
            write!(out, ",{v}").unwrap();
        }
        out.push('\n');
    }
    out
}

pub fn read_score_matrix(path: &Path) -> Result<ScoreMatrix> {
    parse_score_matrix(&fs::read_to_string(path)?)
}

pub fn write_score_matrix(path: &Path, matrix: &ScoreMatrix) -> Result<()> {
    fs::write(path, serialize_score_matrix(matrix))?;
    Ok(())
}

/// True labels keyed by id.
pub fn parse_labels(text: &str) -> Result<Vec<(String, usize)>> {
    let mut lines = text.lines().map(strip_cr).enumerate();
    match lines.next() {
        Some((_, h)) if h.trim() == "id,label" => {}
        _ => return Err(Error::parse(1, "expected header \"id,label\"")),
    }
    let mut out = Vec::new();
    for (i, line) in lines {
        if line.trim().is_empty() {
            continue;
        }
        let (id, label) = line
            .split_once(',')
            .ok_or_else(|| Error::parse(i + 1, "expected id,label"))?;
        let label = label
            .trim()
            .parse()
            .map_err(|_| Error::parse(i + 1, format!("{label:?} is not a label index")))?;
        out.push((id.trim().to_string(), label));
    }
    Ok(out)
}

pub fn serialize_labels(ids: &[String], labels: &[usize]) -> String {
    let mut out = String::from("id,label\n");
    for (id, y) in ids.iter().zip(labels) {
        writeln!(out, "{id},{y}").unwrap();
    }
    out
}

/// Labels reordered to follow the matrix rows.
pub fn align_labels(matrix: &ScoreMatrix, labels: &[(String, usize)]) -> Result<Vec<usize>> {
    let map: HashMap<&str, usize> = labels.iter().map(|(id, y)| (id.as_str(), *y)).collect();
    matrix
        .ids
        .iter()
        .map(|id| {
            map.get(id.as_str())
                .copied()
                .ok_or_else(|| Error::shape(format!("no label for id {id:?}")))
        })
        .collect()
}

/// Result of applying one calibrated predictor to a score matrix.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub method: Method,
    pub level: f64,
    #[serde(with = "extended_f64")]
    pub threshold: f64,
    pub n_calib: usize,
    pub calib_digest: String,
    pub summary: SetSummary,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub coverage: Option<f64>,
    pub sets: Vec<PredictionSet>,
}

impl RunReport {
    pub fn new(
        pred: &CalibratedPredictor,
        sets: Vec<PredictionSet>,
        coverage: Option<f64>,
    ) -> Self {
        RunReport {
            method: pred.method,
            level: pred.level,
            threshold: pred.threshold,
            n_calib: pred.n_calib,
            calib_digest: pred.calib_digest.clone(),
            summary: summarize(&sets),
            coverage,
            sets,
        }
    }

    /// Whether `summary` matches a recount of `sets`.
    pub fn is_consistent(&self) -> bool {
        summarize(&self.sets) == self.summary
    }
}

pub fn to_json<T: Serialize>(value: &T) -> Result<String> {
    let mut s = serde_json::to_string_pretty(value)?;
    s.push('\n');
    Ok(s)
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    fs::write(path, to_json(value)?)?;
    Ok(())
}

pub fn from_json<T: for<'de> Deserialize<'de>>(text: &str) -> Result<T> {
    Ok(serde_json::from_str(text)?)
}

pub fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    from_json(&fs::read_to_string(path)?)
}

/// JSON has no infinities: finite values are numbers, infinite ones the
/// strings `"inf"` / `"-inf"`.
pub mod extended_f64 {
    use serde::de::Error as _;
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(v: &f64, s: S) -> Result<S::Ok, S::Error> {
        if v.is_finite() {
            s.serialize_f64(*v)
        } else if *v > 0.0 {
            s.serialize_str("inf")
        } else if *v < 0.0 {
            s.serialize_str("-inf")
        } else {
            Err(serde::ser::Error::custom("NaN threshold"))
        }
    }

    #[derive(Deserialize)]
    #[serde(untagged)]
    enum Repr {
        Num(f64),
        Text(String),
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<f64, D::Error> {
        match Repr::deserialize(d)? {
            Repr::Num(v) => Ok(v),
            Repr::Text(t) => match t.as_str() {
                "inf" | "+inf" => Ok(f64::INFINITY),
                "-inf" => Ok(f64::NEG_INFINITY),
                other => Err(D::Error::custom(format!("bad threshold {other:?}"))),
            },
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn calibration_parse_errors_name_lines() {
        assert!(matches!(
            parse_calibration(""),
            Err(Error::Parse { line: 1, .. })
        ));
        assert!(matches!(
            parse_calibration("loss\n1\n"),
            Err(Error::Parse { line: 1, .. })
        ));
        assert!(matches!(
            parse_calibration("score\n"),
            Err(Error::Parse { .. })
        ));
        assert!(matches!(
            parse_calibration("score\n1\n2\nabc\n"),
            Err(Error::Parse { line: 4, .. })
        ));
        assert!(matches!(
            parse_calibration("score\n1\n-2\n"),
            Err(Error::Parse { line: 3, .. })
        ));
        assert_eq!(
            parse_calibration("score\r\n1\r\n3\r\n").unwrap().as_slice(),
            &[1.0, 3.0]
        );
    }

    #[test]
    fn matrix_parse_errors() {
        let ok = "id,label_0,label_1\na,0.1,0.2\nb,1,2\n";
        assert_eq!(parse_score_matrix(ok).unwrap().n_rows(), 2);
        let ragged = "id,label_0,label_1\na,0.1,0.2\nb,1\n";
        assert!(matches!(
            parse_score_matrix(ragged),
            Err(Error::Parse { line: 3, .. })
        ));
        let neg = "id,label_0,label_1\na,0.1,-0.2\n";
        assert!(matches!(
            parse_score_matrix(neg),
            Err(Error::Parse { line: 2, .. })
        ));
        let dup = "id,label_0,label_1\na,0.1,0.2\na,1,2\n";
        assert!(matches!(
            parse_score_matrix(dup),
            Err(Error::Parse { line: 3, .. })
        ));
        assert!(parse_score_matrix("id,label_1,label_0\n").is_err());
        assert!(parse_score_matrix("id,label_0\na,1\n").is_err());
    }

    #[test]
    fn labels_align_to_rows() {
        let m = parse_score_matrix("id,label_0,label_1\na,0,1\nb,1,0\n").unwrap();
        let labels = parse_labels("id,label\nb,0\na,1\n").unwrap();
        assert_eq!(align_labels(&m, &labels).unwrap(), vec![1, 0]);
        assert!(align_labels(&m, &labels[..1]).is_err());
        assert!(parse_labels("id,label\na,x\n").is_err());
    }

    #[test]
    fn infinite_threshold_round_trips() {
        let p = CalibratedPredictor {
            method: Method::PValue,
            level: 0.0,
            threshold: f64::INFINITY,
            n_calib: 3,
            calib_mean: None,
            calib_digest: "x".into(),
        };
        let json = to_json(&p).unwrap();
        assert!(json.contains("\"inf\""));
        assert_eq!(
            serde_json::from_str::<CalibratedPredictor>(&json).unwrap(),
            p
        );
    }

    #[test]
    fn digest_is_content_based() {
        let a = ScoreVector::new(vec![1.0, 2.0]).unwrap();
        let b = ScoreVector::new(vec![2.0, 1.0]).unwrap();
        assert_eq!(calibration_digest(&a), calibration_digest(&a.clone()));
        assert_ne!(calibration_digest(&a), calibration_digest(&b));
        assert_eq!(calibration_digest(&a).len(), 64);
    }

    fn score() -> impl Strategy<Value = f64> {
        prop_oneof![0.0..1e-300f64, 0.0..1.0f64, 0.0..1e300f64, Just(0.0)]
    }

    proptest! {
        #[test]
        fn calibration_round_trip(v in prop::collection::vec(score(), 1..50)) {
            let s = ScoreVector::new(v).unwrap();
            let back = parse_calibration(&serialize_calibration(&s)).unwrap();
            prop_assert_eq!(back, s);
        }

        #[test]
        fn matrix_round_trip(rows in prop::collection::vec(prop::collection::vec(score(), 3), 0..20)) {
            let ids = (0..rows.len()).map(|i| format!("ex{i}")).collect();
            let m = ScoreMatrix::from_rows(ids, &rows).unwrap_or_else(|_| ScoreMatrix::new(vec![], 3, vec![]).unwrap());
            prop_assert_eq!(parse_score_matrix(&serialize_score_matrix(&m)).unwrap(), m);
        }

        #[test]
        fn report_round_trip(sizes in prop::collection::vec(0usize..4, 0..20), t in score()) {
            let sets: Vec<PredictionSet> = sizes.iter().enumerate()
                .map(|(i, &n)| PredictionSet { id: i.to_string(), labels: (0..n).collect() })
                .collect();
            let pred = CalibratedPredictor {
                method: Method::Bb, level: 0.1, threshold: t, n_calib: 10,
                calib_mean: Some(t), calib_digest: "d".into(),
            };
            let r = RunReport::new(&pred, sets, Some(0.5));
            prop_assert!(r.is_consistent());
            let back: RunReport = serde_json::from_str(&to_json(&r).unwrap()).unwrap();
            prop_assert_eq!(back, r);
        }
    }
}
