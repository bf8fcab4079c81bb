//! Python bindings for `bbconf`.
//!
//! Scores cross the boundary as plain lists of floats; a score matrix is a
//! list of rows. Every `bbconf::Error` surfaces as `ValueError`.

use pyo3::exceptions::PyValueError;
use pyo3::prelude::*;

use bbconf::demo::{demo_scores as core_demo_scores, DemoConfig};
use bbconf::io;
use bbconf::{Method, ScoreMatrix, ScoreVector};

fn to_py(e: bbconf::Error) -> PyErr {
    PyValueError::new_err(e.to_string())
}

fn method(name: &str) -> PyResult<Method> {
    name.parse().map_err(to_py)
}

fn scores(values: Vec<f64>) -> PyResult<ScoreVector> {
    ScoreVector::new(values).map_err(to_py)
}

fn matrix(rows: Vec<Vec<f64>>) -> PyResult<ScoreMatrix> {
    let ids = (0..rows.len()).map(|i| i.to_string()).collect();
    ScoreMatrix::from_rows(ids, &rows).map_err(to_py)
}

#[pyfunction]
fn bb_multiplier(alpha: f64, n: usize) -> PyResult<f64> {
    bbconf::bb_multiplier(alpha, n).map_err(to_py)
}

#[pyfunction]
fn bb_threshold(alpha: f64, calib: Vec<f64>) -> PyResult<f64> {
    bbconf::bb_threshold(alpha, &scores(calib)?).map_err(to_py)
}

#[pyfunction]
fn p_quantile_threshold(epsilon: f64, calib: Vec<f64>) -> PyResult<f64> {
    bbconf::p_quantile_threshold(epsilon, &scores(calib)?).map_err(to_py)
}

/// Returns the normalised values `f_i`; the last one is the test statistic.
#[pyfunction]
fn e_statistic(values: Vec<f64>) -> PyResult<Vec<f64>> {
    Ok(bbconf::e_statistic(&scores(values)?)
        .map_err(to_py)?
        .f_values)
}

/// Returns `(u, p)`.
#[pyfunction]
fn rank_statistic(values: Vec<f64>) -> PyResult<(usize, f64)> {
    let r = bbconf::rank_statistic(&values).map_err(to_py)?;
    Ok((r.u, r.p()))
}

#[pyfunction]
fn exact_violation_fraction(values: Vec<f64>, method_name: &str, level: f64) -> PyResult<f64> {
    bbconf::exact_violation_fraction(&scores(values)?, method(method_name)?, level).map_err(to_py)
}

#[pyfunction]
fn mean_identity_residual(values: Vec<f64>) -> PyResult<f64> {
    bbconf::mean_identity_residual(&scores(values)?).map_err(to_py)
}

#[pyfunction]
fn gen_exchangeable(spec: &str, length: usize, seed: u64) -> PyResult<Vec<f64>> {
    let spec = bbconf::DistributionSpec::parse(spec).map_err(to_py)?;
    Ok(bbconf::gen_exchangeable(&spec, length, seed)
        .map_err(to_py)?
        .into_inner())
}

/// Returns `(empty, singleton, multiple, total)`.
#[pyfunction]
fn summarize(sets: Vec<Vec<usize>>) -> (usize, usize, usize, usize) {
    let sets: Vec<bbconf::PredictionSet> = sets
        .into_iter()
        .map(|labels| bbconf::PredictionSet {
            id: String::new(),
            labels,
        })
        .collect();
    let s = bbconf::summarize(&sets);
    (s.empty, s.singleton, s.multiple, s.total)
}

#[pyclass(name = "CoverageReport", frozen, get_all)]
struct PyCoverageReport {
    method: String,
    level: f64,
    spec: String,
    n: usize,
    trials: usize,
    violations: usize,
    rate: f64,
    std_err: f64,
    bound: f64,
    passed: bool,
}

#[pymethods]
impl PyCoverageReport {
    fn __repr__(&self) -> String {
        format!(
            "CoverageReport(method='{}', level={}, spec='{}', n={}, trials={}, rate={}, passed={})",
            self.method,
            self.level,
            self.spec,
            self.n,
            self.trials,
            self.rate,
            if self.passed { "True" } else { "False" }
        )
    }
}

#[pyfunction]
#[pyo3(signature = (method_name, level, spec, n, trials, seed=0))]
fn monte_carlo_coverage(
    py: Python<'_>,
    method_name: &str,
    level: f64,
    spec: &str,
    n: usize,
    trials: usize,
    seed: u64,
) -> PyResult<PyCoverageReport> {
    let m = method(method_name)?;
    let spec = bbconf::DistributionSpec::parse(spec).map_err(to_py)?;
    let r = py
        .detach(|| bbconf::monte_carlo_coverage(m, level, &spec, n, trials, seed))
        .map_err(to_py)?;
    Ok(PyCoverageReport {
        method: r.method.to_string(),
        level: r.level,
        spec: r.spec,
        n: r.n,
        trials: r.trials,
        violations: r.violations,
        rate: r.rate,
        std_err: r.std_err,
        bound: r.bound,
        passed: r.pass,
    })
}

/// A calibrated predictor; build it with `CalibratedPredictor.calibrate`.
#[pyclass(name = "CalibratedPredictor", frozen)]
struct PyPredictor(bbconf::CalibratedPredictor);

#[pymethods]
impl PyPredictor {
    #[staticmethod]
    fn calibrate(method_name: &str, level: f64, calib: Vec<f64>) -> PyResult<Self> {
        let pred =
            bbconf::calibrate(method(method_name)?, level, &scores(calib)?).map_err(to_py)?;
        Ok(PyPredictor(pred))
    }

    #[staticmethod]
    fn from_json(text: &str) -> PyResult<Self> {
        let pred: bbconf::CalibratedPredictor = io::from_json(text).map_err(to_py)?;
        pred.method.check_level(pred.level).map_err(to_py)?;
        Ok(PyPredictor(pred))
    }

    fn to_json(&self) -> PyResult<String> {
        io::to_json(&self.0).map_err(to_py)
    }

    #[getter]
    fn method(&self) -> String {
        self.0.method.to_string()
    }

    #[getter]
    fn level(&self) -> f64 {
        self.0.level
    }

    #[getter]
    fn threshold(&self) -> f64 {
        self.0.threshold
    }

    #[getter]
    fn n_calib(&self) -> usize {
        self.0.n_calib
    }

    #[getter]
    fn calib_mean(&self) -> Option<f64> {
        self.0.calib_mean
    }

    #[getter]
    fn calib_digest(&self) -> String {
        self.0.calib_digest.clone()
    }

    /// Sorted label indices kept for one row of per-label scores.
    fn predict_set(&self, row: Vec<f64>) -> PyResult<Vec<usize>> {
        let k = row.len();
        Ok(bbconf::predict_set(&self.0, "", &row, k)
            .map_err(to_py)?
            .labels)
    }

    fn predict(&self, rows: Vec<Vec<f64>>) -> PyResult<Vec<Vec<usize>>> {
        let m = matrix(rows)?;
        Ok(self
            .0
            .predict_all(&m)
            .into_iter()
            .map(|s| s.labels)
            .collect())
    }

    fn coverage(&self, rows: Vec<Vec<f64>>, labels: Vec<usize>) -> PyResult<f64> {
        bbconf::coverage_on_labeled(&self.0, &matrix(rows)?, &labels).map_err(to_py)
    }

    fn __repr__(&self) -> String {
        format!(
            "CalibratedPredictor(method='{}', level={}, threshold={}, n_calib={})",
            self.0.method, self.0.level, self.0.threshold, self.0.n_calib
        )
    }
}

type DemoScores = (Vec<f64>, Vec<Vec<f64>>, Vec<usize>);

/// Trains the toy classifier and returns
/// `(calibration_scores, test_score_rows, test_labels)`.
#[pyfunction]
#[pyo3(signature = (k=3, per_class=1000, dim=2, separation=4.0, epochs=200, step=0.5, seed=2024))]
#[allow(clippy::too_many_arguments)]
fn demo_scores(
    py: Python<'_>,
    k: usize,
    per_class: usize,
    dim: usize,
    separation: f64,
    epochs: usize,
    step: f64,
    seed: u64,
) -> PyResult<DemoScores> {
    let cfg = DemoConfig {
        k,
        per_class,
        dim,
        separation,
        epochs,
        step,
        seed,
        ..DemoConfig::default()
    };
    let (_, calib, m, labels, ..) = py.detach(|| core_demo_scores(&cfg)).map_err(to_py)?;
    let rows = m.rows().map(<[f64]>::to_vec).collect();
    Ok((calib.into_inner(), rows, labels))
}

#[pymodule]
fn bbconf_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_function(wrap_pyfunction!(bb_multiplier, m)?)?;
    m.add_function(wrap_pyfunction!(bb_threshold, m)?)?;
    m.add_function(wrap_pyfunction!(p_quantile_threshold, m)?)?;
    m.add_function(wrap_pyfunction!(e_statistic, m)?)?;
    m.add_function(wrap_pyfunction!(rank_statistic, m)?)?;
    m.add_function(wrap_pyfunction!(exact_violation_fraction, m)?)?;
    m.add_function(wrap_pyfunction!(mean_identity_residual, m)?)?;
    m.add_function(wrap_pyfunction!(gen_exchangeable, m)?)?;
    m.add_function(wrap_pyfunction!(summarize, m)?)?;
    m.add_function(wrap_pyfunction!(monte_carlo_coverage, m)?)?;
    m.add_function(wrap_pyfunction!(demo_scores, m)?)?;
    m.add_class::<PyPredictor>()?;
    m.add_class::<PyCoverageReport>()?;
    Ok(())
}
