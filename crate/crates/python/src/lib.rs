//! Python bindings. Outcomes are passed as numbers or strings and read as
//! exact decimals (`str(x)` of each value, so `0.1` means one tenth and
//! `"1/3"` one third). Results come back as plain dicts; exact quantities
//! carry both an `exact` string and an `approx` float.

use designlab::config::RunConfig;
use designlab::design::Layout;
use designlab::estimator::sharp_stau2_lower_bound;
use designlab::oracle::{frt_exact as frt, FrtStatistic};
use designlab::scalar::{parse_decimal, Scalar};
use designlab::{Assignment, Design, FinitePopulation, ObservedData, Outcome, Unit, DEFAULT_CAP};
use num_rational::BigRational;
use pyo3::exceptions::PyValueError;
use pyo3::prelude::*;
use serde_json::Value;

fn py_err(e: designlab::Error) -> PyErr {
    PyValueError::new_err(e.to_string())
}

fn outcomes(values: &[Bound<'_, PyAny>]) -> PyResult<Vec<Outcome>> {
    values
        .iter()
        .map(|v| {
            let text = v.str()?.to_string();
            parse_decimal(&text).map(Outcome::Exact).map_err(py_err)
        })
        .collect()
}

fn to_py<'py>(py: Python<'py>, value: &Value) -> PyResult<Bound<'py, PyAny>> {
    py.import("json")?.call_method1("loads", (value.to_string(),))
}

fn design_from(py: Python<'_>, design: &Bound<'_, PyAny>) -> PyResult<Design> {
    let text: String = py.import("json")?.call_method1("dumps", (design,))?.extract()?;
    serde_json::from_str(&text).map_err(|e| PyValueError::new_err(format!("invalid design: {e}")))
}

fn population(
    y1: &[Bound<'_, PyAny>],
    y0: &[Bound<'_, PyAny>],
    strata: Option<Vec<String>>,
    clusters: Option<Vec<String>>,
) -> PyResult<FinitePopulation> {
    let (y1, y0) = (outcomes(y1)?, outcomes(y0)?);
    if y1.len() != y0.len() {
        return Err(py_err(designlab::Error::LengthMismatch { left: y1.len(), right: y0.len() }));
    }
    let units = y1
        .into_iter()
        .zip(y0)
        .enumerate()
        .map(|(i, (a, b))| {
            let mut unit = Unit::new((i + 1).to_string(), a, b);
            unit.stratum = strata.as_ref().and_then(|s| s.get(i).cloned());
            unit.cluster = clusters.as_ref().and_then(|c| c.get(i).cloned());
            unit
        })
        .collect();
    FinitePopulation::new(units).map_err(py_err)
}

fn observed(
    py: Python<'_>,
    z: Vec<u8>,
    yobs: &[Bound<'_, PyAny>],
    design: &Bound<'_, PyAny>,
    strata: Option<Vec<String>>,
    clusters: Option<Vec<String>>,
) -> PyResult<ObservedData> {
    let design = design_from(py, design)?;
    let layout = Layout::resolve(&design, z.len(), strata.as_deref(), clusters.as_deref()).map_err(py_err)?;
    let z = Assignment::from_indicators(&z).map_err(py_err)?;
    ObservedData::new(layout, z, outcomes(yobs)?).map_err(py_err)
}

/// Finite-population summary of paired potential outcomes.
#[pyfunction]
fn summarize<'py>(py: Python<'py>, y1: Vec<Bound<'py, PyAny>>, y0: Vec<Bound<'py, PyAny>>) -> PyResult<Bound<'py, PyAny>> {
    let pop = population(&y1, &y0, None, None)?;
    to_py(py, &designlab::summarize(&pop).to_json())
}

/// Exact moments of the difference in means over every assignment of `design`.
#[pyfunction]
#[pyo3(signature = (y1, y0, design, strata=None, clusters=None, cap=DEFAULT_CAP))]
fn enumerate_moments<'py>(
    py: Python<'py>,
    y1: Vec<Bound<'py, PyAny>>,
    y0: Vec<Bound<'py, PyAny>>,
    design: Bound<'py, PyAny>,
    strata: Option<Vec<String>>,
    clusters: Option<Vec<String>>,
    cap: u64,
) -> PyResult<Bound<'py, PyAny>> {
    let pop = population(&y1, &y0, strata, clusters)?;
    let design = design_from(py, &design)?;
    let report = py.detach(|| designlab::enumerate_moments(&pop, &design, cap)).map_err(py_err)?;
    let mut json = report.to_json();
    if let Value::Object(map) = &mut json {
        map.insert("pass".into(), Value::Bool(report.all_hold()));
    }
    to_py(py, &json)
}

/// True sampling variance of the difference in means under `design`.
#[pyfunction]
#[pyo3(signature = (y1, y0, design, strata=None, clusters=None))]
fn variance_by_design<'py>(
    py: Python<'py>,
    y1: Vec<Bound<'py, PyAny>>,
    y0: Vec<Bound<'py, PyAny>>,
    design: Bound<'py, PyAny>,
    strata: Option<Vec<String>>,
    clusters: Option<Vec<String>>,
) -> PyResult<Bound<'py, PyAny>> {
    let pop = population(&y1, &y0, strata, clusters)?;
    let design = design_from(py, &design)?;
    let v: BigRational = designlab::estimator::variance_by_design(&pop, &design).map_err(py_err)?;
    to_py(py, &Scalar::to_json(&v))
}

/// Smallest unit-effect variance compatible with the two marginals.
#[pyfunction]
fn sharp_bound<'py>(py: Python<'py>, y1: Vec<Bound<'py, PyAny>>, y0: Vec<Bound<'py, PyAny>>) -> PyResult<Bound<'py, PyAny>> {
    let exact = |v: Vec<Outcome>| -> Vec<BigRational> { v.into_iter().filter_map(|o| o.exact().cloned()).collect() };
    let b = sharp_stau2_lower_bound(&exact(outcomes(&y1)?), &exact(outcomes(&y0)?)).map_err(py_err)?;
    to_py(py, &Scalar::to_json(&b))
}

/// Difference-in-means estimate with variance estimates and intervals.
#[pyfunction]
#[pyo3(signature = (z, yobs, design, alpha=0.05, strata=None, clusters=None))]
fn estimate<'py>(
    py: Python<'py>,
    z: Vec<u8>,
    yobs: Vec<Bound<'py, PyAny>>,
    design: Bound<'py, PyAny>,
    alpha: f64,
    strata: Option<Vec<String>>,
    clusters: Option<Vec<String>>,
) -> PyResult<Bound<'py, PyAny>> {
    let data = observed(py, z, &yobs, &design, strata, clusters)?;
    let report = designlab::estimate(&data, alpha).map_err(py_err)?;
    to_py(py, &report.to_json())
}

/// Exact randomization p-value for the sharp null of no effect.
#[pyfunction]
#[pyo3(signature = (z, yobs, design, strata=None, clusters=None, cap=DEFAULT_CAP))]
fn frt_exact<'py>(
    py: Python<'py>,
    z: Vec<u8>,
    yobs: Vec<Bound<'py, PyAny>>,
    design: Bound<'py, PyAny>,
    strata: Option<Vec<String>>,
    clusters: Option<Vec<String>>,
    cap: u64,
) -> PyResult<Bound<'py, PyAny>> {
    let data = observed(py, z, &yobs, &design, strata, clusters)?;
    let result = py.detach(|| frt(&data, FrtStatistic::AbsDiffMeans, cap)).map_err(py_err)?;
    to_py(py, &result.to_json())
}

/// Runs the study described by a TOML run configuration.
#[pyfunction]
#[pyo3(signature = (config, threads=None))]
fn run_study<'py>(py: Python<'py>, config: &str, threads: Option<usize>) -> PyResult<Bound<'py, PyAny>> {
    let mut cfg = RunConfig::parse(config).map_err(py_err)?;
    if threads.is_some() {
        cfg.run.threads = threads;
    }
    let study = cfg.study_config().map_err(py_err)?;
    let report = py.detach(|| designlab::run_study(&study)).map_err(py_err)?;
    to_py(py, &report.to_json())
}

#[pymodule]
fn pydesignlab(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_function(wrap_pyfunction!(summarize, m)?)?;
    m.add_function(wrap_pyfunction!(enumerate_moments, m)?)?;
    m.add_function(wrap_pyfunction!(variance_by_design, m)?)?;
    m.add_function(wrap_pyfunction!(sharp_bound, m)?)?;
    m.add_function(wrap_pyfunction!(estimate, m)?)?;
    m.add_function(wrap_pyfunction!(frt_exact, m)?)?;
    m.add_function(wrap_pyfunction!(run_study, m)?)?;
    Ok(())
}
