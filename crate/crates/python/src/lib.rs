//! Python bindings: `import jfm`.

use jfm_core::metrics::evaluate as evaluate_fit;
use jfm_core::simulation::{generate_scenario, ScenarioSpec};
use jfm_core::tuning::{grid_search as core_grid_search, TuningConfig};
use jfm_core::{fit_model, FitOptions, FitResult, GroupData, GroupedDesign, JfmError, ModelKind};
use ndarray::{Array1, Array2};
use pyo3::exceptions::{PyRuntimeError, PyValueError};
use pyo3::prelude::*;

fn to_py(err: JfmError) -> PyErr {
    if err.is_validation() {
        PyValueError::new_err(err.to_string())
    } else {
        PyRuntimeError::new_err(err.to_string())
    }
}

fn matrix(rows: Vec<Vec<f64>>) -> PyResult<Array2<f64>> {
    let n = rows.len();
    let p = rows.first().map_or(0, Vec::len);
    if rows.iter().any(|r| r.len() != p) {
        return Err(PyValueError::new_err("rows have different lengths"));
    }
    Array2::from_shape_vec((n, p), rows.into_iter().flatten().collect()).map_err(|e| PyValueError::new_err(e.to_string()))
}

fn json_loads<'py>(py: Python<'py>, text: &str) -> PyResult<Bound<'py, PyAny>> {
    py.import("json")?.call_method1("loads", (text,))
}

/// Grouped training or test data.
#[pyclass(name = "Design", module = "jfm", skip_from_py_object)]
#[derive(Clone)]
pub struct PyDesign {
    inner: GroupedDesign,
}

#[pymethods]
impl PyDesign {
    /// `groups` is a list of (id, rows, labels).
    #[new]
    fn new(groups: Vec<(String, Vec<Vec<f64>>, Vec<f64>)>, feature_names: Vec<String>) -> PyResult<Self> {
        let groups = groups
            .into_iter()
            .map(|(id, rows, y)| Ok(GroupData { id, x: matrix(rows)?, y: Array1::from(y) }))
            .collect::<PyResult<Vec<_>>>()?;
        Ok(Self { inner: GroupedDesign::new(groups, feature_names).map_err(to_py)? })
    }

    #[staticmethod]
    #[pyo3(signature = (path, group_col = "group", label_col = "y"))]
    fn from_csv(path: &str, group_col: &str, label_col: &str) -> PyResult<Self> {
        Ok(Self { inner: jfm_core::load_csv(path, group_col, label_col).map_err(to_py)? })
    }

    #[pyo3(signature = (path, group_col = "group", label_col = "y"))]
    fn to_csv(&self, path: &str, group_col: &str, label_col: &str) -> PyResult<()> {
        jfm_core::write_csv(&self.inner, path, group_col, label_col).map_err(to_py)
    }

    #[getter]
    fn group_ids(&self) -> Vec<String> {
        self.inner.group_ids()
    }

    #[getter]
    fn group_sizes(&self) -> Vec<usize> {
        self.inner.group_sizes()
    }

    #[getter]
    fn feature_names(&self) -> Vec<String> {
        self.inner.feature_names().to_vec()
    }

    fn __repr__(&self) -> String {
        format!("Design(groups={:?}, features={})", self.inner.group_sizes(), self.inner.n_features())
    }
}

/// A fitted model.
#[pyclass(name = "Fit", module = "jfm", skip_from_py_object)]
#[derive(Clone)]
pub struct PyFit {
    inner: FitResult,
}

#[pymethods]
impl PyFit {
    #[getter]
    fn model(&self) -> String {
        self.inner.model_kind.to_string()
    }

    #[getter]
    fn group_ids(&self) -> Vec<String> {
        self.inner.group_ids.clone()
    }

    /// Coefficients on the standardized scale, one list per group.
    #[getter]
    fn coefficients(&self) -> Vec<Vec<f64>> {
        self.inner.coefficients.clone()
    }

    #[getter]
    fn intercepts(&self) -> Vec<f64> {
        self.inner.intercepts.clone()
    }

    #[getter]
    fn converged(&self) -> bool {
        self.inner.convergence.converged
    }

    #[getter]
    fn iterations(&self) -> usize {
        self.inner.convergence.iterations
    }

    #[getter]
    fn objective(&self) -> f64 {
        self.inner.convergence.objective_exact
    }

    /// Probabilities for raw feature rows belonging to `group`.
    fn predict(&self, rows: Vec<Vec<f64>>, group: &str) -> PyResult<Vec<f64>> {
        Ok(jfm_core::predict(&self.inner, &matrix(rows)?, group).map_err(to_py)?.to_vec())
    }

    /// Metric report as a dict; `truth` adds estimation metrics.
    #[pyo3(signature = (design, cutoff = 0.5, truth = None))]
    fn evaluate<'py>(
        &self,
        py: Python<'py>,
        design: &PyDesign,
        cutoff: f64,
        truth: Option<Vec<Vec<f64>>>,
    ) -> PyResult<Bound<'py, PyAny>> {
        let report = evaluate_fit(&self.inner, &design.inner, cutoff, truth.as_deref()).map_err(to_py)?;
        json_loads(py, &report.to_json().map_err(to_py)?)
    }

    fn to_json(&self) -> PyResult<String> {
        self.inner.to_json().map_err(to_py)
    }

    #[staticmethod]
    fn from_json(text: &str) -> PyResult<Self> {
        Ok(Self { inner: FitResult::from_json(text).map_err(to_py)? })
    }

    fn __repr__(&self) -> String {
        format!("Fit(model={}, groups={:?})", self.inner.model_kind, self.inner.group_ids)
    }
}

fn parse_model(name: &str) -> PyResult<ModelKind> {
    name.parse().map_err(to_py)
}

fn options(options_json: Option<&str>) -> PyResult<FitOptions> {
    match options_json {
        Some(text) => serde_json::from_str(text).map_err(|e| PyValueError::new_err(e.to_string())),
        None => Ok(FitOptions::default()),
    }
}

/// Fit `model` ("jfm", "sfm", "separate" or "ignorant"). `lambda_sp` is a
/// single value or one per group; `options` is FitOptions as JSON.
#[pyfunction]
#[pyo3(signature = (design, model, lambda_f = 0.0, lambda_sim = 0.0, lambda_sp = vec![0.01], options = None))]
fn fit(
    py: Python<'_>,
    design: &PyDesign,
    model: &str,
    lambda_f: f64,
    lambda_sim: f64,
    lambda_sp: Vec<f64>,
    options: Option<&str>,
) -> PyResult<PyFit> {
    let kind = parse_model(model)?;
    let opts = self::options(options)?;
    let d = design.inner.clone();
    let inner = py.detach(move || fit_model(kind, &d, lambda_f, lambda_sim, &lambda_sp, &opts)).map_err(to_py)?;
    Ok(PyFit { inner })
}

/// Cross-validated grid search; `tuning` is {"grid": {...}, "cv": {...}} as
/// JSON. Returns {"best": ..., "table": [...], "group_ids": [...]}.
#[pyfunction]
#[pyo3(signature = (design, model, tuning = None, options = None))]
fn grid_search<'py>(
    py: Python<'py>,
    design: &PyDesign,
    model: &str,
    tuning: Option<&str>,
    options: Option<&str>,
) -> PyResult<Bound<'py, PyAny>> {
    let kind = parse_model(model)?;
    let cfg = match tuning {
        Some(text) => TuningConfig::from_json(text).map_err(to_py)?,
        None => TuningConfig::default(),
    };
    let opts = self::options(options)?;
    let d = design.inner.clone();
    let result = py.detach(move || core_grid_search(&d, kind, &cfg.grid, &opts, &cfg.cv)).map_err(to_py)?;
    let text = serde_json::to_string(&result).map_err(|e| PyRuntimeError::new_err(e.to_string()))?;
    json_loads(py, &text)
}

/// One replicate of a resolved scenario spec (JSON): (train, test, truth dict).
#[pyfunction]
#[pyo3(signature = (spec, replicate = 0))]
fn simulate<'py>(py: Python<'py>, spec: &str, replicate: usize) -> PyResult<(PyDesign, PyDesign, Bound<'py, PyAny>)> {
    let spec = ScenarioSpec::from_json(spec).map_err(to_py)?;
    let (train, test, truth) = generate_scenario(&spec, replicate).map_err(to_py)?;
    let truth = serde_json::to_string(&truth).map_err(|e| PyRuntimeError::new_err(e.to_string()))?;
    Ok((PyDesign { inner: train }, PyDesign { inner: test }, json_loads(py, &truth)?))
}

#[pymodule]
fn jfm(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyDesign>()?;
    m.add_class::<PyFit>()?;
    m.add_function(wrap_pyfunction!(fit, m)?)?;
    m.add_function(wrap_pyfunction!(grid_search, m)?)?;
    m.add_function(wrap_pyfunction!(simulate, m)?)?;
    Ok(())
}
