//! Python bindings for the `irock` crate.

use irock_core::avar::{avar as compute_avar, functionals_from_dgp, AvarMethod, CovariateSource, DEFAULT_SAMPLE_SIZE};
use irock_core::bootstrap::bootstrap_se as core_bootstrap;
use irock_core::disparity::{fit_disparity, fit_tail, DisparityOptions, Tail};
use irock_core::estimator::{Estimator, EstimatorConfig};
use irock_core::load::{load_csv, ColumnRoles, CovariateSpec, MissingPolicy};
use irock_core::simulate::{run_monte_carlo, Candidate, DgpSpec};
use irock_core::tail::QuantileBackend;
use irock_core::{ColumnKind, QuantileLevel};
use pyo3::exceptions::PyValueError;
use pyo3::prelude::*;
use pyo3::types::PyDict;

fn err(e: irock_core::Error) -> PyErr {
    PyValueError::new_err(e.to_string())
}

fn parse<T: std::str::FromStr<Err = irock_core::Error>>(s: &str) -> PyResult<T> {
    s.parse().map_err(err)
}

fn parse_backend(s: &str) -> PyResult<QuantileBackend> {
    serde_json::from_value(serde_json::Value::String(s.into()))
        .map_err(|_| PyValueError::new_err(format!("unknown backend '{s}'")))
}

fn parse_tail(s: &str) -> PyResult<Tail> {
    match s {
        "upper" => Ok(Tail::Upper),
        "lower" => Ok(Tail::Lower),
        _ => Err(PyValueError::new_err(format!("tail must be 'upper' or 'lower', got '{s}'"))),
    }
}

fn config(tau: f64, delta: Option<f64>, backend: Option<&str>) -> PyResult<EstimatorConfig> {
    let mut c = EstimatorConfig::new(QuantileLevel::new(tau).map_err(err)?);
    c.irock.delta = delta;
    if let Some(b) = backend {
        c.irock.backend = parse_backend(b)?;
    }
    Ok(c)
}

/// Covariates and a response. An intercept is added automatically.
#[pyclass(name = "Dataset", module = "irock", frozen)]
struct PyDataset {
    inner: irock_core::Dataset,
    groups: Option<Vec<String>>,
}

#[pymethods]
impl PyDataset {
    /// `x` is a list of covariate rows; `discrete` flags covariates taking few values.
    #[new]
    #[pyo3(signature = (x, y, discrete=None, names=None, groups=None))]
    fn new(
        x: Vec<Vec<f64>>,
        y: Vec<f64>,
        discrete: Option<Vec<bool>>,
        names: Option<Vec<String>>,
        groups: Option<Vec<String>>,
    ) -> PyResult<Self> {
        let p = x.first().map_or(0, Vec::len);
        let kinds = match discrete {
            Some(d) => d.into_iter().map(|b| if b { ColumnKind::Discrete } else { ColumnKind::Continuous }).collect(),
            None => vec![ColumnKind::Continuous; p],
        };
        let mut inner = irock_core::Dataset::from_rows(&x, y, kinds).map_err(err)?;
        if let Some(n) = names {
            if n.len() != p {
                return Err(PyValueError::new_err(format!("{} names for {p} covariates", n.len())));
            }
            inner = inner.with_names(n);
        }
        if let Some(g) = &groups {
            if g.len() != inner.n() {
                return Err(PyValueError::new_err(format!("{} group labels for {} rows", g.len(), inner.n())));
            }
        }
        Ok(Self { inner, groups })
    }

    /// Reads a CSV. Covariates use the `name[:continuous|discrete|categorical[=baseline]]` syntax.
    #[staticmethod]
    #[pyo3(signature = (path, response, covariates, group=None, missing="drop"))]
    fn from_csv(
        path: &str,
        response: &str,
        covariates: Vec<String>,
        group: Option<String>,
        missing: &str,
    ) -> PyResult<Self> {
        let roles = ColumnRoles {
            response: response.to_string(),
            covariates: covariates.iter().map(|c| parse::<CovariateSpec>(c)).collect::<PyResult<_>>()?,
            group,
            missing: parse::<MissingPolicy>(missing)?,
        };
        let loaded = load_csv(path, &roles).map_err(err)?;
        Ok(Self { inner: loaded.data, groups: loaded.groups })
    }

    /// Draws `n` observations from a named simulation design.
    #[staticmethod]
    #[pyo3(signature = (spec, n, seed=1))]
    fn simulate(spec: &str, n: usize, seed: u64) -> PyResult<Self> {
        let inner = DgpSpec::from_name(spec).and_then(|s| s.sample(n, seed)).map_err(err)?;
        Ok(Self { inner, groups: None })
    }

    #[getter]
    fn n(&self) -> usize {
        self.inner.n()
    }

    #[getter]
    fn names(&self) -> Vec<String> {
        self.inner.names.clone()
    }

    #[getter]
    fn y(&self) -> Vec<f64> {
        self.inner.y.clone()
    }

    #[getter]
    fn groups(&self) -> Option<Vec<String>> {
        self.groups.clone()
    }

    /// Covariate rows without the intercept.
    #[getter]
    fn x(&self) -> Vec<Vec<f64>> {
        (0..self.inner.n()).map(|i| self.inner.row(i)[1..].to_vec()).collect()
    }

    fn __len__(&self) -> usize {
        self.inner.n()
    }

    fn __repr__(&self) -> String {
        format!("Dataset(n={}, covariates={:?})", self.inner.n(), self.inner.names)
    }
}

#[pyclass(name = "FitResult", module = "irock", frozen, get_all)]
struct PyFitResult {
    method: String,
    tau: f64,
    names: Vec<String>,
    coefficients: Vec<f64>,
    standard_errors: Option<Vec<f64>>,
    objective: f64,
    warnings: Vec<String>,
}

#[pymethods]
impl PyFitResult {
    fn as_dict<'py>(&self, py: Python<'py>) -> PyResult<Bound<'py, PyDict>> {
        let d = PyDict::new(py);
        for (name, b) in self.names.iter().zip(&self.coefficients) {
            d.set_item(name, b)?;
        }
        Ok(d)
    }

    fn __repr__(&self) -> String {
        let parts: Vec<String> =
            self.names.iter().zip(&self.coefficients).map(|(n, b)| format!("{n}={b:.6}")).collect();
        format!("FitResult({}, tau={}, {})", self.method, self.tau, parts.join(", "))
    }
}

fn coefficient_names(data: &irock_core::Dataset) -> Vec<String> {
    std::iter::once("(intercept)".to_string()).chain(data.names.iter().cloned()).collect()
}

/// Fits one estimator at level `tau`. `tail="lower"` fits the left tail.
#[pyfunction]
#[pyo3(signature = (data, estimator="irock", tau=0.9, delta=None, backend=None, tail="upper", bootstrap=None, seed=1))]
#[allow(clippy::too_many_arguments)]
fn fit(
    py: Python<'_>,
    data: &PyDataset,
    estimator: &str,
    tau: f64,
    delta: Option<f64>,
    backend: Option<&str>,
    tail: &str,
    bootstrap: Option<usize>,
    seed: u64,
) -> PyResult<PyFitResult> {
    let est = parse::<Estimator>(estimator)?;
    let cfg = config(tau, delta, backend)?;
    let tail = parse_tail(tail)?;
    let d = &data.inner;
    let (f, se) = py
        .detach(|| -> irock_core::Result<_> {
            let f = fit_tail(est, d, &cfg, tail)?;
            let se = match bootstrap {
                Some(b) => Some(core_bootstrap(d, est, &cfg, b, seed)?.standard_errors),
                None => None,
            };
            Ok((f, se))
        })
        .map_err(err)?;
    Ok(PyFitResult {
        method: f.method,
        tau: f.tau,
        names: coefficient_names(d),
        coefficients: f.coefficients,
        standard_errors: se.or(f.standard_errors),
        objective: f.objective,
        warnings: f.diagnostics.warnings,
    })
}

/// Pairs-bootstrap standard errors from `b` resamples.
#[pyfunction]
#[pyo3(signature = (data, estimator="irock", tau=0.9, b=200, seed=1))]
fn bootstrap_se(
    py: Python<'_>,
    data: &PyDataset,
    estimator: &str,
    tau: f64,
    b: usize,
    seed: u64,
) -> PyResult<Vec<f64>> {
    let est = parse::<Estimator>(estimator)?;
    let cfg = config(tau, None, None)?;
    let d = &data.inner;
    py.detach(|| core_bootstrap(d, est, &cfg, b, seed)).map(|r| r.standard_errors).map_err(err)
}

/// Per-group fits and contrasts against `baseline`. Returns a JSON-shaped dict.
#[pyfunction]
#[pyo3(signature = (data, baseline, estimator="irock", tau=0.9, tail="upper", bootstrap=None, seed=1))]
#[allow(clippy::too_many_arguments)]
fn disparity<'py>(
    py: Python<'py>,
    data: &PyDataset,
    baseline: &str,
    estimator: &str,
    tau: f64,
    tail: &str,
    bootstrap: Option<usize>,
    seed: u64,
) -> PyResult<Bound<'py, PyAny>> {
    let groups = data.groups.as_ref().ok_or_else(|| PyValueError::new_err("dataset has no group labels"))?;
    let cfg = config(tau, None, None)?;
    let opts = DisparityOptions {
        estimator: parse::<Estimator>(estimator)?,
        config: &cfg,
        tail: parse_tail(tail)?,
        baseline,
        bootstrap: bootstrap.map(|b| (b, seed)),
    };
    let d = &data.inner;
    let r = py.detach(|| fit_disparity(d, groups, &opts)).map_err(err)?;
    json_to_py(py, &serde_json::to_value(&r).map_err(|e| PyValueError::new_err(e.to_string()))?)
}

/// Monte Carlo comparison on a named design. Returns per-estimator bias, SD
/// and RMSE plus RMSE ratios against the first estimator.
#[pyfunction]
#[pyo3(signature = (spec, estimators=vec!["irock".to_string(), "ts".to_string()], n=1000, reps=200, tau=0.9, seed=1))]
fn simulate<'py>(
    py: Python<'py>,
    spec: &str,
    estimators: Vec<String>,
    n: usize,
    reps: usize,
    tau: f64,
    seed: u64,
) -> PyResult<Bound<'py, PyDict>> {
    let spec = DgpSpec::from_name(spec).map_err(err)?;
    let cfg = config(tau, None, None)?;
    let candidates: Vec<Candidate> = estimators
        .iter()
        .map(|e| parse::<Estimator>(e).map(|e| Candidate::new(e, cfg.clone())))
        .collect::<PyResult<_>>()?;
    let report = py.detach(|| run_monte_carlo(&spec, &candidates, reps, n, tau, seed)).map_err(err)?;
    let out = PyDict::new(py);
    out.set_item("true_beta", report.true_beta.clone())?;
    let base = &report.estimators[0].label;
    for e in &report.estimators {
        let d = PyDict::new(py);
        d.set_item("mean", e.mean.clone())?;
        d.set_item("sd", e.sd.clone())?;
        d.set_item("relative_bias", e.relative_bias.clone())?;
        d.set_item("rmse", e.rmse.clone())?;
        d.set_item("failures", e.failures)?;
        d.set_item("rmse_ratio", report.rmse_ratio(base, &e.label).map_err(err)?)?;
        out.set_item(&e.label, d)?;
    }
    Ok(out)
}

/// Asymptotic covariance matrices on a named design, keyed by method.
#[pyfunction]
#[pyo3(signature = (spec, tau=0.9, methods=None))]
fn avar<'py>(py: Python<'py>, spec: &str, tau: f64, methods: Option<Vec<String>>) -> PyResult<Bound<'py, PyDict>> {
    let spec = DgpSpec::from_name(spec).map_err(err)?;
    let methods = match methods {
        Some(m) => m.iter().map(|s| parse::<AvarMethod>(s)).collect::<PyResult<Vec<_>>>()?,
        None => AvarMethod::standard(),
    };
    let source = match spec.support() {
        Some(_) => CovariateSource::Support,
        None => CovariateSource::Sample { size: DEFAULT_SAMPLE_SIZE, seed: 1 },
    };
    let fm = py.detach(|| functionals_from_dgp(&spec, tau, &source)).map_err(err)?;
    let out = PyDict::new(py);
    for m in &methods {
        let r = compute_avar(m, &fm, tau).map_err(err)?;
        let s = &r.sandwich;
        let rows: Vec<Vec<f64>> = (0..s.nrows()).map(|i| (0..s.ncols()).map(|j| s[(i, j)]).collect()).collect();
        out.set_item(m.name(), rows)?;
    }
    Ok(out)
}

/// Population coefficients of a named design at level `tau`.
#[pyfunction]
#[pyo3(signature = (spec, tau=0.9))]
fn true_beta(spec: &str, tau: f64) -> PyResult<Vec<f64>> {
    DgpSpec::from_name(spec).and_then(|s| s.true_beta(tau)).map_err(err)
}

fn json_to_py<'py>(py: Python<'py>, v: &serde_json::Value) -> PyResult<Bound<'py, PyAny>> {
    use pyo3::IntoPyObjectExt;
    use serde_json::Value;
    Ok(match v {
        Value::Null => py.None().into_bound(py),
        Value::Bool(b) => b.into_bound_py_any(py)?,
        Value::Number(n) => n.as_f64().into_bound_py_any(py)?,
        Value::String(s) => s.into_bound_py_any(py)?,
        Value::Array(a) => a.iter().map(|x| json_to_py(py, x)).collect::<PyResult<Vec<_>>>()?.into_bound_py_any(py)?,
        Value::Object(o) => {
            let d = PyDict::new(py);
            for (k, x) in o {
                d.set_item(k, json_to_py(py, x)?)?;
            }
            d.into_any()
        }
    })
}

#[pymodule]
#[pyo3(name = "irock")]
fn irock_module(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyDataset>()?;
    m.add_class::<PyFitResult>()?;
    m.add_function(wrap_pyfunction!(fit, m)?)?;
    m.add_function(wrap_pyfunction!(bootstrap_se, m)?)?;
    m.add_function(wrap_pyfunction!(disparity, m)?)?;
    m.add_function(wrap_pyfunction!(simulate, m)?)?;
    m.add_function(wrap_pyfunction!(avar, m)?)?;
    m.add_function(wrap_pyfunction!(true_beta, m)?)?;
    m.add("ESTIMATORS", Estimator::ALL.iter().map(|e| e.name()).collect::<Vec<_>>())?;
    Ok(())
}
