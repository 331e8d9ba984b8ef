//! Python bindings: parameters, levers, single paths, ensembles, summary
//! tables and calibration.

use pyo3::exceptions::{PyKeyError, PyOSError, PyValueError};
use pyo3::prelude::*;
use pyo3::types::PyDict;

use klever_core::calibration::{self, CalibrationOptions, CalibrationTargets, EvalConfig, FreeParam, ParamBounds};
use klever_core::engine::{self, K_STAR};
use klever_core::metrics::{self, SummaryRow};
use klever_core::model::{self, CapitalState};
use klever_core::scenario::{self, ScenarioSpec};
use klever_core::{io, rng, Error, RunConfig};

fn to_py(e: Error) -> PyErr {
    match e {
        Error::Read { .. } | Error::Write { .. } => PyOSError::new_err(e.to_string()),
        other => PyValueError::new_err(other.to_string()),
    }
}

/// Base parameters of the model. Fields are read and written by name.
#[pyclass(name = "ModelParams", module = "klever", from_py_object)]
#[derive(Clone)]
pub struct PyModelParams {
    inner: model::ModelParams,
}

fn field(name: &str) -> PyResult<FreeParam> {
    FreeParam::from_name(name).ok_or_else(|| PyKeyError::new_err(format!("unknown parameter '{name}'")))
}

#[pymethods]
impl PyModelParams {
    /// The calibrator's default interior starting point.
    #[staticmethod]
    fn default_start() -> Self {
        PyModelParams {
            inner: calibration::default_start(),
        }
    }

    #[staticmethod]
    fn load(path: &str) -> PyResult<Self> {
        let inner = io::read_params(std::path::Path::new(path)).map_err(to_py)?;
        Ok(PyModelParams { inner })
    }

    #[staticmethod]
    fn from_json(text: &str) -> PyResult<Self> {
        let inner: model::ModelParams =
            serde_json::from_str(text).map_err(|e| PyValueError::new_err(e.to_string()))?;
        inner.validate().map_err(to_py)?;
        Ok(PyModelParams { inner })
    }

    fn to_json(&self) -> PyResult<String> {
        serde_json::to_string_pretty(&self.inner).map_err(|e| PyValueError::new_err(e.to_string()))
    }

    /// Value of a rate, magnitude, gain or initial-state field (`h0`, `s0`, `r0`).
    fn get(&self, name: &str) -> PyResult<f64> {
        Ok(field(name)?.get(&self.inner))
    }

    fn set(&mut self, name: &str, value: f64) -> PyResult<()> {
        let mut p = self.inner;
        field(name)?.set(&mut p, value);
        p.validate().map_err(to_py)?;
        self.inner = p;
        Ok(())
    }

    fn names(&self) -> Vec<&'static str> {
        FreeParam::BASE.iter().chain(FreeParam::GAINS.iter()).map(|p| p.name()).collect()
    }

    fn __repr__(&self) -> String {
        format!("ModelParams({})", serde_json::to_string(&self.inner).unwrap_or_default())
    }
}

#[pyclass(name = "LeverVector", module = "klever", from_py_object)]
#[derive(Clone, Copy)]
pub struct PyLeverVector {
    inner: model::LeverVector,
}

#[pymethods]
impl PyLeverVector {
    #[new]
    #[pyo3(signature = (lambda_p=0.0, lambda_m=0.0, lambda_pr=0.0, lambda_r=0.0))]
    fn new(lambda_p: f64, lambda_m: f64, lambda_pr: f64, lambda_r: f64) -> PyResult<Self> {
        let inner = model::LeverVector::new(lambda_p, lambda_m, lambda_pr, lambda_r).map_err(to_py)?;
        Ok(PyLeverVector { inner })
    }

    /// Lever settings of a named canonical scenario.
    #[staticmethod]
    fn scenario(name: &str) -> PyResult<Self> {
        let spec = scenario::canonical(name, RunConfig::default()).map_err(to_py)?;
        Ok(PyLeverVector { inner: spec.levers })
    }

    #[getter]
    fn lambda_p(&self) -> f64 {
        self.inner.lambda_p
    }

    #[getter]
    fn lambda_m(&self) -> f64 {
        self.inner.lambda_m
    }

    #[getter]
    fn lambda_pr(&self) -> f64 {
        self.inner.lambda_pr
    }

    #[getter]
    fn lambda_r(&self) -> f64 {
        self.inner.lambda_r
    }

    fn __repr__(&self) -> String {
        let l = &self.inner;
        format!(
            "LeverVector(lambda_p={}, lambda_m={}, lambda_pr={}, lambda_r={})",
            l.lambda_p, l.lambda_m, l.lambda_pr, l.lambda_r
        )
    }
}

/// Aggregated Monte Carlo ensemble for one scenario.
#[pyclass(name = "Ensemble", module = "klever")]
pub struct PyEnsemble {
    inner: engine::EnsembleResult,
}

#[pymethods]
impl PyEnsemble {
    #[getter]
    fn scenario(&self) -> &str {
        &self.inner.scenario
    }

    #[getter]
    fn n_paths(&self) -> usize {
        self.inner.n_paths()
    }

    #[getter]
    fn grid(&self) -> Vec<f64> {
        self.inner.grid.clone()
    }

    #[getter]
    fn terminal_k(&self) -> Vec<f64> {
        self.inner.terminal_k.clone()
    }

    #[getter]
    fn mean_k(&self) -> Vec<f64> {
        self.inner.mean_k_series.clone()
    }

    #[getter]
    fn p05(&self) -> Vec<f64> {
        self.inner.p05_series.clone()
    }

    #[getter]
    fn p95(&self) -> Vec<f64> {
        self.inner.p95_series.clone()
    }

    #[getter]
    fn crisis_curve(&self) -> Vec<f64> {
        self.inner.crisis_curve.clone()
    }

    /// The summary row: mean_K, sd_K, cv_pct, sharpe (None when undefined),
    /// crisis_pct and first_passage_pct.
    fn summary<'py>(&self, py: Python<'py>) -> PyResult<Bound<'py, PyDict>> {
        let row = SummaryRow::from_ensemble(&self.inner).map_err(to_py)?;
        row_dict(py, &row)
    }

    /// Writes result.json, terminal.csv and series.csv into `directory`.
    fn write(&self, directory: &str) -> PyResult<Vec<String>> {
        let files = io::write_ensemble(std::path::Path::new(directory), &self.inner).map_err(to_py)?;
        Ok(files.iter().map(|p| p.display().to_string()).collect())
    }
}

fn row_dict<'py>(py: Python<'py>, row: &SummaryRow) -> PyResult<Bound<'py, PyDict>> {
    let d = PyDict::new(py);
    d.set_item("scenario", &row.scenario)?;
    d.set_item("mean_K", row.mean_k)?;
    d.set_item("sd_K", row.sd_k)?;
    d.set_item("cv_pct", row.cv_pct)?;
    d.set_item("sharpe", row.sharpe)?;
    d.set_item("crisis_pct", row.crisis_pct)?;
    d.set_item("first_passage_pct", row.first_passage_pct)?;
    Ok(d)
}

fn run_config(n_paths: usize, seed: u64, horizon: f64, record_dt: f64) -> RunConfig {
    RunConfig {
        n_paths,
        horizon,
        record_dt,
        master_seed: seed,
        k_star: K_STAR,
    }
}

/// Names of the six canonical scenarios, in table order.
#[pyfunction]
fn scenarios() -> Vec<&'static str> {
    scenario::CANONICAL.to_vec()
}

#[pyfunction]
#[pyo3(signature = (h, s, r))]
fn composite_index(h: f64, s: f64, r: f64) -> f64 {
    model::composite_index(&CapitalState { h, s, r }, &model::Weights::default())
}

/// Advances `(h, s, r)` by `dt` years without shocks.
#[pyfunction]
fn flow(params: &PyModelParams, levers: &PyLeverVector, state: (f64, f64, f64), dt: f64) -> PyResult<(f64, f64, f64)> {
    if !(dt >= 0.0) {
        return Err(PyValueError::new_err("dt must be nonnegative"));
    }
    let eff = model::effective_params(&params.inner, &levers.inner).map_err(to_py)?;
    let x = model::flow(&CapitalState::new(state.0, state.1, state.2).map_err(to_py)?, &eff, dt);
    Ok((x.h, x.s, x.r))
}

/// One path: returns `(grid, k_series, shock_log)` with shocks as `(time, component, magnitude)`.
#[pyfunction]
#[pyo3(signature = (params, levers, seed=42, path_index=0, horizon=10.0, record_dt=0.1))]
fn simulate_path(
    params: &PyModelParams,
    levers: &PyLeverVector,
    seed: u64,
    path_index: u64,
    horizon: f64,
    record_dt: f64,
) -> PyResult<(Vec<f64>, Vec<f64>, Vec<(f64, &'static str, f64)>)> {
    run_config(1, seed, horizon, record_dt).validate().map_err(to_py)?;
    let p = &params.inner;
    let eff = model::effective_params(p, &levers.inner).map_err(to_py)?;
    let path = engine::simulate_path(&eff, &p.init, &p.weights, horizon, record_dt, &mut rng::path_rng(seed, path_index));
    let log = path
        .shock_log
        .iter()
        .map(|e| (e.time, e.component.symbol(), e.magnitude))
        .collect();
    Ok((path.grid, path.k_series, log))
}

/// Runs a named canonical scenario, or custom `levers` under the given name.
#[pyfunction]
#[pyo3(signature = (params, scenario="baseline", levers=None, n_paths=5000, seed=42, horizon=10.0, record_dt=0.1))]
fn run_ensemble(
    py: Python<'_>,
    params: &PyModelParams,
    scenario: &str,
    levers: Option<PyLeverVector>,
    n_paths: usize,
    seed: u64,
    horizon: f64,
    record_dt: f64,
) -> PyResult<PyEnsemble> {
    let run = run_config(n_paths, seed, horizon, record_dt);
    let spec = match levers {
        Some(l) => ScenarioSpec::new(scenario, l.inner, run),
        None => scenario::canonical(scenario, run).map_err(to_py)?,
    };
    let p = params.inner;
    let inner = py.detach(|| engine::run_ensemble(&spec, &p)).map_err(to_py)?;
    Ok(PyEnsemble { inner })
}

/// Summary rows of all six canonical scenarios.
#[pyfunction]
#[pyo3(signature = (params, n_paths=5000, seed=42))]
fn table1<'py>(py: Python<'py>, params: &PyModelParams, n_paths: usize, seed: u64) -> PyResult<Vec<Bound<'py, PyDict>>> {
    let p = params.inner;
    let rows = py
        .detach(|| {
            scenario::canonical_set(run_config(n_paths, seed, 10.0, 0.1))
                .iter()
                .map(|s| engine::run_ensemble(s, &p).and_then(|e| SummaryRow::from_ensemble(&e)))
                .collect::<klever_core::Result<Vec<_>>>()
        })
        .map_err(to_py)?;
    rows.iter().map(|r| row_dict(py, r)).collect()
}

#[pyfunction]
fn improvement(candidate: f64, baseline: f64) -> PyResult<f64> {
    metrics::improvement(candidate, baseline).map_err(to_py)
}

#[pyfunction]
fn cv_reduction(candidate_cv: f64, baseline_cv: f64) -> PyResult<f64> {
    metrics::cv_reduction(candidate_cv, baseline_cv).map_err(to_py)
}

/// Fits base parameters to target statistics (Table 1 when `targets_json` is None).
///
/// Returns `(params, loss, evaluations, budget_exhausted)`.
#[pyfunction]
#[pyo3(signature = (targets_json=None, budget=500, seed=42, eval_paths=2000, start=None, free_gains=false, target_loss=0.0))]
#[allow(clippy::too_many_arguments)]
fn calibrate(
    py: Python<'_>,
    targets_json: Option<&str>,
    budget: usize,
    seed: u64,
    eval_paths: usize,
    start: Option<PyModelParams>,
    free_gains: bool,
    target_loss: f64,
) -> PyResult<(PyModelParams, f64, usize, bool)> {
    let targets = match targets_json {
        Some(text) => CalibrationTargets::from_json(text).map_err(to_py)?,
        None => CalibrationTargets::table1(),
    };
    let options = CalibrationOptions {
        eval: EvalConfig {
            n_paths: eval_paths,
            master_seed: seed,
            ..EvalConfig::default()
        },
        start: start.map_or_else(calibration::default_start, |s| s.inner),
        free_gains,
        target_loss,
        ..CalibrationOptions::default()
    };
    let out = py
        .detach(|| calibration::calibrate(&targets, &ParamBounds::default(), budget, seed, &options))
        .map_err(to_py)?;
    Ok((PyModelParams { inner: out.params }, out.loss, out.evaluations, out.budget_exhausted))
}

/// The per-path seed mixing function.
#[pyfunction]
fn mix64(z: u64) -> u64 {
    rng::mix64(z)
}

#[pymodule]
fn klever(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyModelParams>()?;
    m.add_class::<PyLeverVector>()?;
    m.add_class::<PyEnsemble>()?;
    m.add_function(wrap_pyfunction!(scenarios, m)?)?;
    m.add_function(wrap_pyfunction!(composite_index, m)?)?;
    m.add_function(wrap_pyfunction!(flow, m)?)?;
    m.add_function(wrap_pyfunction!(simulate_path, m)?)?;
    m.add_function(wrap_pyfunction!(run_ensemble, m)?)?;
    m.add_function(wrap_pyfunction!(table1, m)?)?;
    m.add_function(wrap_pyfunction!(improvement, m)?)?;
    m.add_function(wrap_pyfunction!(cv_reduction, m)?)?;
    m.add_function(wrap_pyfunction!(calibrate, m)?)?;
    m.add_function(wrap_pyfunction!(mix64, m)?)?;
    m.add("K_STAR", K_STAR)?;
    Ok(())
}
