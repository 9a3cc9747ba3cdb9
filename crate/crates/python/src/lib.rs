//! Python bindings. Vectors cross the boundary as lists of floats and
//! matrices as lists of rows.

use std::path::PathBuf;

use nalgebra::{DMatrix, DVector};
use pyo3::exceptions::{PyIOError, PyRuntimeError, PyValueError};
use pyo3::prelude::*;

use vbsmooth::bench::{run_monte_carlo, summarize};
use vbsmooth::diagnostics::{pif_sweep, summarize_pif};
use vbsmooth::scenario::load_uwb_csv;
use vbsmooth::vb;
use vbsmooth::{Error, GaussianBelief, Method, OutlierGroundTruth};

fn to_py(e: Error) -> PyErr {
    match e {
        Error::Io { .. } => PyIOError::new_err(e.to_string()),
        e if e.is_config() => PyValueError::new_err(e.to_string()),
        Error::Dimension(_) => PyValueError::new_err(e.to_string()),
        e => PyRuntimeError::new_err(e.to_string()),
    }
}

fn vector(v: Vec<f64>) -> DVector<f64> {
    DVector::from_vec(v)
}

fn matrix(rows: Vec<Vec<f64>>) -> PyResult<DMatrix<f64>> {
    let n = rows.len();
    let c = rows.first().map_or(0, Vec::len);
    if rows.iter().any(|r| r.len() != c) {
        return Err(PyValueError::new_err("matrix rows must have equal length"));
    }
    Ok(DMatrix::from_row_iterator(n, c, rows.into_iter().flatten()))
}

fn rows(m: &DMatrix<f64>) -> Vec<Vec<f64>> {
    m.row_iter().map(|r| r.iter().copied().collect()).collect()
}

fn parse_method(name: &str) -> PyResult<Method> {
    name.parse().map_err(to_py)
}

/// Hyperparameters of the outlier model.
#[pyclass(name = "VbHyperparams", from_py_object)]
#[derive(Clone)]
struct PyHyperparams {
    inner: vb::VbHyperparams,
}

#[pymethods]
impl PyHyperparams {
    #[new]
    #[pyo3(signature = (**kwargs))]
    fn new(kwargs: Option<&Bound<'_, pyo3::types::PyDict>>) -> PyResult<Self> {
        let mut hp = vb::VbHyperparams::default();
        if let Some(kw) = kwargs {
            for (k, v) in kw.iter() {
                let key: String = k.extract()?;
                match key.as_str() {
                    "a" => hp.a = v.extract()?,
                    "b_shape" => hp.b_shape = v.extract()?,
                    "b_rate" => hp.b_rate = v.extract()?,
                    "theta" => hp.theta = v.extract()?,
                    "epsilon" => hp.epsilon = v.extract()?,
                    "max_iters" => hp.max_iters = v.extract()?,
                    "tol" => hp.tol = v.extract()?,
                    "imq_c" => hp.imq_c = v.extract()?,
                    "clamp_indicator" => hp.clamp_indicator = v.extract()?,
                    "fixed_b" => hp.fixed_b = v.extract()?,
                    other => return Err(PyValueError::new_err(format!("unknown hyperparameter `{other}`"))),
                }
            }
        }
        hp.validate().map_err(to_py)?;
        Ok(Self { inner: hp })
    }

    #[getter]
    fn a(&self) -> f64 {
        self.inner.a
    }
    #[getter]
    fn b_shape(&self) -> f64 {
        self.inner.b_shape
    }
    #[getter]
    fn b_rate(&self) -> f64 {
        self.inner.b_rate
    }
    #[getter]
    fn theta(&self) -> f64 {
        self.inner.theta
    }
    #[getter]
    fn epsilon(&self) -> f64 {
        self.inner.epsilon
    }
    #[getter]
    fn max_iters(&self) -> usize {
        self.inner.max_iters
    }
    #[getter]
    fn tol(&self) -> f64 {
        self.inner.tol
    }
    #[getter]
    fn imq_c(&self) -> Option<f64> {
        self.inner.imq_c
    }
    #[getter]
    fn clamp_indicator(&self) -> bool {
        self.inner.clamp_indicator
    }
    #[getter]
    fn fixed_b(&self) -> f64 {
        self.inner.fixed_b
    }

    fn alpha(&self) -> f64 {
        self.inner.alpha()
    }

    fn __repr__(&self) -> String {
        format!("{:?}", self.inner)
    }
}

/// Scenario and experiment configuration (TOML-backed).
#[pyclass(name = "ScenarioConfig", from_py_object)]
#[derive(Clone)]
struct PyConfig {
    inner: vbsmooth::ScenarioConfig,
}

#[pymethods]
impl PyConfig {
    /// Defaults, overridden by an optional TOML document.
    #[new]
    #[pyo3(signature = (toml = None))]
    fn new(toml: Option<&str>) -> PyResult<Self> {
        let inner = match toml {
            Some(t) => vbsmooth::ScenarioConfig::from_toml_str(t).map_err(to_py)?,
            None => vbsmooth::ScenarioConfig::default(),
        };
        Ok(Self { inner })
    }

    #[staticmethod]
    fn load(path: PathBuf) -> PyResult<Self> {
        Ok(Self {
            inner: vbsmooth::ScenarioConfig::load(&path).map_err(to_py)?,
        })
    }

    fn to_toml(&self) -> PyResult<String> {
        self.inner.to_toml_string().map_err(to_py)
    }

    #[getter]
    fn steps(&self) -> usize {
        self.inner.steps
    }
    #[setter]
    fn set_steps(&mut self, v: usize) {
        self.inner.steps = v;
    }
    #[getter]
    fn sensors(&self) -> usize {
        self.inner.sensors
    }
    #[setter]
    fn set_sensors(&mut self, v: usize) {
        self.inner.sensors = v;
    }
    #[getter]
    fn runs(&self) -> usize {
        self.inner.runs
    }
    #[setter]
    fn set_runs(&mut self, v: usize) {
        self.inner.runs = v;
    }
    #[getter]
    fn seed(&self) -> u64 {
        self.inner.seed
    }
    #[setter]
    fn set_seed(&mut self, v: u64) {
        self.inner.seed = v;
    }
    #[getter]
    fn outlier_rate(&self) -> f64 {
        self.inner.lambda
    }
    #[setter]
    fn set_outlier_rate(&mut self, v: f64) {
        self.inner.lambda = v;
    }
    #[getter]
    fn methods(&self) -> Vec<String> {
        self.inner.methods.iter().map(|m| m.to_string()).collect()
    }
    #[setter]
    fn set_methods(&mut self, names: Vec<String>) -> PyResult<()> {
        self.inner.methods = names.iter().map(|n| parse_method(n)).collect::<PyResult<_>>()?;
        Ok(())
    }
    #[getter]
    fn hp(&self) -> PyHyperparams {
        PyHyperparams { inner: self.inner.hp }
    }
    #[setter]
    fn set_hp(&mut self, hp: PyHyperparams) {
        self.inner.hp = hp.inner;
    }

    fn validate(&self) -> PyResult<()> {
        self.inner.validate().map_err(to_py)
    }
}

/// One dataset: model, prior, readings, and (if known) the true states and
/// outlier mask.
#[pyclass(name = "Dataset", from_py_object)]
#[derive(Clone)]
struct PyDataset {
    inner: vbsmooth::SimulatedRun,
}

#[pymethods]
impl PyDataset {
    /// Simulates run `run` of `config`.
    #[staticmethod]
    fn simulate(config: &PyConfig, run: usize) -> PyResult<Self> {
        Ok(Self {
            inner: vbsmooth::SimulatedRun::generate(&config.inner, run).map_err(to_py)?,
        })
    }

    /// Loads a UWB log (`ranges.csv` with sibling `anchors.csv` and optional
    /// `truth.csv`) under a random-walk model with process variance `q`.
    #[staticmethod]
    #[pyo3(signature = (ranges, q = 0.1, prior_scale = 10.0))]
    fn from_uwb(ranges: PathBuf, q: f64, prior_scale: f64) -> PyResult<Self> {
        let ds = load_uwb_csv(&ranges).map_err(to_py)?;
        let model = vbsmooth::DynamicsModel::random_walk(2, q).map_err(to_py)?;
        let truth: Vec<DVector<f64>> = ds
            .truth
            .unwrap_or_default()
            .iter()
            .map(|p| DVector::from_column_slice(p))
            .collect();
        let start = truth.first().cloned().unwrap_or_else(|| DVector::zeros(2));
        let prior = GaussianBelief::new(start, &model.process_noise * prior_scale).map_err(to_py)?;
        let steps = ds.measurements.len();
        let m = ds.measurements.sensor_count();
        Ok(Self {
            inner: vbsmooth::SimulatedRun {
                run: 0,
                model,
                truth,
                outliers: OutlierGroundTruth::none(steps, m),
                data: ds.measurements,
                prior,
            },
        })
    }

    #[staticmethod]
    fn load(path: PathBuf) -> PyResult<Self> {
        let text =
            std::fs::read_to_string(&path).map_err(|e| PyIOError::new_err(format!("{}: {e}", path.display())))?;
        Ok(Self {
            inner: serde_json::from_str(&text).map_err(|e| PyValueError::new_err(e.to_string()))?,
        })
    }

    fn save(&self, path: PathBuf) -> PyResult<()> {
        vbsmooth::bench::write_json(&self.inner, &path).map_err(to_py)
    }

    fn __len__(&self) -> usize {
        self.inner.data.len()
    }
    #[getter]
    fn sensor_count(&self) -> usize {
        self.inner.data.sensor_count()
    }
    #[getter]
    fn times(&self) -> Vec<f64> {
        self.inner.data.times.clone()
    }
    /// Readings per step; masked entries are `None`.
    #[getter]
    fn values(&self) -> Vec<Vec<Option<f64>>> {
        let d = &self.inner.data;
        d.values
            .iter()
            .zip(&d.mask)
            .map(|(v, m)| v.iter().zip(m).map(|(x, p)| p.then_some(*x)).collect())
            .collect()
    }
    #[getter]
    fn truth(&self) -> Vec<Vec<f64>> {
        self.inner.truth.iter().map(|x| x.iter().copied().collect()).collect()
    }
    #[getter]
    fn outlier_mask(&self) -> Vec<Vec<bool>> {
        self.inner.outliers.mask.clone()
    }
    #[getter]
    fn prior_mean(&self) -> Vec<f64> {
        self.inner.prior.mean.iter().copied().collect()
    }
}

/// Output of one smoother run.
#[pyclass(name = "SmoothResult")]
struct PySmoothResult {
    #[pyo3(get)]
    method: String,
    #[pyo3(get)]
    means: Vec<Vec<f64>>,
    #[pyo3(get)]
    covariances: Vec<Vec<Vec<f64>>>,
    /// `⟨I⟩` per step and sensor.
    #[pyo3(get)]
    weights: Vec<Vec<f64>>,
    /// `Ω` per step and sensor.
    #[pyo3(get)]
    clean_probability: Vec<Vec<f64>>,
    #[pyo3(get)]
    b_hat: Vec<f64>,
    #[pyo3(get)]
    iterations: usize,
    #[pyo3(get)]
    converged: bool,
    /// Position RMSE, when the true states are known.
    #[pyo3(get)]
    rmse: Option<f64>,
}

#[pymethods]
impl PySmoothResult {
    fn __repr__(&self) -> String {
        format!(
            "SmoothResult(method={}, steps={}, iterations={}, converged={}, rmse={:?})",
            self.method,
            self.means.len(),
            self.iterations,
            self.converged,
            self.rmse
        )
    }
}

/// Runs `method` (plain, ideal, asor, asor-imq, sor, ror) on `dataset`.
#[pyfunction]
#[pyo3(signature = (dataset, method = "asor", hp = None, kappa = 0.0))]
fn smooth(
    py: Python<'_>,
    dataset: &PyDataset,
    method: &str,
    hp: Option<PyHyperparams>,
    kappa: f64,
) -> PyResult<PySmoothResult> {
    let method = parse_method(method)?;
    let hp = hp.map(|h| h.inner).unwrap_or_default();
    let sim = &dataset.inner;
    let problem = vb::SmoothingProblem {
        model: sim.model.clone(),
        data: sim.data.clone(),
        prior: sim.prior.clone(),
        kappa,
    };
    let out = py
        .detach(|| vb::run_method(method, &problem, &hp, Some(&sim.outliers)))
        .map_err(to_py)?;
    let means = out.smoothed_means();
    let rmse = if sim.truth.len() == means.len() && !means.is_empty() {
        Some(vbsmooth::rmse(&means, &sim.truth, sim.model.position_index()).map_err(to_py)?)
    } else {
        None
    };
    let list = |v: &[DVector<f64>]| v.iter().map(|x| x.iter().copied().collect()).collect();
    Ok(PySmoothResult {
        method: method.to_string(),
        means: list(&means),
        covariances: out.trace.smoothed().map(|b| rows(&b.cov)).collect(),
        weights: list(&out.indicators.expect_i),
        clean_probability: list(&out.indicators.omega),
        b_hat: out.indicators.b_hat.clone(),
        iterations: out.iterations,
        converged: out.converged,
        rmse,
    })
}

/// Monte Carlo over `config.runs` datasets. Returns one dict per
/// (run, method).
#[pyfunction]
fn monte_carlo<'py>(py: Python<'py>, config: &PyConfig) -> PyResult<Vec<Bound<'py, pyo3::types::PyDict>>> {
    let results = py.detach(|| run_monte_carlo(&config.inner)).map_err(to_py)?;
    results
        .iter()
        .map(|r| {
            let d = pyo3::types::PyDict::new(py);
            d.set_item("method", r.method.to_string())?;
            d.set_item("run", r.run)?;
            d.set_item("rmse", r.rmse)?;
            d.set_item("wall_time", r.wall_time)?;
            d.set_item("iterations", r.iterations)?;
            d.set_item("diverged", r.diverged)?;
            Ok(d)
        })
        .collect()
}

/// Mean position RMSE per method over a Monte Carlo batch.
#[pyfunction]
fn mean_rmse(py: Python<'_>, config: &PyConfig) -> PyResult<Vec<(String, Option<f64>, usize)>> {
    let results = py.detach(|| run_monte_carlo(&config.inner)).map_err(to_py)?;
    Ok(summarize(&results)
        .methods
        .iter()
        .map(|m| (m.method.to_string(), m.mean_rmse, m.diverged))
        .collect())
}

/// PIF sweep; returns `(method, scale, median, max)` rows.
#[pyfunction]
fn pif_summary(
    py: Python<'_>,
    config: &PyConfig,
    scales: Vec<f64>,
    runs: usize,
) -> PyResult<Vec<(String, f64, f64, f64)>> {
    let reports = py.detach(|| pif_sweep(&config.inner, &scales, runs)).map_err(to_py)?;
    Ok(summarize_pif(&reports)
        .into_iter()
        .map(|s| (s.method.to_string(), s.corruption_scale, s.median, s.max))
        .collect())
}

/// `KL(N(mean0, cov0) ‖ N(mean1, cov1))`.
#[pyfunction]
fn gaussian_kl(mean0: Vec<f64>, cov0: Vec<Vec<f64>>, mean1: Vec<f64>, cov1: Vec<Vec<f64>>) -> PyResult<f64> {
    let g0 = GaussianBelief::new(vector(mean0), matrix(cov0)?).map_err(to_py)?;
    let g1 = GaussianBelief::new(vector(mean1), matrix(cov1)?).map_err(to_py)?;
    vbsmooth::gaussian_kl(&g0, &g1).map_err(to_py)
}

/// Frobenius-nearest symmetric matrix with eigenvalues `>= floor`.
#[pyfunction]
#[pyo3(signature = (m, floor = 1e-10))]
fn nearest_pd(m: Vec<Vec<f64>>, floor: f64) -> PyResult<Vec<Vec<f64>>> {
    let m = matrix(m)?;
    if !m.is_square() {
        return Err(PyValueError::new_err("matrix must be square"));
    }
    Ok(rows(&vbsmooth::nearest_pd(&m, floor)))
}

/// Probability that a reading with expected normalized squared residual `w`
/// is clean.
#[pyfunction]
#[pyo3(signature = (w, b_hat, hp = None))]
fn omega(w: f64, b_hat: f64, hp: Option<PyHyperparams>) -> f64 {
    vb::omega(w, b_hat, &hp.map(|h| h.inner).unwrap_or_default())
}

/// `⟨I⟩` for a given `Ω` and `β`.
#[pyfunction]
#[pyo3(signature = (omega, beta, hp = None))]
fn indicator_expectation(omega: f64, beta: f64, hp: Option<PyHyperparams>) -> f64 {
    vb::indicator_expectation(omega, beta, &hp.map(|h| h.inner).unwrap_or_default())
}

/// Closed-form `b̂` update for one step.
#[pyfunction]
#[pyo3(signature = (omega_row, beta_row, hp = None))]
fn update_b(omega_row: Vec<f64>, beta_row: Vec<f64>, hp: Option<PyHyperparams>) -> PyResult<f64> {
    vb::update_b(&omega_row, &beta_row, &hp.map(|h| h.inner).unwrap_or_default()).map_err(to_py)
}

#[pyfunction]
fn methods() -> Vec<&'static str> {
    Method::ALL.iter().map(|m| m.name()).collect()
}

#[pymodule(name = "vbsmooth")]
fn vbsmooth_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyHyperparams>()?;
    m.add_class::<PyConfig>()?;
    m.add_class::<PyDataset>()?;
    m.add_class::<PySmoothResult>()?;
    m.add_function(wrap_pyfunction!(smooth, m)?)?;
    m.add_function(wrap_pyfunction!(monte_carlo, m)?)?;
    m.add_function(wrap_pyfunction!(mean_rmse, m)?)?;
    m.add_function(wrap_pyfunction!(pif_summary, m)?)?;
    m.add_function(wrap_pyfunction!(gaussian_kl, m)?)?;
    m.add_function(wrap_pyfunction!(nearest_pd, m)?)?;
    m.add_function(wrap_pyfunction!(omega, m)?)?;
    m.add_function(wrap_pyfunction!(indicator_expectation, m)?)?;
    m.add_function(wrap_pyfunction!(update_b, m)?)?;
    m.add_function(wrap_pyfunction!(methods, m)?)?;
    Ok(())
}
