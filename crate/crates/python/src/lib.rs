//! Python bindings: scenarios, the emulator, training and comparison.

use std::path::PathBuf;

use napinn::emulator::{self, RunOptions, StepParams};
use napinn::metrics;
use napinn::scenario::{self, TimeSeries};
use napinn::trainer::{self, Mode, TrainOutput, TrainedModel};
use napinn::Error;
use pyo3::create_exception;
use pyo3::exceptions::{PyException, PyIOError, PyValueError};
use pyo3::prelude::*;
use pyo3::types::PyDict;

create_exception!(napinn_py, NonConvergenceError, PyException);
create_exception!(napinn_py, NonFiniteError, PyException);

fn to_py(e: Error) -> PyErr {
    let msg = e.to_string();
    match e {
        Error::NonConvergence { .. } => NonConvergenceError::new_err(msg),
        Error::NonFinite { .. } => NonFiniteError::new_err(msg),
        Error::Io { .. } => PyIOError::new_err(msg),
        _ => PyValueError::new_err(msg),
    }
}

#[pyclass(name = "Scenario", module = "napinn_py", skip_from_py_object)]
#[derive(Clone)]
pub struct PyScenario {
    inner: scenario::Scenario,
}

#[pymethods]
impl PyScenario {
    #[new]
    #[pyo3(signature = (n_tanks = 2))]
    fn new(n_tanks: usize) -> PyResult<Self> {
        let inner = scenario::Scenario::with_tanks(n_tanks);
        inner.validate().map_err(to_py)?;
        Ok(Self { inner })
    }

    #[staticmethod]
    fn from_file(path: PathBuf) -> PyResult<Self> {
        Ok(Self {
            inner: scenario::load_scenario(&path).map_err(to_py)?,
        })
    }

    #[getter]
    fn n_tanks(&self) -> usize {
        self.inner.n_tanks
    }

    #[getter]
    fn loss_coefficient(&self) -> f64 {
        self.inner.loss_coefficient
    }

    #[setter]
    fn set_loss_coefficient(&mut self, k: f64) {
        self.inner.loss_coefficient = k;
    }

    /// Switch one emulator term: "advection", "form_wall_loss" or
    /// "interphase_exchange".
    fn set_term(&mut self, name: &str, enabled: bool) -> PyResult<()> {
        let t = &mut self.inner.toggles;
        match name {
            "advection" => t.advection = enabled,
            "form_wall_loss" => t.form_wall_loss = enabled,
            "interphase_exchange" => t.interphase_exchange = enabled,
            _ => return Err(PyValueError::new_err(format!("unknown term {name:?}"))),
        }
        Ok(())
    }

    fn total_mass(&self, depths: Vec<f64>) -> f64 {
        self.inner.total_mass(&depths)
    }

    fn content_hash(&self) -> String {
        self.inner.content_hash()
    }

    fn to_config(&self) -> String {
        self.inner.to_config().to_text()
    }

    fn __repr__(&self) -> String {
        format!("Scenario(n_tanks={})", self.inner.n_tanks)
    }
}

#[pyclass(name = "Trajectory", module = "napinn_py")]
pub struct PyTrajectory {
    inner: TimeSeries,
    peak_velocity: Option<f64>,
    extrapolated: bool,
}

#[pymethods]
impl PyTrajectory {
    #[getter]
    fn n_tanks(&self) -> usize {
        self.inner.n_tanks
    }

    #[getter]
    fn times(&self) -> Vec<f64> {
        self.inner.times()
    }

    /// One list of tank depths per record.
    #[getter]
    fn depths(&self) -> Vec<Vec<f64>> {
        self.inner.states.iter().map(|s| s.depths.clone()).collect()
    }

    /// One list of pipe velocities per record.
    #[getter]
    fn velocities(&self) -> Vec<Vec<f64>> {
        self.inner.states.iter().map(|s| s.velocities.clone()).collect()
    }

    #[getter]
    fn termination(&self) -> String {
        format!("{:?}", self.inner.meta.termination)
    }

    #[getter]
    fn peak_velocity(&self) -> Option<f64> {
        self.peak_velocity
    }

    /// True when a model prediction reaches past its training window.
    #[getter]
    fn extrapolated(&self) -> bool {
        self.extrapolated
    }

    fn save_csv(&self, path: PathBuf) -> PyResult<()> {
        self.inner.save_csv(&path).map_err(to_py)
    }

    #[staticmethod]
    fn load_csv(path: PathBuf) -> PyResult<Self> {
        Ok(Self {
            inner: TimeSeries::load_csv(&path).map_err(to_py)?,
            peak_velocity: None,
            extrapolated: false,
        })
    }

    fn __len__(&self) -> usize {
        self.inner.len()
    }
}

#[pyfunction]
#[pyo3(signature = (scenario, dt = 0.01, t_end = 5000.0, stop_on_equalization = true, record_interval = 1, max_iterations = 100))]
fn simulate(
    py: Python<'_>,
    scenario: &PyScenario,
    dt: f64,
    t_end: f64,
    stop_on_equalization: bool,
    record_interval: usize,
    max_iterations: usize,
) -> PyResult<PyTrajectory> {
    let params = StepParams {
        dt,
        max_iterations,
        ..StepParams::default()
    };
    let opts = RunOptions {
        stop_on_equalization,
        record_interval,
        ..RunOptions::until(t_end)
    };
    let s = scenario.inner.clone();
    let sim = py.detach(|| emulator::run_with(&s, &params, &opts)).map_err(to_py)?;
    Ok(PyTrajectory {
        peak_velocity: Some(sim.stats.overall_peak_velocity()),
        inner: sim.series,
        extrapolated: false,
    })
}

/// Converged velocity and pass count of one pipe update.
#[pyfunction]
#[pyo3(signature = (v_old, alpha, alpha_old, dz, scenario, dt = 0.01))]
fn velocity_fixed_point(
    v_old: f64,
    alpha: f64,
    alpha_old: f64,
    dz: f64,
    scenario: &PyScenario,
    dt: f64,
) -> PyResult<(f64, usize)> {
    let p = StepParams {
        dt,
        ..StepParams::default()
    };
    emulator::velocity_fixed_point(v_old, alpha, alpha_old, dz, &scenario.inner, &p).map_err(to_py)
}

#[pyclass(name = "TrainingConfig", module = "napinn_py", skip_from_py_object)]
#[derive(Clone)]
pub struct PyTrainingConfig {
    inner: trainer::TrainingConfig,
    n_tanks: usize,
}

#[pymethods]
impl PyTrainingConfig {
    /// Defaults for `n_tanks` tanks; `mode` is "vanilla" or "node_assigned".
    #[new]
    #[pyo3(signature = (n_tanks = 2, mode = "node_assigned"))]
    fn new(n_tanks: usize, mode: &str) -> PyResult<Self> {
        let mode: Mode = mode.parse().map_err(to_py)?;
        Ok(Self {
            inner: trainer::default_config(n_tanks, mode),
            n_tanks,
        })
    }

    /// Named preset such as "vanilla-2" or "napinn-3".
    #[staticmethod]
    fn preset(name: &str) -> PyResult<Self> {
        let (n_tanks, inner) = trainer::preset(name).map_err(to_py)?;
        Ok(Self { inner, n_tanks })
    }

    #[getter]
    fn n_tanks(&self) -> usize {
        self.n_tanks
    }

    #[getter]
    fn mode(&self) -> String {
        self.inner.mode.to_string()
    }

    #[getter]
    fn epochs(&self) -> usize {
        self.inner.epochs
    }

    #[setter]
    fn set_epochs(&mut self, v: usize) {
        self.inner.epochs = v;
    }

    #[getter]
    fn n_collocation(&self) -> usize {
        self.inner.n_collocation
    }

    #[setter]
    fn set_n_collocation(&mut self, v: usize) {
        self.inner.n_collocation = v;
    }

    #[getter]
    fn end_time(&self) -> f64 {
        self.inner.end_time
    }

    #[setter]
    fn set_end_time(&mut self, v: f64) {
        self.inner.end_time = v;
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
    fn base_lr(&self) -> f64 {
        self.inner.base_lr
    }

    #[setter]
    fn set_base_lr(&mut self, v: f64) {
        self.inner.base_lr = v;
    }

    #[getter]
    fn hidden_layers(&self) -> usize {
        self.inner.hidden_layers
    }

    #[setter]
    fn set_hidden_layers(&mut self, v: usize) {
        self.inner.hidden_layers = v;
    }

    #[getter]
    fn hidden_width(&self) -> usize {
        self.inner.hidden_width
    }

    #[setter]
    fn set_hidden_width(&mut self, v: usize) {
        self.inner.hidden_width = v;
    }

    fn total_params(&self) -> usize {
        self.inner.total_params(self.n_tanks)
    }

    fn to_config(&self) -> String {
        self.inner.to_config().to_text()
    }
}

#[pyclass(name = "Model", module = "napinn_py")]
pub struct PyModel {
    inner: TrainedModel,
}

#[pymethods]
impl PyModel {
    #[staticmethod]
    fn load(dir: PathBuf) -> PyResult<Self> {
        Ok(Self {
            inner: TrainedModel::load(&dir).map_err(to_py)?,
        })
    }

    fn save(&self, dir: PathBuf) -> PyResult<()> {
        self.inner.save(&dir).map_err(to_py)
    }

    #[getter]
    fn n_tanks(&self) -> usize {
        self.inner.n_tanks()
    }

    #[getter]
    fn mode(&self) -> String {
        self.inner.mode.to_string()
    }

    #[getter]
    fn t_max(&self) -> f64 {
        self.inner.t_max
    }

    fn total_params(&self) -> usize {
        self.inner.total_params()
    }

    /// Collocation times the model was trained on.
    fn grid(&self) -> PyResult<Vec<f64>> {
        Ok(self.inner.grid().map_err(to_py)?.points)
    }

    fn predict(&self, times: Vec<f64>) -> PyResult<PyTrajectory> {
        let p = self.inner.predict(&times).map_err(to_py)?;
        Ok(PyTrajectory {
            inner: p.series,
            peak_velocity: None,
            extrapolated: p.extrapolated,
        })
    }

    /// Per-epoch records as dicts with keys epoch, total, momentum,
    /// continuity and lr.
    fn loss_history<'py>(&self, py: Python<'py>) -> PyResult<Vec<Bound<'py, PyDict>>> {
        self.inner
            .history
            .iter()
            .map(|r| {
                let d = PyDict::new(py);
                d.set_item("epoch", r.epoch)?;
                d.set_item("total", r.total)?;
                d.set_item("momentum", r.momentum)?;
                d.set_item("continuity", r.continuity)?;
                d.set_item("lr", r.lr)?;
                Ok(d)
            })
            .collect()
    }
}

#[pyfunction]
#[pyo3(signature = (config, scenario = None, out_dir = None))]
fn train(
    py: Python<'_>,
    config: &PyTrainingConfig,
    scenario: Option<&PyScenario>,
    out_dir: Option<PathBuf>,
) -> PyResult<PyModel> {
    let s = scenario
        .map(|s| s.inner.clone())
        .unwrap_or_else(|| scenario::Scenario::with_tanks(config.n_tanks));
    let cfg = config.inner.clone();
    let out = TrainOutput { dir: out_dir };
    let inner = py
        .detach(|| trainer::train_with(&cfg, &s, &out, |_| {}))
        .map_err(to_py)?;
    Ok(PyModel { inner })
}

/// Pooled MAE/MSE of `model` against `reference` on `grid`.
#[pyfunction]
fn compare<'py>(
    py: Python<'py>,
    model: &PyTrajectory,
    reference: &PyTrajectory,
    grid: Vec<f64>,
) -> PyResult<Bound<'py, PyDict>> {
    let r = metrics::compare(&model.inner, &reference.inner, &grid).map_err(to_py)?;
    let d = PyDict::new(py);
    d.set_item("height_mae", r.height_mae)?;
    d.set_item("height_mse", r.height_mse)?;
    d.set_item("velocity_mae", r.velocity_mae)?;
    d.set_item("velocity_mse", r.velocity_mse)?;
    for v in &r.variables {
        d.set_item(format!("{}_mae", v.name), v.mae)?;
    }
    Ok(d)
}

#[pymodule]
fn napinn_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyScenario>()?;
    m.add_class::<PyTrajectory>()?;
    m.add_class::<PyTrainingConfig>()?;
    m.add_class::<PyModel>()?;
    m.add_function(wrap_pyfunction!(simulate, m)?)?;
    m.add_function(wrap_pyfunction!(velocity_fixed_point, m)?)?;
    m.add_function(wrap_pyfunction!(train, m)?)?;
    m.add_function(wrap_pyfunction!(compare, m)?)?;
    m.add("NonConvergenceError", m.py().get_type::<NonConvergenceError>())?;
    m.add("NonFiniteError", m.py().get_type::<NonFiniteError>())?;
    Ok(())
}
