//! Python bindings: the well model, the calibrated bath, scenario runs and
//! the two-qubit entanglement measures.

use std::path::PathBuf;

use num_complex::Complex64;
use pyo3::exceptions::{PyRuntimeError, PyValueError};
use pyo3::prelude::*;
use pyo3::types::PyDict;

use wellbath::bath::{BathSpec, CalibratedBath};
use wellbath::cli::{self, RunError};
use wellbath::error::Error as ModelError;
use wellbath::linalg::C64;
use wellbath::pair::{self, BellKind};
use wellbath::well::{WellModel, WellSpec};

fn model_err(e: ModelError) -> PyErr {
    PyValueError::new_err(e.to_string())
}

fn run_err(e: RunError) -> PyErr {
    match e {
        RunError::Config(c) => PyValueError::new_err(c.to_string()),
        other => PyRuntimeError::new_err(other.to_string()),
    }
}

/// Resolves keyword options the same way the command line resolves flags.
fn config(scenario: &str, options: Option<&Bound<'_, PyDict>>) -> PyResult<cli::RunConfig> {
    let mut flags = vec![("scenario".to_string(), scenario.to_string())];
    if let Some(options) = options {
        for (k, v) in options.iter() {
            flags.push((k.extract::<String>()?, v.str()?.to_string()));
        }
    }
    cli::load_config(None, &flags).map_err(|e| run_err(e.into()))
}

/// Double well with `levels` doublets.
#[pyclass(name = "WellModel", frozen)]
struct PyWellModel {
    inner: WellModel,
}

#[pymethods]
impl PyWellModel {
    #[new]
    #[pyo3(signature = (levels = 20))]
    fn new(levels: usize) -> PyResult<Self> {
        let inner = WellModel::new(WellSpec::default().with_levels(levels)).map_err(model_err)?;
        Ok(PyWellModel { inner })
    }

    #[getter]
    fn n_levels(&self) -> usize {
        self.inner.n_levels()
    }

    #[getter]
    fn energies(&self) -> Vec<f64> {
        self.inner.energies().to_vec()
    }

    /// Tunnelling splittings `g_i`.
    #[getter]
    fn splittings(&self) -> Vec<f64> {
        self.inner.splittings().to_vec()
    }

    fn dipole(&self) -> Vec<Vec<f64>> {
        let d = self.inner.dipole();
        (0..d.nrows()).map(|i| d.row(i).iter().copied().collect()).collect()
    }

    fn __repr__(&self) -> String {
        format!("WellModel(levels={})", self.inner.n_levels())
    }
}

/// Thermal bath with its rate table and thermal averages.
#[pyclass(name = "Bath", frozen)]
struct PyBath {
    inner: CalibratedBath,
}

#[pymethods]
impl PyBath {
    /// Bath whose coupling gives `⟨Γ⟩/⟨g⟩ = ratio`.
    #[staticmethod]
    fn for_ratio(model: &PyWellModel, temperature: f64, ratio: f64) -> PyResult<Self> {
        let inner = CalibratedBath::for_ratio(&model.inner, temperature, ratio).map_err(model_err)?;
        Ok(PyBath { inner })
    }

    #[staticmethod]
    fn with_coupling(model: &PyWellModel, temperature: f64, coupling: f64) -> PyResult<Self> {
        let inner = CalibratedBath::with_coupling(&model.inner, BathSpec::new(temperature, coupling)).map_err(model_err)?;
        Ok(PyBath { inner })
    }

    #[getter]
    fn coupling(&self) -> f64 {
        self.inner.spec.coupling
    }

    #[getter]
    fn temperature(&self) -> f64 {
        self.inner.spec.temperature
    }

    #[getter]
    fn mean_gamma(&self) -> f64 {
        self.inner.averages.gamma
    }

    #[getter]
    fn mean_g(&self) -> f64 {
        self.inner.averages.g
    }

    #[getter]
    fn ratio(&self) -> f64 {
        self.inner.averages.ratio()
    }

    /// Transition rate from level `i` to level `j`.
    fn rate(&self, i: usize, j: usize) -> PyResult<f64> {
        let n = self.inner.table.n_levels();
        if i >= n || j >= n {
            return Err(PyValueError::new_err(format!("levels must be below {n}")));
        }
        Ok(self.inner.table.rate(i, j))
    }

    fn detailed_balance_defect(&self) -> f64 {
        self.inner.table.detailed_balance_defect(self.inner.spec.temperature)
    }
}

/// Thermal-left single particle. Returns `t`, `p_left`, `entropy` and the
/// largest trace drift.
#[pyfunction]
#[pyo3(signature = (model, bath, b = 0.0, **options))]
fn run_single(py: Python<'_>, model: &PyWellModel, bath: &PyBath, b: f64, options: Option<&Bound<'_, PyDict>>) -> PyResult<Py<PyDict>> {
    let cfg = config("fig1", options)?;
    let (run, _) = py.detach(|| cli::single_run(&cfg, &model.inner, &bath.inner, b)).map_err(run_err)?;
    let out = PyDict::new(py);
    out.set_item("t", &run.t)?;
    out.set_item("p_left", run.p_left())?;
    out.set_item("entropy", run.entropy())?;
    out.set_item("trace_defect", run.max_trace_defect())?;
    Ok(out.unbind())
}

/// Fermion ensemble released from the left well. Returns `t`, `n_left` and
/// the largest particle-number drift.
#[pyfunction]
#[pyo3(signature = (model, bath, t_max, **options))]
fn run_fermi(py: Python<'_>, model: &PyWellModel, bath: &PyBath, t_max: f64, options: Option<&Bound<'_, PyDict>>) -> PyResult<Py<PyDict>> {
    let cfg = config("fermi", options)?;
    let (run, _) = py.detach(|| cli::fermi_run(&cfg, &model.inner, &bath.inner, t_max)).map_err(run_err)?;
    let out = PyDict::new(py);
    out.set_item("t", &run.t)?;
    out.set_item("n_left", run.n_left())?;
    out.set_item("number_defect", run.max_number_defect())?;
    Ok(out.unbind())
}

/// Particle pair started in a thermal Bell state. Returns `t`, `x33`,
/// `concurrence` and `e_f`.
#[pyfunction]
#[pyo3(signature = (model, bath, **options))]
fn run_pair(py: Python<'_>, model: &PyWellModel, bath: &PyBath, options: Option<&Bound<'_, PyDict>>) -> PyResult<Py<PyDict>> {
    let cfg = config("pair_ef", options)?;
    let (run, _) = py.detach(|| cli::pair_run(&cfg, &model.inner, &bath.inner)).map_err(run_err)?;
    let obs = run.observables().map_err(model_err)?;
    let out = PyDict::new(py);
    out.set_item("t", &run.t)?;
    out.set_item("x33", obs.iter().map(|o| o.x33).collect::<Vec<_>>())?;
    out.set_item("concurrence", obs.iter().map(|o| o.concurrence).collect::<Vec<_>>())?;
    out.set_item("e_f", obs.iter().map(|o| o.e_f).collect::<Vec<_>>())?;
    Ok(out.unbind())
}

/// Runs a named scenario and writes its CSV files and sidecars. Keyword
/// options take the command-line keys. Returns the written paths.
#[pyfunction]
#[pyo3(signature = (scenario, **options))]
fn run_scenario(py: Python<'_>, scenario: &str, options: Option<&Bound<'_, PyDict>>) -> PyResult<Vec<PathBuf>> {
    let cfg = config(scenario, options)?;
    py.detach(|| cli::run(&cfg)).map_err(run_err)
}

/// Wootters concurrence of a 4×4 density matrix.
#[pyfunction]
fn concurrence(rho: Vec<Vec<Complex64>>) -> PyResult<f64> {
    if rho.len() != 4 || rho.iter().any(|r| r.len() != 4) {
        return Err(PyValueError::new_err("expected a 4×4 matrix"));
    }
    let m = nalgebra::Matrix4::<C64>::from_fn(|i, j| rho[i][j]);
    pair::concurrence(&m).map_err(model_err)
}

#[pyfunction]
fn entanglement_of_formation(c: f64) -> PyResult<f64> {
    pair::entanglement_of_formation(c).map_err(model_err)
}

/// Density matrix of a Bell state: phi_plus, phi_minus, psi_plus or psi_minus.
#[pyfunction]
fn bell_state(kind: &str) -> PyResult<Vec<Vec<Complex64>>> {
    let kind = BellKind::parse(kind).ok_or_else(|| PyValueError::new_err(format!("unknown Bell state `{kind}`")))?;
    let p = kind.projector();
    Ok((0..4).map(|i| (0..4).map(|j| p[(i, j)]).collect()).collect())
}

#[pymodule]
fn pywellbath(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyWellModel>()?;
    m.add_class::<PyBath>()?;
    m.add_function(wrap_pyfunction!(run_single, m)?)?;
    m.add_function(wrap_pyfunction!(run_fermi, m)?)?;
    m.add_function(wrap_pyfunction!(run_pair, m)?)?;
    m.add_function(wrap_pyfunction!(run_scenario, m)?)?;
    m.add_function(wrap_pyfunction!(concurrence, m)?)?;
    m.add_function(wrap_pyfunction!(entanglement_of_formation, m)?)?;
    m.add_function(wrap_pyfunction!(bell_state, m)?)?;
    Ok(())
}
