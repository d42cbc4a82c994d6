//! Python bindings for `rlnc_tdd`.
//!
//! Structured results (queue solutions, sweeps, simulation reports) come
//! back as plain dicts and lists.

use pyo3::exceptions::{PyRuntimeError, PyValueError};
use pyo3::prelude::*;
use rlnc_tdd as core;
use rlnc_tdd::config::{DEFAULT_PMF_TOL, DEFAULT_SEARCH_WINDOW};
use serde::Serialize;

fn to_py(e: core::Error) -> PyErr {
    match e {
        core::Error::InvalidParameter(_) | core::Error::Unstable { .. } => PyValueError::new_err(e.to_string()),
        _ => PyRuntimeError::new_err(e.to_string()),
    }
}

fn to_object<'py, T: Serialize>(py: Python<'py>, value: &T) -> PyResult<Bound<'py, PyAny>> {
    let text = serde_json::to_string(value).map_err(|e| PyRuntimeError::new_err(e.to_string()))?;
    py.import("json")?.call_method1("loads", (text,))
}

#[pyclass(name = "LinkParams", module = "pyrlnc", from_py_object)]
#[derive(Clone)]
struct PyLink {
    inner: core::LinkParams,
}

#[pymethods]
impl PyLink {
    /// Defaults describe the reference high-latency link; `pe_ack` defaults
    /// to `pe`.
    #[new]
    #[pyo3(signature = (
        pe = 0.2, pe_ack = None, rate_bps = 1.5e6, payload_bits = 10_000, header_bits = 80,
        coeff_bits = 20, ack_bits = 100, prop_delay_s = 12.5e-3, tx_power = 1.0, rx_power = 1.0,
        t_wait_s = None
    ))]
    #[allow(clippy::too_many_arguments)]
    fn new(
        pe: f64,
        pe_ack: Option<f64>,
        rate_bps: f64,
        payload_bits: u64,
        header_bits: u64,
        coeff_bits: u64,
        ack_bits: u64,
        prop_delay_s: f64,
        tx_power: f64,
        rx_power: f64,
        t_wait_s: Option<f64>,
    ) -> PyResult<Self> {
        let inner = core::LinkParams {
            pe,
            pe_ack: pe_ack.unwrap_or(pe),
            rate_bps,
            payload_bits,
            header_bits,
            coeff_bits,
            ack_bits,
            prop_delay_s,
            tx_power,
            rx_power,
            t_wait_s,
        };
        inner.validate().map_err(to_py)?;
        Ok(PyLink { inner })
    }

    #[getter]
    fn pe(&self) -> f64 {
        self.inner.pe
    }

    #[getter]
    fn pe_ack(&self) -> f64 {
        self.inner.pe_ack
    }

    fn packet_duration(&self, batch_size: usize) -> f64 {
        core::packet_duration(&self.inner, batch_size)
    }

    fn wait_time(&self) -> f64 {
        core::wait_time(&self.inner)
    }

    fn to_dict<'py>(&self, py: Python<'py>) -> PyResult<Bound<'py, PyAny>> {
        to_object(py, &self.inner)
    }

    fn __repr__(&self) -> String {
        format!("LinkParams(pe={}, pe_ack={})", self.inner.pe, self.inner.pe_ack)
    }
}

/// Optimized transmission policy for one batch size, with its chain.
#[pyclass(name = "Policy", module = "pyrlnc")]
struct PyPolicy {
    link: core::LinkParams,
    policy: core::Policy,
    matrix: core::TransitionMatrix,
}

#[pymethods]
impl PyPolicy {
    #[getter]
    fn batch_size(&self) -> usize {
        self.policy.batch_size
    }

    /// `N_i` for states `1..=M`.
    #[getter]
    fn n_per_state(&self) -> Vec<u32> {
        self.policy.n_per_state.clone()
    }

    #[getter]
    fn round_times(&self) -> Vec<f64> {
        self.policy.t_round.clone()
    }

    /// `E[T_i]` for states `1..=M`.
    #[getter]
    fn expected_completion(&self) -> Vec<f64> {
        self.policy.expected_completion.clone()
    }

    fn transition(&self, i: usize, j: usize) -> PyResult<f64> {
        if i > self.policy.batch_size || j > i {
            return Err(PyValueError::new_err(format!("need 0 <= j <= i <= {}", self.policy.batch_size)));
        }
        Ok(self.matrix.p(i, j))
    }

    #[pyo3(signature = (s, state = None))]
    fn mgf(&self, s: f64, state: Option<usize>) -> PyResult<f64> {
        let n = state.unwrap_or(self.policy.batch_size);
        core::mgf_eval(n, s, &self.policy, &self.matrix).map_err(to_py)
    }

    #[pyo3(signature = (s, state = None))]
    fn energy_mgf(&self, s: f64, state: Option<usize>) -> PyResult<f64> {
        let n = state.unwrap_or(self.policy.batch_size);
        core::energy_mgf_eval(n, s, &self.policy, &self.matrix, &self.link).map_err(to_py)
    }

    fn mean_service_time(&self) -> PyResult<f64> {
        core::mean_service_time(self.policy.batch_size, &self.policy, &self.matrix).map_err(to_py)
    }

    /// Completion-time atoms `[(t, p), ...]` starting from a full batch.
    #[pyo3(signature = (tol = DEFAULT_PMF_TOL))]
    fn completion_pmf(&self, tol: f64) -> PyResult<Vec<(f64, f64)>> {
        let pmf = core::completion_pmf(self.policy.batch_size, &self.policy, &self.matrix, tol).map_err(to_py)?;
        Ok(pmf.atoms.iter().map(|a| (a.t, a.p)).collect())
    }

    /// `a_k`, `k = 0..=kmax`, arrivals at rate `lambda_rate` during one service.
    #[pyo3(signature = (lambda_rate, kmax, tol = DEFAULT_PMF_TOL))]
    fn arrival_pmf(&self, lambda_rate: f64, kmax: usize, tol: f64) -> PyResult<Vec<f64>> {
        let pmf = core::completion_pmf(self.policy.batch_size, &self.policy, &self.matrix, tol).map_err(to_py)?;
        Ok(core::arrival_pmf(self.policy.batch_size, lambda_rate, kmax, &pmf).map_err(to_py)?.a)
    }
}

#[pyfunction]
#[pyo3(signature = (link, batch_size, search_window = DEFAULT_SEARCH_WINDOW))]
fn optimize_policy(link: &PyLink, batch_size: usize, search_window: u32) -> PyResult<PyPolicy> {
    let policy = core::optimize_policy(&link.inner, batch_size, search_window).map_err(to_py)?;
    let matrix = core::TransitionMatrix::for_policy(&link.inner, &policy).map_err(to_py)?;
    Ok(PyPolicy { link: link.inner.clone(), policy, matrix })
}

#[pyfunction]
#[pyo3(signature = (link, lambda_rate, m, k_max, capacity, tol = DEFAULT_PMF_TOL))]
fn solve_queue<'py>(
    py: Python<'py>,
    link: &PyLink,
    lambda_rate: f64,
    m: usize,
    k_max: usize,
    capacity: usize,
    tol: f64,
) -> PyResult<Bound<'py, PyAny>> {
    let cfg = core::QueueConfig::new(m, k_max, capacity, lambda_rate).map_err(to_py)?;
    let link = link.inner.clone();
    let solution = py
        .detach(|| {
            let catalog = core::ServiceCatalog::build(&link, k_max, DEFAULT_SEARCH_WINDOW, tol)?;
            core::solve_queue(&cfg, &catalog)
        })
        .map_err(to_py)?;
    to_object(py, &solution)
}

#[pyfunction]
#[pyo3(signature = (link, lambdas, m_range, k_range, capacity, tol = DEFAULT_PMF_TOL))]
fn sweep<'py>(
    py: Python<'py>,
    link: &PyLink,
    lambdas: Vec<f64>,
    m_range: (usize, usize),
    k_range: (usize, usize),
    capacity: usize,
    tol: f64,
) -> PyResult<Bound<'py, PyAny>> {
    let spec = core::SweepSpec { lambdas, m_range: m_range.0..=m_range.1, k_range: k_range.0..=k_range.1, capacity };
    let link = link.inner.clone();
    let report = py.detach(|| core::sweep(&link, &spec, DEFAULT_SEARCH_WINDOW, tol)).map_err(to_py)?;
    to_object(py, &report)
}

#[pyfunction]
#[pyo3(signature = (
    link, lambda_rate, m, k_max, capacity, seed = 1, completions = 1_000_000, warmup = 0.1,
    initial_queue = 0, strict_ack = false
))]
#[allow(clippy::too_many_arguments)]
fn simulate<'py>(
    py: Python<'py>,
    link: &PyLink,
    lambda_rate: f64,
    m: usize,
    k_max: usize,
    capacity: usize,
    seed: u64,
    completions: u64,
    warmup: f64,
    initial_queue: usize,
    strict_ack: bool,
) -> PyResult<Bound<'py, PyAny>> {
    let queue = core::QueueConfig::new(m, k_max, capacity, lambda_rate).map_err(to_py)?;
    let link = link.inner.clone();
    let report = py
        .detach(|| {
            let catalog = core::ServiceCatalog::build(&link, k_max, DEFAULT_SEARCH_WINDOW, DEFAULT_PMF_TOL)?;
            let mut cfg =
                core::SimConfig::from_catalog(queue, link, &catalog, seed, core::Horizon::Completions(completions))?;
            cfg.warmup = warmup;
            cfg.initial_queue = initial_queue;
            if strict_ack {
                cfg.ack_mode = core::AckMode::ReceiverPersists;
            }
            core::simulate(&cfg)
        })
        .map_err(to_py)?;
    to_object(py, &report)
}

#[pymodule]
fn pyrlnc(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyLink>()?;
    m.add_class::<PyPolicy>()?;
    m.add_function(wrap_pyfunction!(optimize_policy, m)?)?;
    m.add_function(wrap_pyfunction!(solve_queue, m)?)?;
    m.add_function(wrap_pyfunction!(sweep, m)?)?;
    m.add_function(wrap_pyfunction!(simulate, m)?)?;
    m.add("__version__", env!("CARGO_PKG_VERSION"))?;
    Ok(())
}
