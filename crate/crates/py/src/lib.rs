//! Python bindings: platform parsing, the power model, simulation runs and
//! the evaluation metrics.

use std::collections::HashMap;

use carbon_sim::carbon::{self, parse_ci_trace};
use carbon_sim::energy::{self, PowerMode};
use carbon_sim::engine::{self, SimOptions};
use carbon_sim::eval;
use carbon_sim::platform::{self, CiSource};
use carbon_sim::trace::{render_summary, render_trace};
use carbon_sim::workload;
use pyo3::exceptions::PyValueError;
use pyo3::prelude::*;

fn value_error(e: impl std::fmt::Display) -> PyErr {
    PyValueError::new_err(e.to_string())
}

#[pyclass(name = "PowerProfile", frozen, skip_from_py_object)]
#[derive(Clone)]
struct PyPowerProfile(platform::PowerProfile);

#[pymethods]
impl PyPowerProfile {
    #[new]
    #[pyo3(signature = (idle_w, epsilon_w, allcores_w, off_w = 0.0))]
    fn new(idle_w: f64, epsilon_w: f64, allcores_w: f64, off_w: f64) -> PyResult<Self> {
        platform::PowerProfile::new(idle_w, epsilon_w, allcores_w, off_w)
            .map(Self)
            .map_err(value_error)
    }

    /// Parses a `wattage_per_state` value and a `wattage_off` value.
    #[staticmethod]
    #[pyo3(signature = (states, off = "0"))]
    fn parse(states: &str, off: &str) -> PyResult<Self> {
        platform::parse_power_profile(states, off)
            .map(Self)
            .map_err(value_error)
    }

    #[getter]
    fn idle_w(&self) -> f64 {
        self.0.idle_w
    }
    #[getter]
    fn epsilon_w(&self) -> f64 {
        self.0.epsilon_w
    }
    #[getter]
    fn allcores_w(&self) -> f64 {
        self.0.allcores_w
    }
    #[getter]
    fn off_w(&self) -> f64 {
        self.0.off_w
    }

    /// Instantaneous draw in watts.
    #[pyo3(signature = (busy_cores, core_count, on = true))]
    fn power(&self, busy_cores: u32, core_count: u32, on: bool) -> PyResult<f64> {
        let mode = if on { PowerMode::On } else { PowerMode::Off };
        energy::instantaneous_power(&self.0, mode, busy_cores, core_count).map_err(value_error)
    }

    fn __repr__(&self) -> String {
        format!(
            "PowerProfile(idle_w={}, epsilon_w={}, allcores_w={}, off_w={})",
            self.0.idle_w, self.0.epsilon_w, self.0.allcores_w, self.0.off_w
        )
    }
}

#[pyclass(name = "Host", frozen)]
struct PyHost(platform::HostSpec);

#[pymethods]
impl PyHost {
    #[getter]
    fn id(&self) -> &str {
        &self.0.id
    }
    #[getter]
    fn core_count(&self) -> u32 {
        self.0.core_count
    }
    #[getter]
    fn speed_per_core(&self) -> f64 {
        self.0.speed_per_core
    }
    #[getter]
    fn profile(&self) -> PyPowerProfile {
        PyPowerProfile(self.0.profile)
    }
    /// Constant intensity in gCO2/kWh, or None when the host follows a trace.
    #[getter]
    fn carbon_intensity(&self) -> Option<f64> {
        match self.0.ci_source {
            CiSource::Constant(v) => Some(v),
            CiSource::Trace(_) => None,
        }
    }
    #[getter]
    fn carbon_intensity_trace(&self) -> Option<&str> {
        match &self.0.ci_source {
            CiSource::Trace(r) => Some(r),
            CiSource::Constant(_) => None,
        }
    }
}

#[pyclass(name = "Platform", frozen)]
struct PyPlatform(platform::PlatformSpec);

#[pymethods]
impl PyPlatform {
    #[getter]
    fn host_ids(&self) -> Vec<String> {
        self.0.hosts.iter().map(|h| h.id.clone()).collect()
    }

    fn host(&self, id: &str) -> Option<PyHost> {
        self.0.host(id).cloned().map(PyHost)
    }

    fn to_xml(&self) -> String {
        platform::serialize_platform(&self.0)
    }

    /// List of `(host_id, field, message)`; empty when the platform is valid.
    fn validate(&self) -> Vec<(String, String, String)> {
        platform::validate_platform(&self.0)
            .into_iter()
            .map(|v| (v.host_id, v.field.to_string(), v.message))
            .collect()
    }

    fn __len__(&self) -> usize {
        self.0.hosts.len()
    }
}

#[pyclass(name = "SimulationResult", frozen)]
struct PySimulationResult(engine::SimulationResult);

#[pymethods]
impl PySimulationResult {
    #[getter]
    fn makespan(&self) -> f64 {
        self.0.makespan
    }
    #[getter]
    fn end_time(&self) -> f64 {
        self.0.end_time
    }
    #[getter]
    fn total_energy_j(&self) -> f64 {
        self.0.total_energy_j()
    }
    #[getter]
    fn total_carbon_g(&self) -> f64 {
        self.0.total_carbon_g()
    }
    /// `(time, energy_j, carbon_g, event_type, ecarbon)` per record.
    #[getter]
    fn trace(&self) -> Vec<(f64, f64, f64, char, f64)> {
        self.0
            .trace
            .iter()
            .map(|r| (r.time, r.energy_j, r.carbon_g, r.event_type.code(), r.ecarbon))
            .collect()
    }
    /// `{host_id: (energy_j, carbon_g)}`.
    #[getter]
    fn hosts(&self) -> HashMap<String, (f64, f64)> {
        self.0
            .per_host_summary
            .iter()
            .map(|h| (h.host_id.clone(), (h.energy_j, h.carbon_g)))
            .collect()
    }
    /// `(job_id, host_id, start, end, cores)` per started job.
    #[getter]
    fn jobs(&self) -> Vec<(String, String, f64, f64, u32)> {
        self.0
            .jobs
            .iter()
            .map(|j| (j.job_id.clone(), j.host_id.clone(), j.start, j.end, j.cores))
            .collect()
    }
    #[getter]
    fn rejected_jobs(&self) -> Vec<String> {
        self.0.rejected_jobs.clone()
    }
    #[getter]
    fn unstarted_jobs(&self) -> Vec<String> {
        self.0.unstarted_jobs.clone()
    }

    fn trace_csv(&self) -> String {
        render_trace(&self.0.trace)
    }

    fn hosts_csv(&self) -> String {
        render_summary(&self.0.per_host_summary)
    }
}

#[pyfunction]
fn parse_platform(xml: &str) -> PyResult<PyPlatform> {
    platform::parse_platform(xml).map(PyPlatform).map_err(value_error)
}

/// Runs a workload (JSON text) on a platform (XML text). `ci_traces` maps each
/// `carbon_intensity_trace` reference in the platform to CSV text.
#[pyfunction]
#[pyo3(signature = (platform_xml, workload_json, events_csv = None, carbon = true, until = None, ci_traces = None))]
fn simulate(
    py: Python<'_>,
    platform_xml: &str,
    workload_json: &str,
    events_csv: Option<&str>,
    carbon: bool,
    until: Option<f64>,
    ci_traces: Option<HashMap<String, String>>,
) -> PyResult<PySimulationResult> {
    let platform = platform::parse_platform(platform_xml).map_err(value_error)?;
    let workload = workload::parse_workload(workload_json).map_err(value_error)?;
    let events = match events_csv {
        Some(text) => workload::parse_events(text).map_err(value_error)?,
        None => Vec::new(),
    };
    let mut options = SimOptions {
        carbon_enabled: carbon,
        end_time: until,
        ..Default::default()
    };
    for (reference, text) in ci_traces.unwrap_or_default() {
        let series = parse_ci_trace(&text).map_err(|e| value_error(format!("{reference}: {e}")))?;
        options.ci_traces.insert(reference, series);
    }
    py.detach(|| engine::run_simulation(&platform, &workload, &events, &options))
        .map(PySimulationResult)
        .map_err(value_error)
}

/// Seconds to run `flops` on `cores` cores of `speed` FLOP/s each.
#[pyfunction]
fn job_duration(flops: f64, cores: u32, speed: f64) -> f64 {
    engine::job_duration(flops, cores, speed)
}

/// Grams of CO2 for `energy_j` joules at `ci` gCO2/kWh.
#[pyfunction]
fn carbon_step(energy_j: f64, ci: f64) -> f64 {
    carbon::carbon_step(energy_j, ci)
}

#[pyfunction]
fn r2(y_true: Vec<f64>, y_pred: Vec<f64>) -> PyResult<f64> {
    eval::r2(&y_true, &y_pred).map_err(value_error)
}

/// Mean absolute percentage error, in percent.
#[pyfunction]
fn mape(y_true: Vec<f64>, y_pred: Vec<f64>) -> PyResult<f64> {
    eval::mape(&y_true, &y_pred).map_err(value_error)
}

#[pyfunction]
fn rmse(y_true: Vec<f64>, y_pred: Vec<f64>) -> PyResult<f64> {
    eval::rmse(&y_true, &y_pred).map_err(value_error)
}

#[pymodule]
fn carbon_sim_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyPowerProfile>()?;
    m.add_class::<PyHost>()?;
    m.add_class::<PyPlatform>()?;
    m.add_class::<PySimulationResult>()?;
    m.add_function(wrap_pyfunction!(parse_platform, m)?)?;
    m.add_function(wrap_pyfunction!(simulate, m)?)?;
    m.add_function(wrap_pyfunction!(job_duration, m)?)?;
    m.add_function(wrap_pyfunction!(carbon_step, m)?)?;
    m.add_function(wrap_pyfunction!(r2, m)?)?;
    m.add_function(wrap_pyfunction!(mape, m)?)?;
    m.add_function(wrap_pyfunction!(rmse, m)?)?;
    Ok(())
}
