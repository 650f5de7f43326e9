//! Python bindings for the slicesim simulator.

use std::path::PathBuf;

use pyo3::exceptions::PyValueError;
use pyo3::prelude::*;
use pyo3::types::PyDict;

use slicesim_core::config::{self, parse_config, scenario_to_toml};
use slicesim_core::metrics::{self, SliceSelector};
use slicesim_core::model::{LinkState, SimTime, SliceId};
use slicesim_core::scheduler::{self, DemandEstimate, Policy};
use slicesim_core::sweep::{self, AggregateRow};
use slicesim_core::traffic::build_catalog;
use slicesim_core::SimError;

fn err(e: SimError) -> PyErr {
    PyValueError::new_err(e.to_string())
}

fn value_err(e: String) -> PyErr {
    PyValueError::new_err(e)
}

fn selector(name: &str) -> PyResult<SliceSelector> {
    name.parse().map_err(value_err)
}

/// One simulation setup. Built from a preset or a TOML config.
#[pyclass(name = "Scenario", module = "slicesim", from_py_object)]
#[derive(Clone)]
struct PyScenario {
    inner: slicesim_core::Scenario,
}

#[pymethods]
impl PyScenario {
    /// The case-study scenario.
    #[staticmethod]
    fn default() -> Self {
        PyScenario {
            inner: slicesim_core::default_scenario(),
        }
    }

    /// Base scenario of a config text (preset plus `[scenario]` overrides).
    #[staticmethod]
    fn from_toml(text: &str) -> PyResult<Self> {
        Ok(PyScenario {
            inner: parse_config(text, "<python>").map_err(err)?.base,
        })
    }

    fn to_toml(&self) -> PyResult<String> {
        scenario_to_toml(&self.inner).map_err(err)
    }

    #[getter]
    fn policy(&self) -> &'static str {
        self.inner.policy.policy.as_str()
    }

    #[setter]
    fn set_policy(&mut self, name: &str) -> PyResult<()> {
        self.inner.policy.policy = name.parse().map_err(value_err)?;
        Ok(())
    }

    #[getter]
    fn active_fraction(&self) -> f64 {
        self.inner.active_fraction
    }

    #[setter]
    fn set_active_fraction(&mut self, v: f64) {
        self.inner.active_fraction = v;
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
    fn duration_ms(&self) -> u64 {
        self.inner.duration_ms
    }

    #[setter]
    fn set_duration_ms(&mut self, v: u64) {
        self.inner.duration_ms = v;
        self.inner.events.retain(|e| e.at_ms < v);
    }

    #[getter]
    fn warmup_ms(&self) -> u64 {
        self.inner.warmup_ms
    }

    #[setter]
    fn set_warmup_ms(&mut self, v: u64) {
        self.inner.warmup_ms = v;
    }

    #[getter]
    fn cross_hop_reporting(&self) -> bool {
        self.inner.policy.cross_hop_reporting
    }

    #[setter]
    fn set_cross_hop_reporting(&mut self, v: bool) {
        self.inner.policy.cross_hop_reporting = v;
    }

    /// Indices of the gateways carrying traffic.
    fn active_rgs(&self) -> Vec<u32> {
        self.inner.active_rgs()
    }

    fn validate(&self) -> PyResult<()> {
        self.inner.validate().map_err(err)
    }

    fn __repr__(&self) -> String {
        format!(
            "Scenario(policy={}, active_fraction={}, seed={}, duration_ms={})",
            self.policy(),
            self.inner.active_fraction,
            self.inner.seed,
            self.inner.duration_ms
        )
    }
}

/// Trace and counters of one finished run.
#[pyclass(name = "RunResult", module = "slicesim")]
struct PyRunResult {
    inner: slicesim_core::RunResult,
}

#[pymethods]
impl PyRunResult {
    #[getter]
    fn n_packets(&self) -> usize {
        self.inner.trace.records.len()
    }

    /// Run counters as a dict.
    fn stats<'py>(&self, py: Python<'py>) -> PyResult<Bound<'py, PyDict>> {
        let s = &self.inner.stats;
        let d = PyDict::new(py);
        d.set_item("intervals", s.intervals)?;
        d.set_item("generated", s.generated)?;
        d.set_item("delivered", s.delivered)?;
        d.set_item("dropped_expired", s.dropped_expired)?;
        d.set_item("lost_retx", s.lost_retx)?;
        d.set_item("in_flight", s.in_flight)?;
        d.set_item("max_overallocation", s.max_overallocation)?;
        d.set_item("fwa_units_used", s.fwa_units_used)?;
        d.set_item("fwa_units_usable", s.fwa_units_usable)?;
        Ok(d)
    }

    /// Mean, 95th percentile (ms) and counts of measured packets, or None.
    fn latency<'py>(&self, py: Python<'py>, slice: &str) -> PyResult<Option<Bound<'py, PyDict>>> {
        let Some(l) = metrics::e2e_latency_stats(&self.inner.trace, selector(slice)?) else {
            return Ok(None);
        };
        let d = PyDict::new(py);
        d.set_item("mean_ms", l.mean_ms)?;
        d.set_item("p95_ms", l.p95_ms)?;
        d.set_item("count", l.count)?;
        d.set_item("dropped", l.dropped)?;
        d.set_item("lost", l.lost)?;
        Ok(Some(d))
    }

    fn qos_met(&self, slice: &str) -> PyResult<Option<f64>> {
        Ok(metrics::qos_met_fraction(&self.inner.trace, selector(slice)?))
    }

    #[pyo3(signature = (slice, window_ms = 1000))]
    fn availability(&self, slice: &str, window_ms: u64) -> PyResult<Option<f64>> {
        Ok(metrics::availability(
            &self.inner.trace,
            selector(slice)?,
            SimTime::from_ms(window_ms),
        ))
    }

    fn late_deliveries(&self, slice: &str) -> PyResult<usize> {
        Ok(metrics::late_deliveries(&self.inner.trace, selector(slice)?))
    }

    /// `(patient, kind, requested_us, effective_us)` tuples.
    fn transitions(&self) -> Vec<(usize, &'static str, u64, Option<u64>)> {
        self.inner
            .transitions
            .iter()
            .map(|t| (t.patient, t.kind.as_str(), t.requested_us, t.effective_us))
            .collect()
    }

    fn write_trace(&self, path: PathBuf) -> PyResult<()> {
        let f = std::fs::File::create(&path).map_err(|e| PyValueError::new_err(format!("{}: {e}", path.display())))?;
        self.inner.trace.write_csv(std::io::BufWriter::new(f)).map_err(err)
    }
}

/// Runs one simulation.
#[pyfunction]
fn run(py: Python<'_>, scenario: &PyScenario) -> PyResult<PyRunResult> {
    let s = scenario.inner.clone();
    let inner = py.detach(move || slicesim_core::run(&s)).map_err(err)?;
    Ok(PyRunResult { inner })
}

/// Splits `available` units over slice demands; slices flagged in
/// `healthcare` win ties for leftover units.
#[pyfunction]
fn elastic_scale(demands: Vec<u64>, healthcare: Vec<bool>, available: u64) -> PyResult<Vec<u64>> {
    if demands.len() != healthcare.len() {
        return Err(PyValueError::new_err("demands and healthcare differ in length"));
    }
    let d: Vec<DemandEstimate> = demands
        .iter()
        .zip(&healthcare)
        .enumerate()
        .map(|(i, (&r, &h))| DemandEstimate {
            slice: SliceId(i as u32),
            healthcare: h,
            requested_units: r,
        })
        .collect();
    Ok(scheduler::elastic_scale(&d, available))
}

/// M-LWDF priority of a head-of-line packet.
#[pyfunction]
fn mlwdf_metric(drop_target: f64, tau_s: f64, hol_delay_s: f64, inst_rate_bps: f64, avg_rate_bps: f64) -> f64 {
    let mut link = LinkState::new(1.0, 0.1);
    link.avg_rate = avg_rate_bps;
    scheduler::mlwdf_metric(drop_target, tau_s, hol_delay_s, inst_rate_bps, &link)
}

/// Device flows as `(name, slice_type, rate_bps, period_ms, survival_ms)`.
#[pyfunction]
fn catalog() -> Vec<(String, &'static str, u64, u64, u64)> {
    let c = build_catalog();
    c.regular_flows
        .iter()
        .chain(&c.emergency_flows)
        .map(|f| {
            (
                f.device_name.clone(),
                f.slice_type.as_str(),
                f.qos.rate_bps,
                f.packet_period_ms,
                f.qos.survival_ms,
            )
        })
        .collect()
}

fn row_dict<'py>(py: Python<'py>, r: &AggregateRow) -> PyResult<Bound<'py, PyDict>> {
    let d = PyDict::new(py);
    d.set_item("policy", r.policy.as_str())?;
    d.set_item("active_fraction", r.active_fraction)?;
    d.set_item("slice_type", &r.slice_type)?;
    d.set_item("mean_latency_ms", r.mean_latency_ms)?;
    d.set_item("pr_A_gt_099", r.pr_A_gt_099)?;
    d.set_item("qos_met", r.qos_met)?;
    d.set_item("seeds", r.seeds)?;
    d.set_item("ci95", r.ci95)?;
    Ok(d)
}

/// Runs a policy by load by seed sweep and returns the aggregate rows.
/// Without `config`, the case-study preset is used; `out` also writes the
/// CSV files.
#[pyfunction]
#[pyo3(signature = (config = None, out = None, policies = None, loads = None, seeds = None, duration_s = None))]
fn run_sweep<'py>(
    py: Python<'py>,
    config: Option<&str>,
    out: Option<PathBuf>,
    policies: Option<Vec<String>>,
    loads: Option<Vec<f64>>,
    seeds: Option<Vec<u64>>,
    duration_s: Option<u64>,
) -> PyResult<Vec<Bound<'py, PyDict>>> {
    let mut spec = match config {
        Some(text) => parse_config(text, "<python>").map_err(err)?,
        None => config::paper_case(),
    };
    if let Some(p) = policies {
        spec.policies = p
            .iter()
            .map(|s| s.parse::<Policy>())
            .collect::<Result<_, _>>()
            .map_err(value_err)?;
    }
    if let Some(l) = loads {
        spec.loads = l;
    }
    if let Some(s) = seeds {
        spec.seeds = s;
    }
    if let Some(d) = duration_s {
        spec.base.duration_ms = d * 1_000;
    }
    let result = py.detach(|| sweep::run_sweep(&spec, out.as_deref())).map_err(err)?;
    result.aggregate.iter().map(|r| row_dict(py, r)).collect()
}

#[pymodule]
fn slicesim(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyScenario>()?;
    m.add_class::<PyRunResult>()?;
    m.add_function(wrap_pyfunction!(run, m)?)?;
    m.add_function(wrap_pyfunction!(run_sweep, m)?)?;
    m.add_function(wrap_pyfunction!(elastic_scale, m)?)?;
    m.add_function(wrap_pyfunction!(mlwdf_metric, m)?)?;
    m.add_function(wrap_pyfunction!(catalog, m)?)?;
    m.add("POLICIES", Policy::ALL.iter().map(|p| p.as_str()).collect::<Vec<_>>())?;
    m.add(
        "SLICE_SELECTORS",
        SliceSelector::ALL.iter().map(|s| s.as_str()).collect::<Vec<_>>(),
    )?;
    Ok(())
}
