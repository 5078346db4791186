use pyo3::exceptions::PyValueError;
use pyo3::prelude::*;
use serde::de::DeserializeOwned;
use serde::Serialize;

use qanneal_core::objectives::ObjectiveSpec;
use qanneal_core::optim::{
    run as run_core, step_quantized, step_unquantized, OptimizerKind, OptimizerState, RunConfig,
};
use qanneal_core::quantizer::{quantize_vector, wnh_test as wnh_core, QuantLevel, WnhConfig};
use qanneal_core::rational::Rational;
use qanneal_core::schedule::{trajectory, Enforcement, ScheduleConfig, SchedulerState};
use qanneal_core::sde::{simulate_ensemble, SdeSpec};

fn err<E: std::fmt::Display>(e: E) -> PyErr {
    PyValueError::new_err(e.to_string())
}

/// Convert any serializable value to plain Python objects through `json`.
fn to_py<T: Serialize>(py: Python<'_>, value: &T) -> PyResult<Py<PyAny>> {
    let text = serde_json::to_string(value).map_err(err)?;
    Ok(py.import("json")?.call_method1("loads", (text,))?.unbind())
}

fn from_toml<T: DeserializeOwned>(text: &str) -> PyResult<T> {
    toml::from_str(text).map_err(err)
}

fn parse_enforcement(s: &str) -> PyResult<Enforcement> {
    match s {
        "strict" => Ok(Enforcement::Strict),
        "clamped" => Ok(Enforcement::Clamped),
        "off" => Ok(Enforcement::Off),
        other => Err(PyValueError::new_err(format!(
            "enforcement must be strict, clamped or off, got {other:?}"
        ))),
    }
}

fn parse_kind(s: &str) -> PyResult<OptimizerKind> {
    match s {
        "sgd" => Ok(OptimizerKind::Sgd),
        "adam" => Ok(OptimizerKind::adam()),
        other => Err(PyValueError::new_err(format!(
            "kind must be sgd or adam, got {other:?}"
        ))),
    }
}

/// Round `x` onto the lattice `1/q_p`: returns the integer numerators and the
/// errors in lattice units.
#[pyfunction]
fn quantize(x: Vec<f64>, q_p: u64) -> PyResult<(Vec<i128>, Vec<f64>)> {
    let (lattice, e) = quantize_vector(&x, QuantLevel::new(q_p).map_err(err)?).map_err(err)?;
    Ok((lattice.numerators().to_vec(), e.into_inner()))
}

/// Resolution schedule `q_p(t) = eta * base^h_bar(t)`.
#[pyclass(module = "qanneal")]
struct Schedule {
    config: ScheduleConfig,
    state: SchedulerState,
}

#[pymethods]
impl Schedule {
    #[new]
    #[pyo3(signature = (n=1, h_bar0=2, c=1.0e6, beta=20.0, enforcement="clamped"))]
    fn new(n: usize, h_bar0: i64, c: f64, beta: f64, enforcement: &str) -> PyResult<Self> {
        let config = ScheduleConfig {
            n,
            h_bar0,
            c,
            beta,
            enforcement: parse_enforcement(enforcement)?,
            ..ScheduleConfig::default()
        };
        config.validate().map_err(err)?;
        let state = SchedulerState::new(&config).map_err(err)?;
        Ok(Self { config, state })
    }

    #[getter]
    fn t(&self) -> u64 {
        self.state.t
    }

    #[getter]
    fn h_bar(&self) -> i64 {
        self.state.h_bar
    }

    #[getter]
    fn q_p(&self) -> u64 {
        self.state.q_p
    }

    #[getter]
    fn sigma(&self) -> f64 {
        self.state.sigma(&self.config)
    }

    fn advance(&mut self) -> PyResult<()> {
        self.state.advance_epoch(&self.config).map_err(err)
    }

    /// Rows `t = 0..=horizon` of the schedule as dictionaries.
    fn table(&self, py: Python<'_>, horizon: u64) -> PyResult<Py<PyAny>> {
        to_py(py, &trajectory(&self.config, horizon).map_err(err)?)
    }

    fn __repr__(&self) -> String {
        format!(
            "Schedule(t={}, h_bar={}, q_p={})",
            self.state.t, self.state.h_bar, self.state.q_p
        )
    }
}

/// A single optimizer whose steps are driven from Python.
#[pyclass(module = "qanneal")]
struct Optimizer {
    state: OptimizerState,
    rescue: bool,
}

#[pymethods]
impl Optimizer {
    #[new]
    #[pyo3(signature = (w0, learning_rate="1/8", kind="sgd", quantized=true, h_bar0=2, c=1.0e6, enforcement="clamped", rescue=true))]
    #[allow(clippy::too_many_arguments)]
    fn new(
        w0: Vec<f64>,
        learning_rate: &str,
        kind: &str,
        quantized: bool,
        h_bar0: i64,
        c: f64,
        enforcement: &str,
        rescue: bool,
    ) -> PyResult<Self> {
        let lr: Rational = learning_rate.parse().map_err(err)?;
        let kind = parse_kind(kind)?;
        let state = if quantized {
            let schedule = ScheduleConfig {
                h_bar0,
                c,
                enforcement: parse_enforcement(enforcement)?,
                ..ScheduleConfig::default()
            };
            OptimizerState::quantized(&w0, lr, &kind, schedule, 0)
        } else {
            OptimizerState::unquantized(&w0, lr, &kind, 0)
        }
        .map_err(err)?;
        Ok(Self { state, rescue })
    }

    #[getter]
    fn weights(&self) -> Vec<f64> {
        self.state.values()
    }

    #[getter]
    fn q_p(&self) -> Option<u64> {
        self.state.scheduler.as_ref().map(|s| s.q_p)
    }

    #[getter]
    fn h_bar(&self) -> Option<i64> {
        self.state.scheduler.as_ref().map(|s| s.h_bar)
    }

    #[getter]
    fn steps(&self) -> u64 {
        self.state.step
    }

    fn lattice_closed(&self) -> bool {
        self.state.lattice_closed()
    }

    fn advance_schedule(&mut self) -> PyResult<()> {
        self.state.advance_schedule().map_err(err)
    }

    /// Apply one step with gradient `grad`; returns the applied direction and
    /// whether the step vanished.
    fn step(&mut self, py: Python<'_>, grad: Vec<f64>) -> PyResult<Py<PyAny>> {
        let out = if self.state.scheduler.is_some() {
            step_quantized(&mut self.state, &grad, self.rescue)
        } else {
            step_unquantized(&mut self.state, &grad)
        }
        .map_err(err)?;
        let direction = out
            .quantized_direction
            .as_ref()
            .map(|d| d.values())
            .unwrap_or_else(|| out.raw_direction.clone());
        let summary = serde_json::json!({
            "weights": self.state.values(),
            "direction": direction,
            "vanished": out.vanished_initially,
            "vanished_at_cap": out.vanished_at_cap,
            "rescue_raises": out.rescue_raises,
            "h_bar": out.h_bar_after,
        });
        to_py(py, &summary)
    }
}

/// Run one optimization. `objective` and `config` are TOML tables, e.g.
/// `run('name = "quadratic"\nn = 2', 'epochs = 50')`.
#[pyfunction]
#[pyo3(signature = (objective, config="", seed=0))]
fn run(py: Python<'_>, objective: &str, config: &str, seed: u64) -> PyResult<Py<PyAny>> {
    let spec: ObjectiveSpec = from_toml(objective)?;
    let cfg: RunConfig = from_toml(config)?;
    let obj = spec.build().map_err(err)?;
    let rec = py
        .detach(|| run_core(obj.as_ref(), &cfg, seed))
        .map_err(err)?;
    let out = serde_json::json!({
        "meta": rec.meta,
        "final_weights": rec.final_weights,
        "trajectory": rec.rows.iter().map(|r| r.f).collect::<Vec<_>>(),
    });
    to_py(py, &out)
}

/// White-noise battery on rows of quantization errors (lattice units).
#[pyfunction]
#[pyo3(signature = (errors, significance=0.01))]
fn wnh_test(py: Python<'_>, errors: Vec<Vec<f64>>, significance: f64) -> PyResult<Py<PyAny>> {
    let cfg = WnhConfig {
        significance,
        ..WnhConfig::default()
    };
    to_py(py, &wnh_core(errors.iter(), &cfg).map_err(err)?)
}

/// Simulate an Euler-Maruyama ensemble; `spec` is a TOML table.
#[pyfunction]
#[pyo3(signature = (objective, spec, paths, seed=0))]
fn sde_ensemble(
    py: Python<'_>,
    objective: &str,
    spec: &str,
    paths: u64,
    seed: u64,
) -> PyResult<Py<PyAny>> {
    let obj_spec: ObjectiveSpec = from_toml(objective)?;
    let spec: SdeSpec = from_toml(spec)?;
    let obj = obj_spec.build().map_err(err)?;
    let e = py
        .detach(|| simulate_ensemble(obj.as_ref(), &spec, paths, seed))
        .map_err(err)?;
    let out = serde_json::json!({
        "paths": e.paths,
        "diverged": e.diverged,
        "epochs": e.epochs,
        "final_global_basin_fraction": e.final_basin_fraction(),
    });
    to_py(py, &out)
}

#[pymodule]
fn qanneal(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_function(wrap_pyfunction!(quantize, m)?)?;
    m.add_function(wrap_pyfunction!(run, m)?)?;
    m.add_function(wrap_pyfunction!(wnh_test, m)?)?;
    m.add_function(wrap_pyfunction!(sde_ensemble, m)?)?;
    m.add_class::<Schedule>()?;
    m.add_class::<Optimizer>()?;
    Ok(())
}
