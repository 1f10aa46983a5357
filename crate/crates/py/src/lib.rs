//! Python bindings: counter machines, groove compilation, pinball runs,
//! exact-score diffusion sampling, threshold circuits and the experiment
//! runner. Structured results come back as plain dicts and lists.

use std::path::PathBuf;

use difflab_core::circuits::{self, Circuit as CoreCircuit};
use difflab_core::counter_machine::{self as cm, fixtures, Program as CoreProgram};
use difflab_core::diffusion::{self, GaussianMixture, NoiseSchedule};
use difflab_core::experiments::{self, ExperimentConfig};
use difflab_core::groove::{self, ForceFieldSpec, GrooveParams};
use difflab_core::sde::{self, SdeParams};
use pyo3::exceptions::PyValueError;
use pyo3::prelude::*;
use pyo3::types::{PyDict, PyList};
use serde::Serialize;
use serde_json::Value;

fn err(e: impl std::fmt::Display) -> PyErr {
    PyValueError::new_err(e.to_string())
}

fn to_py<'py>(py: Python<'py>, v: &Value) -> PyResult<Bound<'py, PyAny>> {
    Ok(match v {
        Value::Null => py.None().into_bound(py),
        Value::Bool(b) => b.into_pyobject(py)?.to_owned().into_any(),
        Value::Number(n) => match (n.as_i64(), n.as_u64()) {
            (Some(i), _) => i.into_pyobject(py)?.into_any(),
            (_, Some(u)) => u.into_pyobject(py)?.into_any(),
            _ => n.as_f64().unwrap_or(f64::NAN).into_pyobject(py)?.into_any(),
        },
        Value::String(s) => s.into_pyobject(py)?.into_any(),
        Value::Array(a) => {
            let list = PyList::empty(py);
            for x in a {
                list.append(to_py(py, x)?)?;
            }
            list.into_any()
        }
        Value::Object(o) => {
            let d = PyDict::new(py);
            for (k, x) in o {
                d.set_item(k, to_py(py, x)?)?;
            }
            d.into_any()
        }
    })
}

fn ser<'py>(py: Python<'py>, v: &impl Serialize) -> PyResult<Bound<'py, PyAny>> {
    to_py(py, &serde_json::to_value(v).map_err(err)?)
}

/// Counter-machine program in the `.cm` assembly format.
#[pyclass(frozen)]
struct Program(CoreProgram);

#[pymethods]
impl Program {
    #[new]
    fn new(source: &str) -> PyResult<Self> {
        cm::parse_program(source).map(Self).map_err(err)
    }

    #[staticmethod]
    fn anbn() -> Self {
        Self(fixtures::anbn())
    }

    #[staticmethod]
    fn parity() -> Self {
        Self(fixtures::parity())
    }

    #[getter]
    fn registers(&self) -> usize {
        self.0.registers()
    }

    fn __len__(&self) -> usize {
        self.0.len()
    }

    /// Returns `(verdict, steps, trace)` with trace rows `(pc, head, registers)`.
    #[pyo3(signature = (input, step_limit = 100_000))]
    fn run(&self, input: &str, step_limit: u64) -> PyResult<(String, u64, Vec<(usize, usize, Vec<i64>)>)> {
        let r = cm::run(&self.0, input, step_limit).map_err(err)?;
        let trace = r.trace.into_iter().map(|s| (s.pc, s.head, s.registers)).collect();
        Ok((r.verdict.to_string(), r.steps, trace))
    }
}

/// Compiled groove force field for one (program, input) pair.
#[pyclass(frozen)]
struct ForceField(ForceFieldSpec);

#[pymethods]
impl ForceField {
    #[new]
    #[pyo3(signature = (program, input, cell_size = 6.0))]
    fn new(program: &Program, input: &str, cell_size: f64) -> PyResult<Self> {
        groove::compile(&program.0, input, GrooveParams::for_cell_size(cell_size))
            .map(Self)
            .map_err(err)
    }

    #[getter]
    fn dims(&self) -> usize {
        self.0.dims()
    }

    /// Total drift `-x/2 + groove(x)`.
    fn force(&self, x: Vec<f64>) -> PyResult<Vec<f64>> {
        if x.len() != self.0.dims() {
            return Err(err(format!("expected {} coordinates, got {}", self.0.dims(), x.len())));
        }
        Ok(self.0.eval_force(&x))
    }

    #[pyo3(signature = (samples = 2000, seed = 0))]
    fn lipschitz_estimate(&self, samples: usize, seed: u64) -> PyResult<f64> {
        groove::lipschitz_estimate(&self.0, samples, seed).map_err(err)
    }

    /// One run; returns the trajectory as a dict.
    #[pyo3(signature = (step, t_max, seed, noise_scale = 1.0, record_stride = 0))]
    fn simulate<'py>(
        &self,
        py: Python<'py>,
        step: f64,
        t_max: f64,
        seed: u64,
        noise_scale: f64,
        record_stride: u64,
    ) -> PyResult<Bound<'py, PyAny>> {
        let mut p = SdeParams::new(step, t_max, seed);
        p.noise_scale = noise_scale;
        p.record_stride = record_stride;
        let traj = py.detach(|| sde::simulate_pinball(&self.0, &p)).map_err(err)?;
        ser(py, &traj)
    }

    /// Matched-seed trials; returns the aggregate statistics as a dict.
    #[pyo3(signature = (step, t_max, trials, seed))]
    fn run_trials<'py>(&self, py: Python<'py>, step: f64, t_max: f64, trials: u64, seed: u64) -> PyResult<Bound<'py, PyAny>> {
        let p = SdeParams::new(step, t_max, 0);
        let (_, stats) = py.detach(|| sde::run_trials(&self.0, &p, trials, seed)).map_err(err)?;
        ser(py, &stats)
    }
}

/// Variance-preserving noise schedule.
#[pyclass(frozen)]
struct Schedule(NoiseSchedule);

#[pymethods]
impl Schedule {
    #[staticmethod]
    #[pyo3(signature = (beta = 1.0))]
    fn constant(beta: f64) -> PyResult<Self> {
        let s = NoiseSchedule::Constant { beta };
        s.validate().map_err(err)?;
        Ok(Self(s))
    }

    #[staticmethod]
    #[pyo3(signature = (beta0 = 0.1, beta1 = 20.0))]
    fn linear(beta0: f64, beta1: f64) -> PyResult<Self> {
        let s = NoiseSchedule::Linear { beta0, beta1 };
        s.validate().map_err(err)?;
        Ok(Self(s))
    }

    fn alpha(&self, t: f64) -> f64 {
        self.0.alpha(t)
    }
}

/// Isotropic Gaussian mixture target; variance 0 gives a point mass.
#[pyclass(frozen)]
struct Mixture(GaussianMixture);

#[pymethods]
impl Mixture {
    #[new]
    fn new(weights: Vec<f64>, means: Vec<Vec<f64>>, variances: Vec<f64>) -> PyResult<Self> {
        if weights.len() != means.len() || weights.len() != variances.len() {
            return Err(err("weights, means and variances must have equal length"));
        }
        let comps = weights
            .into_iter()
            .zip(means)
            .zip(variances)
            .map(|((weight, mean), variance)| diffusion::Component { weight, mean, variance })
            .collect();
        GaussianMixture::new(comps).map(Self).map_err(err)
    }

    #[staticmethod]
    fn standard_normal(dim: usize) -> Self {
        Self(GaussianMixture::standard_normal(dim))
    }

    #[getter]
    fn dim(&self) -> usize {
        self.0.dim()
    }

    fn log_density(&self, x: Vec<f64>) -> PyResult<f64> {
        self.0.log_density(&x).map_err(err)
    }

    /// Exact score of the forward marginal at time `t`.
    fn score(&self, schedule: &Schedule, x: Vec<f64>, t: f64) -> PyResult<Vec<f64>> {
        diffusion::exact_score(&self.0, &schedule.0, &x, t).map_err(err)
    }

    /// `n` reverse-time Euler–Maruyama draws with the exact score.
    #[pyo3(signature = (schedule, n, steps, seed))]
    fn sample(&self, py: Python<'_>, schedule: &Schedule, n: usize, steps: usize, seed: u64) -> PyResult<Vec<Vec<f64>>> {
        let cfg = diffusion::SamplerConfig::new(&schedule.0, steps);
        py.detach(|| diffusion::reverse_sample_batch(&self.0, &schedule.0, &cfg, n, seed))
            .map_err(err)
    }
}

/// Total-variation distance of reverse-sampled tokens from the target, on
/// the three-mass circle fixture, for each step count.
#[pyfunction]
#[pyo3(signature = (step_counts, samples = 10_000, seed = 1))]
fn circle_convergence<'py>(py: Python<'py>, step_counts: Vec<usize>, samples: usize, seed: u64) -> PyResult<Bound<'py, PyAny>> {
    let (mix, q) = diffusion::circle_fixture();
    let sched = NoiseSchedule::default();
    let curve = py
        .detach(|| diffusion::convergence_curve(&mix, &sched, &q, &step_counts, samples, seed))
        .map_err(err)?;
    ser(py, &curve)
}

/// Layered threshold circuit.
#[pyclass(frozen)]
struct Circuit(CoreCircuit);

#[pymethods]
impl Circuit {
    #[staticmethod]
    fn k_equals(n: usize, k: usize) -> PyResult<Self> {
        circuits::k_equals(n, k).map(Self).map_err(err)
    }

    #[staticmethod]
    fn is_in(n: usize, set: Vec<usize>) -> PyResult<Self> {
        circuits::is_in(n, &set).map(Self).map_err(err)
    }

    #[staticmethod]
    fn from_json(text: &str) -> PyResult<Self> {
        CoreCircuit::from_json(text).map(Self).map_err(err)
    }

    fn to_json(&self) -> String {
        self.0.to_json()
    }

    fn __call__(&self, bits: Vec<bool>) -> PyResult<bool> {
        self.0.eval(&bits).map_err(err)
    }

    #[getter]
    fn arity(&self) -> usize {
        self.0.arity()
    }

    #[getter]
    fn depth(&self) -> usize {
        self.0.audit_depth()
    }

    #[getter]
    fn width(&self) -> usize {
        self.0.width()
    }

    #[getter]
    fn gate_count(&self) -> usize {
        self.0.gate_count()
    }
}

/// Runs an experiment from TOML text and writes its outputs. Relative paths
/// resolve against `base_dir`. Returns `(passed, results)`.
#[pyfunction]
#[pyo3(signature = (config, base_dir = None, out = None))]
fn run_experiment<'py>(
    py: Python<'py>,
    config: &str,
    base_dir: Option<PathBuf>,
    out: Option<PathBuf>,
) -> PyResult<(bool, Bound<'py, PyAny>)> {
    let base = base_dir.unwrap_or_else(|| PathBuf::from("."));
    let mut cfg = ExperimentConfig::from_toml(config, &base).map_err(err)?;
    if let Some(o) = out {
        cfg.out = o;
    }
    let (art, _) = py.detach(|| experiments::run_experiment(&cfg)).map_err(err)?;
    Ok((art.passed, to_py(py, &art.results)?))
}

#[pymodule]
fn difflab(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<Program>()?;
    m.add_class::<ForceField>()?;
    m.add_class::<Schedule>()?;
    m.add_class::<Mixture>()?;
    m.add_class::<Circuit>()?;
    m.add_function(wrap_pyfunction!(circle_convergence, m)?)?;
    m.add_function(wrap_pyfunction!(run_experiment, m)?)?;
    Ok(())
}
