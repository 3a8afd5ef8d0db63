//! Python bindings: networks, library problems, losses, training runs and
//! slice export. Point sets cross the boundary as lists of coordinate lists.

use std::path::PathBuf;

use pyo3::exceptions::{PyIOError, PyKeyError, PyRuntimeError, PyValueError};
use pyo3::prelude::*;
use wan_core::checks::{run_suite, CHECK_MANIFEST};
use wan_core::eval::{export_slice, relative_l2_error, EvalSet};
use wan_core::experiment::{parse_slice, resolve, run_experiment, ExperimentConfig, Overrides, ResolvedExperiment};
use wan_core::geometry::CollocationBatch;
use wan_core::library::library_names;
use wan_core::network::{load_checkpoint, save_checkpoint, Network};
use wan_core::objective::{BoundaryWeight, LossContext};
use wan_core::{Activation, MlpSpec, ParamVector, WanError};

fn py_err(e: WanError) -> PyErr {
    match e {
        WanError::Config(_) | WanError::DimensionMismatch { .. } => PyValueError::new_err(e.to_string()),
        WanError::UnknownExperiment { .. } => PyKeyError::new_err(e.to_string()),
        WanError::Io(_) => PyIOError::new_err(e.to_string()),
        other => PyRuntimeError::new_err(other.to_string()),
    }
}

fn flatten(points: &[Vec<f64>], dim: usize) -> PyResult<Vec<f64>> {
    let mut flat = Vec::with_capacity(points.len() * dim);
    for (i, p) in points.iter().enumerate() {
        if p.len() != dim {
            return Err(PyValueError::new_err(format!("point {i} has {} coordinates, expected {dim}", p.len())));
        }
        flat.extend_from_slice(p);
    }
    Ok(flat)
}

/// A fully-connected scalar network.
#[pyclass(name = "Network", module = "wan", skip_from_py_object)]
#[derive(Clone)]
struct PyNetwork {
    inner: Network,
}

#[pymethods]
impl PyNetwork {
    /// `activations` cycles over the hidden layers: tanh, softplus, elu, sinc.
    #[new]
    #[pyo3(signature = (input_dim, hidden_widths, activations = vec!["tanh".to_string()], seed = 0))]
    fn new(input_dim: usize, hidden_widths: Vec<usize>, activations: Vec<String>, seed: u64) -> PyResult<Self> {
        let acts = activations
            .iter()
            .map(|a| Activation::parse(a))
            .collect::<wan_core::Result<Vec<_>>>()
            .map_err(py_err)?;
        if acts.is_empty() {
            return Err(PyValueError::new_err("at least one activation is required"));
        }
        let acts = acts.iter().cycle().take(hidden_widths.len()).copied().collect();
        let spec = MlpSpec::new(input_dim, hidden_widths, acts).map_err(py_err)?;
        Ok(Self {
            inner: Network::init(spec, seed),
        })
    }

    /// Default solution network for a problem with `input_dim` inputs.
    #[staticmethod]
    fn default_u(input_dim: usize, seed: u64) -> Self {
        Self {
            inner: Network::init(wan_core::default_u_spec(input_dim), seed),
        }
    }

    #[staticmethod]
    fn load(path: PathBuf) -> PyResult<Self> {
        let (spec, params) = load_checkpoint(path).map_err(py_err)?;
        Ok(Self {
            inner: Network::new(spec, params).map_err(py_err)?,
        })
    }

    fn save(&self, path: PathBuf) -> PyResult<()> {
        save_checkpoint(path, &self.inner.spec, &self.inner.params).map_err(py_err)
    }

    #[getter]
    fn input_dim(&self) -> usize {
        self.inner.input_dim()
    }

    #[getter]
    fn hidden_widths(&self) -> Vec<usize> {
        self.inner.spec.hidden_widths.clone()
    }

    #[getter]
    fn param_count(&self) -> usize {
        self.inner.params.len()
    }

    #[getter]
    fn params(&self) -> Vec<f64> {
        self.inner.params.0.clone()
    }

    #[setter]
    fn set_params(&mut self, params: Vec<f64>) -> PyResult<()> {
        let p = ParamVector(params);
        p.check(&self.inner.spec).map_err(py_err)?;
        self.inner.params = p;
        Ok(())
    }

    fn values(&self, points: Vec<Vec<f64>>) -> PyResult<Vec<f64>> {
        let flat = flatten(&points, self.inner.input_dim())?;
        self.inner.values(&flat).map_err(py_err)
    }

    /// Values and input gradients at each point.
    fn eval(&self, points: Vec<Vec<f64>>) -> PyResult<(Vec<f64>, Vec<Vec<f64>>)> {
        let d = self.inner.input_dim();
        let flat = flatten(&points, d)?;
        let e = self.inner.eval(&flat).map_err(py_err)?;
        let grads = e.grads().chunks(d).map(<[f64]>::to_vec).collect();
        Ok((e.values().to_vec(), grads))
    }

    fn __repr__(&self) -> String {
        format!(
            "Network(input_dim={}, hidden_widths={:?}, params={})",
            self.inner.input_dim(),
            self.inner.spec.hidden_widths,
            self.inner.params.len()
        )
    }
}

/// A resolved experiment: problem, networks and training settings.
#[pyclass(name = "Experiment", module = "wan", skip_from_py_object)]
#[derive(Clone)]
struct PyExperiment {
    inner: ResolvedExperiment,
}

#[pymethods]
impl PyExperiment {
    /// A library problem with its published defaults.
    #[staticmethod]
    fn named(problem: &str) -> PyResult<Self> {
        Ok(Self {
            inner: resolve(&ExperimentConfig::named(problem)).map_err(py_err)?,
        })
    }

    #[staticmethod]
    fn from_json(text: &str) -> PyResult<Self> {
        let cfg = ExperimentConfig::from_json(text).map_err(py_err)?;
        Ok(Self {
            inner: resolve(&cfg).map_err(py_err)?,
        })
    }

    #[getter]
    fn name(&self) -> String {
        self.inner.name.clone()
    }

    #[getter]
    fn spatial_dim(&self) -> usize {
        self.inner.problem.spatial_dim()
    }

    #[getter]
    fn input_dim(&self) -> usize {
        self.inner.u_spec.input_dim
    }

    #[getter]
    fn reported_error(&self) -> Option<f64> {
        self.inner.reported_error
    }

    fn digest(&self) -> String {
        self.inner.digest()
    }

    /// The fully expanded config as JSON.
    fn echo_json(&self) -> PyResult<String> {
        serde_json::to_string_pretty(&self.inner.echo()).map_err(|e| PyValueError::new_err(e.to_string()))
    }

    #[pyo3(signature = (seed = None, max_iterations = None))]
    fn with_overrides(&self, seed: Option<u64>, max_iterations: Option<usize>) -> PyResult<Self> {
        let mut inner = self.inner.clone();
        inner
            .apply(&Overrides {
                seed,
                max_iterations,
                output_dir: None,
            })
            .map_err(py_err)?;
        Ok(Self { inner })
    }

    /// Exact solution at `points`, if the problem has one.
    fn exact(&self, points: Vec<Vec<f64>>) -> PyResult<Option<Vec<f64>>> {
        let Some(u) = self.inner.network_exact() else {
            return Ok(None);
        };
        let d = self.inner.network_domain().input_dim();
        u.eval_batch(&flatten(&points, d)?, d).map(Some).map_err(py_err)
    }

    /// Loss terms of `u` against the test network `v` on one sampled batch.
    #[pyo3(signature = (u, v, n_interior = 256, n_boundary = None, seed = 0))]
    fn loss(&self, u: &PyNetwork, v: &PyNetwork, n_interior: usize, n_boundary: Option<usize>, seed: u64) -> PyResult<Vec<(String, f64)>> {
        let problem = &self.inner.problem;
        let faces = problem.domain.face_count();
        let n_b = n_boundary.unwrap_or(8 * faces);
        let n_init = if problem.is_parabolic() { n_b } else { 0 };
        let batch = CollocationBatch::sample(&problem.domain, n_interior, n_b, n_init, seed, 0).map_err(py_err)?;
        let weight = BoundaryWeight::Analytic {
            domain: problem.domain.clone(),
        };
        let ctx = LossContext::new(problem, &batch, &weight).map_err(py_err)?;
        let ue = ctx.eval_u(&u.inner).map_err(py_err)?;
        let ve = ctx.eval_v(&v.inner).map_err(py_err)?;
        let b = ctx.breakdown(&ue, &ve, &self.inner.train.settings()).map_err(py_err)?;
        Ok(vec![
            ("L_int".into(), b.l_int),
            ("L_bdry".into(), b.l_bdry),
            ("L_init".into(), b.l_init),
            ("total".into(), b.total),
            ("pairing".into(), b.pairing),
            ("test_norm".into(), b.test_norm),
        ])
    }

    /// Relative L2 error of `u` on the evaluation set.
    fn relative_error(&self, u: &PyNetwork) -> PyResult<Option<f64>> {
        let Some(exact) = self.inner.network_exact() else {
            return Ok(None);
        };
        let seed = self.inner.train.eval_seed.unwrap_or(self.inner.train.seed);
        let set = EvalSet::new(&self.inner.network_domain(), seed, wan_core::eval::EVAL_RESOLUTION).map_err(py_err)?;
        relative_l2_error(&u.inner, &exact, &set).map(Some).map_err(py_err)
    }

    /// Trains and writes artifacts to `out_dir`; returns the summary as JSON.
    fn run(&self, py: Python<'_>, out_dir: PathBuf) -> PyResult<String> {
        let inner = self.inner.clone();
        let summary = py.detach(move || run_experiment(&inner, &out_dir, |_| {})).map_err(py_err)?;
        serde_json::to_string(&summary).map_err(|e| PyRuntimeError::new_err(e.to_string()))
    }

    /// `(nx, ny, values, mask)` of `u` on a slice such as `"x1,x2:x3=0.5"`.
    #[pyo3(signature = (u, slice = "x1,x2", resolution = 51))]
    fn slice(&self, u: &PyNetwork, slice: &str, resolution: usize) -> PyResult<(usize, usize, Vec<f64>, Vec<bool>)> {
        let domain = self.inner.network_domain();
        let spec = parse_slice(slice, &domain, resolution).map_err(py_err)?;
        let s = export_slice(&u.inner, &domain, &spec).map_err(py_err)?;
        Ok((s.nx, s.ny, s.values, s.mask))
    }
}

/// Names of the benchmark problems.
#[pyfunction]
fn problems() -> Vec<String> {
    library_names()
}

/// Runs the oracle suite; returns `(name, passed, observed, threshold)` rows.
#[pyfunction]
fn check(py: Python<'_>) -> Vec<(String, bool, f64, String)> {
    py.detach(|| run_suite(None))
        .into_iter()
        .map(|o| (o.name.to_string(), o.passed, o.observed, o.threshold))
        .collect()
}

#[pyfunction]
fn check_names() -> Vec<&'static str> {
    CHECK_MANIFEST.to_vec()
}

#[pymodule]
pub fn wan(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyNetwork>()?;
    m.add_class::<PyExperiment>()?;
    m.add_function(wrap_pyfunction!(problems, m)?)?;
    m.add_function(wrap_pyfunction!(check, m)?)?;
    m.add_function(wrap_pyfunction!(check_names, m)?)?;
    Ok(())
}
