//! Python bindings for the curiosity rewards, matrix routines, environments,
//! agents and experiment harness.

use std::path::PathBuf;

use pyo3::exceptions::{PyIOError, PyRuntimeError, PyValueError};
use pyo3::prelude::*;
use pyo3::types::PyDict;

use nnm_core::agent::{Agent as CoreAgent, AgentConfig};
use nnm_core::curiosity::{self, RewardMethod, RewardSpec as CoreRewardSpec};
use nnm_core::envs::{make_env, EnvKind, EnvSpec, Environment};
use nnm_core::lab::config::{ConfigFile, ExperimentConfig, StudyBase, StudyConfig};
use nnm_core::lab::stats::wilcoxon_greater as core_wilcoxon;
use nnm_core::{matlin, DenseMatrix, Error, StateMatrix};

fn to_py(e: Error) -> PyErr {
    match e {
        Error::Io(io) => PyIOError::new_err(io.to_string()),
        Error::TrainingDivergence { .. } | Error::PolicyDivergence(_) | Error::Decomposition { .. } => {
            PyRuntimeError::new_err(e.to_string())
        }
        other => PyValueError::new_err(other.to_string()),
    }
}

/// `(u, sigma, v)` as row lists.
type SvdTriple = (Vec<Vec<f64>>, Vec<f64>, Vec<Vec<f64>>);

fn matrix(rows: Vec<Vec<f64>>) -> PyResult<DenseMatrix> {
    DenseMatrix::from_rows(&rows).map_err(to_py)
}

/// Singular values of a matrix given as a list of rows, largest first.
#[pyfunction]
fn singular_values(rows: Vec<Vec<f64>>) -> PyResult<Vec<f64>> {
    matlin::singular_values(&matrix(rows)?).map_err(to_py)
}

/// Thin SVD `(u, sigma, v)` with `a = u diag(sigma) v^T`; matrices as lists of rows.
#[pyfunction]
fn svd(rows: Vec<Vec<f64>>) -> PyResult<SvdTriple> {
    let r = matlin::svd(&matrix(rows)?).map_err(to_py)?;
    Ok((r.u.to_rows(), r.sigma, r.v.to_rows()))
}

#[pyfunction]
fn nuclear_norm(rows: Vec<Vec<f64>>) -> PyResult<f64> {
    matlin::nuclear_norm(&matrix(rows)?).map_err(to_py)
}

#[pyfunction]
fn frobenius_norm(rows: Vec<Vec<f64>>) -> PyResult<f64> {
    Ok(matlin::frobenius_norm(&matrix(rows)?))
}

/// NNM reward of an `m x n` state matrix (rows = encoding dims, columns = states).
#[pyfunction]
fn nnm_reward(rows: Vec<Vec<f64>>) -> PyResult<f64> {
    let z = StateMatrix::new(matrix(rows)?).map_err(to_py)?;
    curiosity::nnm_reward(&z).map_err(to_py)
}

/// Mean per-dimension variance across ensemble predictions.
#[pyfunction]
fn disagreement_reward(predictions: Vec<Vec<f64>>) -> PyResult<f64> {
    curiosity::disagreement_reward(&predictions).map_err(to_py)
}

#[pyfunction]
fn icm_reward(predicted: Vec<f64>, actual: Vec<f64>) -> PyResult<f64> {
    curiosity::icm_reward(&predicted, &actual).map_err(to_py)
}

#[pyfunction]
fn rnd_reward(predictor_out: Vec<f64>, frozen_out: Vec<f64>) -> PyResult<f64> {
    curiosity::rnd_reward(&predictor_out, &frozen_out).map_err(to_py)
}

#[pyfunction]
fn apt_reward(state: Vec<f64>, neighbors: Vec<Vec<f64>>) -> PyResult<f64> {
    curiosity::apt_reward(&state, &neighbors).map_err(to_py)
}

/// `alpha * r_int + beta * r_ext`.
#[pyfunction]
#[pyo3(signature = (r_int, r_ext, alpha = 1.0, beta = 2.0))]
fn combine(r_int: f64, r_ext: f64, alpha: f64, beta: f64) -> f64 {
    let mut spec = CoreRewardSpec::new(RewardMethod::Nnm);
    spec.alpha = alpha;
    spec.beta = beta;
    curiosity::combine(r_int, r_ext, &spec)
}

/// One-sided exact Wilcoxon signed-rank p-value for `x > y`.
#[pyfunction]
fn wilcoxon_greater(x: Vec<f64>, y: Vec<f64>) -> PyResult<f64> {
    if x.len() != y.len() {
        return Err(PyValueError::new_err("x and y must have equal length"));
    }
    Ok(core_wilcoxon(&x, &y))
}

/// Noise/outlier sensitivity study; one dict per (kind, level, method).
#[pyfunction]
#[pyo3(signature = (m = 128, n = 5, trials = 100, seed = 0, base = "gaussian", levels = None))]
fn synthetic_study<'py>(
    py: Python<'py>,
    m: usize,
    n: usize,
    trials: usize,
    seed: u64,
    base: &str,
    levels: Option<Vec<f64>>,
) -> PyResult<Vec<Bound<'py, PyDict>>> {
    let base: StudyBase = base.parse().map_err(PyValueError::new_err)?;
    if trials == 0 || n < 2 || m == 0 {
        return Err(PyValueError::new_err("need trials >= 1, n >= 2, m >= 1"));
    }
    let mut cfg = StudyConfig {
        m,
        n,
        trials,
        seed,
        base,
        ..StudyConfig::default()
    };
    if let Some(l) = levels {
        cfg.levels = l;
    }
    let rows = nnm_core::lab::synthetic_study(&cfg).map_err(to_py)?;
    rows.iter()
        .map(|r| {
            let d = PyDict::new(py);
            d.set_item("kind", r.kind.to_string())?;
            d.set_item("level", r.level)?;
            d.set_item("method", r.method.to_string())?;
            d.set_item("mean", r.mean)?;
            d.set_item("std", r.std)?;
            d.set_item("sem", r.sem)?;
            d.set_item("mean_rel_dev", r.mean_rel_dev)?;
            Ok(d)
        })
        .collect()
}

fn env_spec(kind: &str, width: usize, height: usize, length: usize, max_steps: Option<usize>) -> PyResult<EnvSpec> {
    let kind: EnvKind = kind.parse().map_err(PyValueError::new_err)?;
    let mut spec = match kind {
        EnvKind::GridWorld => EnvSpec::grid_world(width, height),
        EnvKind::NoisyTvGridWorld => EnvSpec::noisy_tv(width, height),
        EnvKind::ChainMdp => EnvSpec::chain(length),
    };
    if let Some(s) = max_steps {
        spec.max_steps = s;
    }
    Ok(spec)
}

/// A sparse-reward toy environment with one-hot observations.
#[pyclass(unsendable)]
struct Env {
    inner: Box<dyn Environment>,
}

#[pymethods]
impl Env {
    #[new]
    #[pyo3(signature = (kind = "grid_world", width = 20, height = 20, length = 40, max_steps = None, seed = 0))]
    fn new(kind: &str, width: usize, height: usize, length: usize, max_steps: Option<usize>, seed: u64) -> PyResult<Self> {
        let spec = env_spec(kind, width, height, length, max_steps)?.with_seed(seed);
        Ok(Self {
            inner: make_env(&spec).map_err(to_py)?,
        })
    }

    #[getter]
    fn obs_dim(&self) -> usize {
        self.inner.obs_dim()
    }

    #[getter]
    fn action_count(&self) -> usize {
        self.inner.action_count()
    }

    fn reset(&mut self) -> Vec<f64> {
        self.inner.reset()
    }

    /// Returns `(next_obs, r_ext, done)`.
    fn step(&mut self, action: usize) -> PyResult<(Vec<f64>, f64, bool)> {
        let r = self.inner.step(action).map_err(to_py)?;
        Ok((r.next_obs, r.r_ext, r.done))
    }
}

/// A PPO agent with a curiosity reward, bound to its own environment.
#[pyclass(unsendable)]
struct Agent {
    inner: CoreAgent,
}

#[pymethods]
impl Agent {
    #[new]
    #[pyo3(signature = (
        env = "grid_world", method = "nnm", seed = 0, alpha = 1.0, beta = 2.0,
        width = 20, height = 20, length = 40, max_steps = None,
        noise_sigma = 0.0, rollout_len = 512
    ))]
    #[allow(clippy::too_many_arguments)]
    fn new(
        env: &str,
        method: &str,
        seed: u64,
        alpha: f64,
        beta: f64,
        width: usize,
        height: usize,
        length: usize,
        max_steps: Option<usize>,
        noise_sigma: f64,
        rollout_len: usize,
    ) -> PyResult<Self> {
        let spec = env_spec(env, width, height, length, max_steps)?;
        let method: RewardMethod = method.parse().map_err(PyValueError::new_err)?;
        let mut reward = CoreRewardSpec::new(method);
        reward.alpha = alpha;
        reward.beta = beta;
        let mut cfg = AgentConfig::new(reward);
        cfg.noise_sigma = noise_sigma;
        cfg.rollout_len = rollout_len;
        Ok(Self {
            inner: CoreAgent::new(&spec, cfg, seed).map_err(to_py)?,
        })
    }

    #[getter]
    fn env_steps(&self) -> u64 {
        self.inner.env_steps()
    }

    /// Collects one rollout, updates the policy and the curiosity model.
    fn iterate<'py>(&mut self, py: Python<'py>) -> PyResult<Bound<'py, PyDict>> {
        let r = self.inner.iterate().map_err(to_py)?;
        let d = PyDict::new(py);
        d.set_item("update", r.update)?;
        d.set_item("env_steps", r.env_steps)?;
        d.set_item("episodes", r.episodes)?;
        d.set_item("mean_ext_return", r.mean_ext_return)?;
        d.set_item("recent_ext_return", r.recent_ext_return)?;
        d.set_item("success_rate", r.success_rate())?;
        d.set_item("mean_r_int", r.mean_r_int)?;
        d.set_item("policy_loss", r.stats.policy_loss)?;
        d.set_item("value_loss", r.stats.value_loss)?;
        d.set_item("entropy", r.stats.entropy)?;
        d.set_item("model_loss", r.model_loss)?;
        Ok(d)
    }
}

/// Runs an experiment config file; returns per-seed outcomes.
#[pyfunction]
#[pyo3(signature = (path, overrides = None))]
fn run_config<'py>(py: Python<'py>, path: PathBuf, overrides: Option<Vec<String>>) -> PyResult<Vec<Bound<'py, PyDict>>> {
    let mut file = ConfigFile::load(&path).map_err(to_py)?;
    for o in overrides.unwrap_or_default() {
        file.apply_override(&o).map_err(to_py)?;
    }
    let cfg = ExperimentConfig::from_file(&file).map_err(to_py)?;
    let outcome = nnm_core::lab::run(&cfg).map_err(to_py)?;
    outcome
        .seeds
        .iter()
        .map(|s| {
            let d = PyDict::new(py);
            d.set_item("seed", s.seed)?;
            d.set_item("final_return", s.final_return)?;
            d.set_item("success_rate", s.success_rate)?;
            d.set_item("episodes", s.episodes)?;
            Ok(d)
        })
        .collect()
}

#[pymodule]
fn nnm(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_function(wrap_pyfunction!(singular_values, m)?)?;
    m.add_function(wrap_pyfunction!(svd, m)?)?;
    m.add_function(wrap_pyfunction!(nuclear_norm, m)?)?;
    m.add_function(wrap_pyfunction!(frobenius_norm, m)?)?;
    m.add_function(wrap_pyfunction!(nnm_reward, m)?)?;
    m.add_function(wrap_pyfunction!(disagreement_reward, m)?)?;
    m.add_function(wrap_pyfunction!(icm_reward, m)?)?;
    m.add_function(wrap_pyfunction!(rnd_reward, m)?)?;
    m.add_function(wrap_pyfunction!(apt_reward, m)?)?;
    m.add_function(wrap_pyfunction!(combine, m)?)?;
    m.add_function(wrap_pyfunction!(wilcoxon_greater, m)?)?;
    m.add_function(wrap_pyfunction!(synthetic_study, m)?)?;
    m.add_function(wrap_pyfunction!(run_config, m)?)?;
    m.add_class::<Env>()?;
    m.add_class::<Agent>()?;
    Ok(())
}
