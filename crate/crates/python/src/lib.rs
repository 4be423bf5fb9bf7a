//! Python bindings: environment stepping, training and evaluation, the
//! closed-form analytics and the advisory allocator.

use std::path::PathBuf;

use pyo3::exceptions::{PyIOError, PyValueError};
use pyo3::prelude::*;
use pyo3::types::PyDict;

use mode0_core::advisory::{self, Coloring, ConflictGraph, EscalationConfig, EscalationInputs, EscalationState};
use mode0_core::analytics;
use mode0_core::env::{self, EnvConfig, StepResult};
use mode0_core::error::Error;
use mode0_core::harness::{self, RunConfig};
use mode0_core::marl::{self, checkpoint, ActorMode, PolicyBundle};
use mode0_core::types::{Action, JointAction, PoolLayout};

fn err(e: Error) -> PyErr {
    match e {
        Error::Io { .. } => PyIOError::new_err(e.to_string()),
        other => PyValueError::new_err(other.to_string()),
    }
}

fn from_json<'py>(py: Python<'py>, s: &str) -> PyResult<Bound<'py, PyAny>> {
    py.import("json")?.call_method1("loads", (s,))
}

fn to_py<'py, T: serde::Serialize>(py: Python<'py>, v: &T) -> PyResult<Bound<'py, PyAny>> {
    from_json(py, &serde_json::to_string(v).map_err(|e| PyValueError::new_err(e.to_string()))?)
}

fn run_config(toml: Option<&str>) -> PyResult<RunConfig> {
    match toml {
        Some(s) => RunConfig::from_toml_str(s).map_err(err),
        None => Ok(RunConfig::default()),
    }
}

fn layout(m: usize, m0_pool: Option<usize>) -> PyResult<PoolLayout> {
    match m0_pool {
        Some(p) => PoolLayout::separated(m, p),
        None => PoolLayout::shared(m),
    }
    .map_err(err)
}

fn step_dict<'py>(py: Python<'py>, r: &StepResult, done: bool) -> PyResult<Bound<'py, PyDict>> {
    let d = PyDict::new(py);
    let obs: Vec<Vec<f64>> = r.observations.iter().map(|o| o.0.clone()).collect();
    d.set_item("observations", obs)?;
    d.set_item("global_state", r.global_state.0.clone())?;
    d.set_item("rewards", r.rewards.clone())?;
    d.set_item("pdr", r.per_vehicle_pdr.clone())?;
    d.set_item("sinr_db", r.per_vehicle_sinr_db.clone())?;
    d.set_item("collisions", r.collision_flags.clone())?;
    d.set_item("done", done)?;
    Ok(d)
}

/// One episode of the V2X environment.
#[pyclass(name = "Env")]
struct PyEnv {
    cfg: EnvConfig,
    inner: env::Env,
    first: StepResult,
}

#[pymethods]
impl PyEnv {
    #[new]
    #[pyo3(signature = (n, m = 5, m0_pool = None, seed = 0, config_toml = None))]
    fn new(n: usize, m: usize, m0_pool: Option<usize>, seed: u64, config_toml: Option<&str>) -> PyResult<Self> {
        let cfg = run_config(config_toml)?.env(n, layout(m, m0_pool)?);
        let (inner, first) = env::Env::reset(cfg, seed).map_err(err)?;
        Ok(Self { cfg, inner, first })
    }

    /// Restarts the episode and returns the initial observation dict.
    fn reset<'py>(&mut self, py: Python<'py>, seed: u64) -> PyResult<Bound<'py, PyDict>> {
        let (inner, first) = env::Env::reset(self.cfg, seed).map_err(err)?;
        self.inner = inner;
        self.first = first;
        step_dict(py, &self.first, false)
    }

    fn initial<'py>(&self, py: Python<'py>) -> PyResult<Bound<'py, PyDict>> {
        step_dict(py, &self.first, false)
    }

    /// Advances one TTI with `(subchannel, power_index)` per vehicle.
    fn step<'py>(&mut self, py: Python<'py>, actions: Vec<(usize, usize)>) -> PyResult<Bound<'py, PyDict>> {
        let joint = JointAction(
            actions
                .into_iter()
                .map(|(subchannel, power_index)| Action { subchannel, power_index })
                .collect(),
        );
        let r = self.inner.step(&joint).map_err(err)?;
        step_dict(py, &r, self.inner.is_done())
    }

    fn metrics<'py>(&self, py: Python<'py>) -> PyResult<Bound<'py, PyAny>> {
        to_py(py, &self.inner.finalize_metrics(0).map_err(err)?)
    }

    #[getter]
    fn n(&self) -> usize {
        self.cfg.n
    }

    #[getter]
    fn obs_dim(&self) -> usize {
        self.cfg.obs_dim()
    }

    #[getter]
    fn state_dim(&self) -> usize {
        self.cfg.state_dim()
    }

    #[getter]
    fn tti(&self) -> usize {
        self.inner.tti()
    }

    #[getter]
    fn done(&self) -> bool {
        self.inner.is_done()
    }
}

/// Trained actors and critic, paired with the environment they were built for.
#[pyclass(name = "Policy")]
struct PyPolicy {
    bundle: PolicyBundle,
    train: marl::TrainConfig,
    env: EnvConfig,
}

#[pymethods]
impl PyPolicy {
    #[staticmethod]
    #[pyo3(signature = (n, m = 5, m0_pool = None, mode = "0a", seed = 0, episodes = 1000, config_toml = None))]
    fn train(
        py: Python<'_>,
        n: usize,
        m: usize,
        m0_pool: Option<usize>,
        mode: &str,
        seed: u64,
        episodes: u64,
        config_toml: Option<&str>,
    ) -> PyResult<Self> {
        let rc = run_config(config_toml)?;
        let env = rc.env(n, layout(m, m0_pool)?);
        let mode = ActorMode::parse(mode).map_err(err)?;
        let train = rc.train();
        let out = py
            .detach(|| marl::train(env, mode, &train, seed, episodes))
            .map_err(err)?;
        Ok(Self { bundle: out.bundle, train, env })
    }

    #[staticmethod]
    #[pyo3(signature = (path, m = 5, m0_pool = None, config_toml = None))]
    fn load(path: PathBuf, m: usize, m0_pool: Option<usize>, config_toml: Option<&str>) -> PyResult<Self> {
        let (bundle, train) = checkpoint::load(&path).map_err(err)?;
        let env = run_config(config_toml)?.env(bundle.n, layout(m, m0_pool)?);
        Ok(Self { bundle, train, env })
    }

    fn save(&self, path: PathBuf) -> PyResult<()> {
        checkpoint::save(&path, &self.bundle, &self.train).map_err(err)
    }

    #[pyo3(signature = (episodes = 50, seed = 0))]
    fn evaluate<'py>(&self, py: Python<'py>, episodes: u64, seed: u64) -> PyResult<Bound<'py, PyAny>> {
        let m = py
            .detach(|| marl::evaluate(&self.bundle, self.env, episodes, seed))
            .map_err(err)?;
        to_py(py, &m)
    }

    #[getter]
    fn mode(&self) -> &'static str {
        self.bundle.mode.tag()
    }

    #[getter]
    fn n_actors(&self) -> usize {
        self.bundle.actors.len()
    }
}

#[pyfunction]
fn nash_floor(m: usize, n: usize) -> PyResult<f64> {
    analytics::nash_floor(m, n).map_err(err)
}

#[pyfunction]
fn within_pool_ceiling(m_m0: usize, m0: usize) -> PyResult<f64> {
    analytics::within_pool_ceiling(m_m0, m0).map_err(err)
}

#[pyfunction]
fn cross_class_residual(m: usize, n_other: usize) -> PyResult<f64> {
    analytics::cross_class_residual(m, n_other).map_err(err)
}

#[pyfunction]
fn pigeonhole_min_colliding_fraction(m0: usize, m_m0: usize) -> f64 {
    analytics::pigeonhole_min_colliding_fraction(m0, m_m0)
}

#[pyfunction]
#[pyo3(signature = (m0, m_m0, rho_full = analytics::DEFAULT_RHO_FULL))]
fn regime(m0: usize, m_m0: usize, rho_full: f64) -> PyResult<(f64, &'static str)> {
    let rho = analytics::rho_pool(m0, m_m0).map_err(err)?;
    Ok((rho, analytics::classify_regime(rho, rho_full).as_str()))
}

/// Returns `(mean, std_err)` of the colliding M0 fraction under uniform play.
#[pyfunction]
#[pyo3(signature = (m, n, trials = 1_000_000, seed = 0))]
fn monte_carlo_random_floor(py: Python<'_>, m: usize, n: usize, trials: u64, seed: u64) -> PyResult<(f64, f64)> {
    let est = py
        .detach(|| analytics::monte_carlo_random_floor(m, n, trials, seed))
        .map_err(err)?;
    Ok((est.mean, est.std_err))
}

/// Greedy coloring of an undirected graph; `None` when `colors` is too few.
#[pyfunction]
fn color_graph(n: usize, edges: Vec<(usize, usize)>, colors: usize) -> PyResult<Option<Vec<usize>>> {
    let mut g = ConflictGraph::new(n);
    for (a, b) in edges {
        if a >= n || b >= n || a == b {
            return Err(PyValueError::new_err(format!("bad edge ({a}, {b}) for {n} nodes")));
        }
        g.add_edge(a, b);
    }
    Ok(match advisory::greedy_color(&g, colors) {
        Coloring::Assigned(c) => Some(c),
        Coloring::Infeasible { .. } => None,
    })
}

/// Runs the escalation state machine over JSON input samples and returns the
/// final phase and the JSON-lines audit log.
#[pyfunction]
fn escalate<'py>(py: Python<'py>, samples_json: &str) -> PyResult<(Bound<'py, PyAny>, String)> {
    let samples: Vec<EscalationInputs> =
        serde_json::from_str(samples_json).map_err(|e| PyValueError::new_err(e.to_string()))?;
    let mut st = EscalationState::new(EscalationConfig::default());
    for s in &samples {
        st.step(s).map_err(err)?;
    }
    let log = String::from_utf8(advisory::log_to_bytes(st.log())).expect("log is utf-8");
    Ok((to_py(py, &st.phase)?, log))
}

/// Number of entries in an intact audit log; raises on any tampering.
#[pyfunction]
fn verify_log(log: &[u8]) -> PyResult<usize> {
    advisory::verify_bytes(log).map(|l| l.len()).map_err(err)
}

#[pyfunction]
fn read_ledger<'py>(py: Python<'py>, path: PathBuf) -> PyResult<Bound<'py, PyAny>> {
    to_py(py, &harness::read_ledger(&path).map_err(err)?)
}

#[pyfunction]
fn report<'py>(py: Python<'py>, path: PathBuf) -> PyResult<Bound<'py, PyAny>> {
    let entries = harness::read_ledger(&path).map_err(err)?;
    to_py(py, &harness::report(&entries).map_err(err)?)
}

#[pymodule]
fn mode0(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyEnv>()?;
    m.add_class::<PyPolicy>()?;
    m.add_function(wrap_pyfunction!(nash_floor, m)?)?;
    m.add_function(wrap_pyfunction!(within_pool_ceiling, m)?)?;
    m.add_function(wrap_pyfunction!(cross_class_residual, m)?)?;
    m.add_function(wrap_pyfunction!(pigeonhole_min_colliding_fraction, m)?)?;
    m.add_function(wrap_pyfunction!(regime, m)?)?;
    m.add_function(wrap_pyfunction!(monte_carlo_random_floor, m)?)?;
    m.add_function(wrap_pyfunction!(color_graph, m)?)?;
    m.add_function(wrap_pyfunction!(escalate, m)?)?;
    m.add_function(wrap_pyfunction!(verify_log, m)?)?;
    m.add_function(wrap_pyfunction!(read_ledger, m)?)?;
    m.add_function(wrap_pyfunction!(report, m)?)?;
    Ok(())
}
