//! Python bindings. Structured values cross the boundary as JSON strings in
//! the same formats the command line reads and writes.

use pyo3::create_exception;
use pyo3::exceptions::PyException;
use pyo3::prelude::*;
use serde::de::DeserializeOwned;
use serde::Serialize;

use sortflow::agents::{GreedyBottleneck, NoReallocation, Policy};
use sortflow::corpus::{generate_corpus as gen_corpus, CorpusSpec};
use sortflow::eval;
use sortflow::learn::{self, featurize, Method, TrainConfig};
use sortflow::prefgen::{self, PolicyProposals, PrefParams};
use sortflow::seed;
use sortflow::sim::{self, generate_scenario, Action, ScenarioParams, ShiftLog, SimConfig, SystemState};

create_exception!(sortflow_py, SortflowError, PyException);

fn err(e: impl std::fmt::Display) -> PyErr {
    SortflowError::new_err(e.to_string())
}

fn from_json<T: DeserializeOwned>(text: &str) -> PyResult<T> {
    serde_json::from_str(text).map_err(err)
}

fn to_json<T: Serialize>(value: &T) -> PyResult<String> {
    serde_json::to_string(value).map_err(err)
}

fn config_or_default(config: Option<&str>) -> PyResult<SimConfig> {
    let c = match config {
        Some(t) => from_json(t)?,
        None => SimConfig::default(),
    };
    c.validate().map_err(err)?;
    Ok(c)
}

/// Default simulator configuration as JSON.
#[pyfunction]
fn default_config() -> PyResult<String> {
    to_json(&SimConfig::default())
}

/// A live episode stepped one action at a time.
#[pyclass(module = "sortflow_py")]
struct Simulator {
    config: SimConfig,
    state: SystemState,
    seed: u64,
    total_reward: f64,
}

#[pymethods]
impl Simulator {
    #[new]
    #[pyo3(signature = (seed=0, config=None))]
    fn new(seed: u64, config: Option<&str>) -> PyResult<Self> {
        let (config, state) = generate_scenario(&config_or_default(config)?, &ScenarioParams::default(), seed);
        Ok(Self {
            config,
            state,
            seed,
            total_reward: 0.0,
        })
    }

    #[getter]
    fn tick(&self) -> u32 {
        self.state.tick
    }

    #[getter]
    fn done(&self) -> bool {
        self.state.tick >= self.config.episode_length
    }

    #[getter]
    fn total_reward(&self) -> f64 {
        self.total_reward
    }

    fn config_json(&self) -> PyResult<String> {
        to_json(&self.config)
    }

    fn state_json(&self) -> PyResult<String> {
        to_json(&self.state)
    }

    /// Canonical human-readable state description.
    fn state_text(&self) -> String {
        prefgen::serialize_state(&self.state, &self.config)
    }

    /// Constraint violations of `action` (a JSON move list); empty when valid.
    fn validate(&self, action: &str) -> PyResult<Vec<String>> {
        let a: Action = from_json(action)?;
        Ok(sim::validate_action(&self.state, &a, &self.config)
            .iter()
            .map(|v| v.to_string())
            .collect())
    }

    /// Applies `action` (default: keep staffing) and returns the tick's output.
    #[pyo3(signature = (action="[]"))]
    fn step(&mut self, action: &str) -> PyResult<f64> {
        let a: Action = from_json(action)?;
        let seed = seed::tick_seed(self.seed, self.state.tick);
        let res = sim::step(&self.state, &a, &self.config, Some(seed)).map_err(err)?;
        self.state = res.next_state;
        self.total_reward += res.reward;
        Ok(res.reward)
    }
}

/// A set of shift logs.
#[pyclass(module = "sortflow_py")]
struct Corpus {
    logs: Vec<ShiftLog>,
}

#[pymethods]
impl Corpus {
    #[staticmethod]
    fn from_jsonl(text: &str) -> PyResult<Self> {
        Ok(Self {
            logs: sim::read_shift_logs(text.as_bytes()).map_err(err)?,
        })
    }

    fn to_jsonl(&self) -> PyResult<String> {
        let mut buf = Vec::new();
        sim::write_shift_logs(&self.logs, &mut buf).map_err(err)?;
        String::from_utf8(buf).map_err(err)
    }

    fn __len__(&self) -> usize {
        self.logs.len()
    }

    fn shift_ids(&self) -> Vec<String> {
        self.logs.iter().map(|l| l.shift_id.clone()).collect()
    }

    /// Units dispatched per shift.
    fn outputs(&self) -> Vec<f64> {
        self.logs.iter().map(|l| l.total_reward()).collect()
    }

    fn n_moves(&self) -> usize {
        self.logs.iter().map(|l| l.n_moves()).sum()
    }
}

/// Scripted-manager shifts on random scenarios.
#[pyfunction]
#[pyo3(signature = (n, seed=0, prefix="train", config=None))]
fn generate_corpus(n: usize, seed: u64, prefix: &str, config: Option<&str>) -> PyResult<Corpus> {
    let spec = CorpusSpec {
        config: config_or_default(config)?,
        prefix: prefix.into(),
        ..Default::default()
    };
    Ok(Corpus {
        logs: gen_corpus(&spec, n, seed).map_err(err)?,
    })
}

/// A trained factorized policy.
#[pyclass(module = "sortflow_py", from_py_object)]
#[derive(Clone)]
struct Checkpoint {
    inner: learn::Checkpoint,
    early_stop_epoch: Option<usize>,
    metrics_csv: String,
}

#[pymethods]
impl Checkpoint {
    #[staticmethod]
    fn from_json(text: &str) -> PyResult<Self> {
        Ok(Self {
            inner: learn::Checkpoint::from_json(text).map_err(err)?,
            early_stop_epoch: None,
            metrics_csv: String::new(),
        })
    }

    fn to_json(&self) -> String {
        self.inner.to_json()
    }

    #[getter]
    fn method(&self) -> PyResult<String> {
        Ok(to_json(&self.inner.method)?.trim_matches('"').to_owned())
    }

    #[getter]
    fn early_stop_epoch(&self) -> Option<usize> {
        self.early_stop_epoch
    }

    /// Per-epoch training metrics as CSV (empty for loaded checkpoints).
    #[getter]
    fn metrics_csv(&self) -> String {
        self.metrics_csv.clone()
    }

    /// Greedy decoded action for the simulator's current state, as JSON.
    fn decide(&self, sim: &Simulator) -> PyResult<String> {
        to_json(&self.inner.policy.decode(&featurize(&sim.state, &sim.config)))
    }
}

/// Trains `method` ("bc", "bcft" or "ac") on `corpus`.
#[pyfunction]
#[pyo3(signature = (method, corpus, seed=0, train_config=None))]
fn train(py: Python<'_>, method: &str, corpus: &Corpus, seed: u64, train_config: Option<&str>) -> PyResult<Checkpoint> {
    let m: Method = method.parse().map_err(err)?;
    let cfg: TrainConfig = match train_config {
        Some(t) => from_json(t)?,
        None => TrainConfig::default(),
    };
    let logs = corpus.logs.clone();
    let outcome = py
        .detach(move || learn::train(m, &logs, &cfg, seed).map(|o| (o, cfg)))
        .map_err(err)?;
    let (o, cfg) = outcome;
    Ok(Checkpoint {
        metrics_csv: learn::metrics_csv(&o.metrics),
        early_stop_epoch: o.early_stop_epoch,
        inner: learn::Checkpoint {
            method: m,
            policy: o.policy,
            value: o.value,
            train_config: Some(cfg),
        },
    })
}

/// Evaluates checkpoints (plus the no-reallocation and greedy baselines)
/// against the corpus's replay; returns the report as JSON.
#[pyfunction]
#[pyo3(signature = (corpus, checkpoints, resamples=1000, seed=0))]
fn evaluate(
    py: Python<'_>,
    corpus: &Corpus,
    checkpoints: Vec<(String, Checkpoint)>,
    resamples: usize,
    seed: u64,
) -> PyResult<String> {
    let logs = corpus.logs.clone();
    let report = py.detach(move || {
        let greedy = GreedyBottleneck::default();
        let mut policies: Vec<(String, &dyn Policy)> = checkpoints
            .iter()
            .map(|(n, c)| (n.clone(), &c.inner.policy as &dyn Policy))
            .collect();
        policies.push(("no_reallocation".into(), &NoReallocation));
        policies.push(("greedy_bottleneck".into(), &greedy));
        eval::evaluate(&logs, &policies, resamples, seed)
    });
    to_json(&report.map_err(err)?)
}

/// Relative improvement of paired outputs with a 95% bootstrap interval,
/// as `(point, lo, hi)` fractions.
#[pyfunction]
#[pyo3(signature = (policy, baseline, resamples=1000, seed=0))]
fn improvement(policy: Vec<f64>, baseline: Vec<f64>, resamples: usize, seed: u64) -> PyResult<(f64, f64, f64)> {
    let i = eval::improvement(&policy, &baseline, resamples, seed).map_err(err)?;
    Ok((i.point, i.lo, i.hi))
}

/// Parses a model reply into a JSON move list.
#[pyfunction]
fn parse_action(text: &str) -> PyResult<String> {
    to_json(&prefgen::parse_action(text).map_err(err)?)
}

/// Simulator-scored preference pairs over every `stride`-th corpus state,
/// proposed by the greedy heuristic plus random moves; JSON Lines.
#[pyfunction]
#[pyo3(signature = (corpus, stride=5, random_moves=2, horizon=6, margin=0.5, seed=0))]
fn generate_preferences(
    py: Python<'_>,
    corpus: &Corpus,
    stride: usize,
    random_moves: usize,
    horizon: u32,
    margin: f64,
    seed: u64,
) -> PyResult<String> {
    let logs = corpus.logs.clone();
    let ds = py.detach(move || {
        let states = prefgen::states_from_logs(&logs, stride);
        let source = PolicyProposals::new(vec![std::sync::Arc::new(GreedyBottleneck::default())])
            .with_perturbations(random_moves);
        let params = PrefParams {
            horizon,
            margin,
            seed,
            ..Default::default()
        };
        prefgen::generate_preferences(&states, &source, &params)
    });
    Ok(ds.map_err(err)?.to_jsonl())
}

#[pymodule]
fn sortflow_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add("SortflowError", m.py().get_type::<SortflowError>())?;
    m.add_class::<Simulator>()?;
    m.add_class::<Corpus>()?;
    m.add_class::<Checkpoint>()?;
    m.add_function(wrap_pyfunction!(default_config, m)?)?;
    m.add_function(wrap_pyfunction!(generate_corpus, m)?)?;
    m.add_function(wrap_pyfunction!(train, m)?)?;
    m.add_function(wrap_pyfunction!(evaluate, m)?)?;
    m.add_function(wrap_pyfunction!(improvement, m)?)?;
    m.add_function(wrap_pyfunction!(parse_action, m)?)?;
    m.add_function(wrap_pyfunction!(generate_preferences, m)?)?;
    Ok(())
}
