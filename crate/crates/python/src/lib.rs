//! Python bindings: metrics, counterfactual search, loss values, datasets
//! and experiment runs.

use std::path::PathBuf;

use pyo3::exceptions::PyValueError;
use pyo3::prelude::*;
use pyo3::types::PyDict;

use sccaf_core::counterfactual::{self, NeighborLists};
use sccaf_core::ingest::{self, DatasetMeta, TabularGraphDataset};
use sccaf_core::losses::{self, Distance};
use sccaf_core::metrics::{self, EvalReport};
use sccaf_core::synthetic::{self, TwoBlockSpec};
use sccaf_core::tensor::{Tape, Tensor};
use sccaf_core::trainer::{self, ConfigFile, RunResult};

fn err(e: sccaf_core::Error) -> PyErr {
    PyValueError::new_err(e.to_string())
}

fn matrix(rows: &[Vec<f64>]) -> PyResult<Tensor> {
    if rows.is_empty() {
        return Err(PyValueError::new_err("matrix has no rows"));
    }
    Tensor::from_rows(rows).map_err(err)
}

fn all_or(pool: Option<Vec<usize>>, n: usize) -> Vec<usize> {
    pool.unwrap_or_else(|| (0..n).collect())
}

fn report_dict<'py>(py: Python<'py>, r: &EvalReport) -> PyResult<Bound<'py, PyDict>> {
    let d = PyDict::new(py);
    d.set_item("auc", r.auc)?;
    d.set_item("f1", r.f1)?;
    d.set_item("delta_sp", r.delta_sp)?;
    d.set_item("delta_eo", r.delta_eo)?;
    d.set_item(
        "group_counts",
        r.group_counts
            .map(|a| a.map(|b| b.to_vec()).to_vec())
            .to_vec(),
    )?;
    Ok(d)
}

// metrics ------------------------------------------------------------------

#[pyfunction]
#[pyo3(signature = (scores, y, idx=None))]
fn auc(scores: Vec<f64>, y: Vec<u8>, idx: Option<Vec<usize>>) -> PyResult<f64> {
    metrics::auc(&scores, &y, &all_or(idx, y.len())).map_err(err)
}

#[pyfunction]
#[pyo3(signature = (yhat, y, idx=None))]
fn f1(yhat: Vec<u8>, y: Vec<u8>, idx: Option<Vec<usize>>) -> PyResult<f64> {
    metrics::f1(&yhat, &y, &all_or(idx, y.len())).map_err(err)
}

#[pyfunction]
#[pyo3(signature = (yhat, s, idx=None))]
fn statistical_parity(yhat: Vec<u8>, s: Vec<u8>, idx: Option<Vec<usize>>) -> PyResult<f64> {
    metrics::statistical_parity(&yhat, &s, &all_or(idx, s.len())).map_err(err)
}

#[pyfunction]
#[pyo3(signature = (yhat, y, s, idx=None))]
fn equal_opportunity(
    yhat: Vec<u8>,
    y: Vec<u8>,
    s: Vec<u8>,
    idx: Option<Vec<usize>>,
) -> PyResult<f64> {
    metrics::equal_opportunity(&yhat, &y, &s, &all_or(idx, s.len())).map_err(err)
}

/// All four metrics, thresholding scores at 0.5.
#[pyfunction]
#[pyo3(signature = (scores, y, s, idx=None))]
fn evaluate<'py>(
    py: Python<'py>,
    scores: Vec<f64>,
    y: Vec<u8>,
    s: Vec<u8>,
    idx: Option<Vec<usize>>,
) -> PyResult<Bound<'py, PyDict>> {
    let r = EvalReport::evaluate(&scores, &y, &s, &all_or(idx, y.len())).map_err(err)?;
    report_dict(py, &r)
}

// graph and counterfactuals -------------------------------------------------

/// Dense `D^-1/2 (A + I) D^-1/2` for an undirected edge list.
#[pyfunction]
fn normalized_adjacency(n: usize, edges: Vec<(usize, usize)>) -> PyResult<Vec<Vec<f64>>> {
    let g = sccaf_core::graph::Graph::new(n, &edges).map_err(err)?;
    Ok(g.normalized_adjacency().to_dense().to_rows())
}

fn lists(found: NeighborLists) -> (Vec<Vec<usize>>, usize) {
    (found.lists, found.empty)
}

/// K nearest nodes with the same predicted label and the other group.
/// Returns `(lists, empty_count)`.
#[pyfunction]
#[pyo3(signature = (h, yhat, s, k, pool=None))]
fn find_env_counterfactuals(
    h: Vec<Vec<f64>>,
    yhat: Vec<u8>,
    s: Vec<u8>,
    k: usize,
    pool: Option<Vec<usize>>,
) -> PyResult<(Vec<Vec<usize>>, usize)> {
    let t = matrix(&h)?;
    let pool = all_or(pool, t.rows());
    counterfactual::find_env_counterfactuals(&t, &yhat, &s, k, &pool)
        .map(lists)
        .map_err(err)
}

/// K nearest nodes with the other predicted label and the same group.
#[pyfunction]
#[pyo3(signature = (h, yhat, s, k, pool=None))]
fn find_content_counterfactuals(
    h: Vec<Vec<f64>>,
    yhat: Vec<u8>,
    s: Vec<u8>,
    k: usize,
    pool: Option<Vec<usize>>,
) -> PyResult<(Vec<Vec<usize>>, usize)> {
    let t = matrix(&h)?;
    let pool = all_or(pool, t.rows());
    counterfactual::find_content_counterfactuals(&t, &yhat, &s, k, &pool)
        .map(lists)
        .map_err(err)
}

#[pyfunction]
#[pyo3(signature = (h, s, k, pool=None))]
fn find_env_neighbors(
    h: Vec<Vec<f64>>,
    s: Vec<u8>,
    k: usize,
    pool: Option<Vec<usize>>,
) -> PyResult<(Vec<Vec<usize>>, usize)> {
    let t = matrix(&h)?;
    let pool = all_or(pool, t.rows());
    counterfactual::find_env_neighbors(&t, &s, k, &pool)
        .map(lists)
        .map_err(err)
}

// loss values ---------------------------------------------------------------

fn distance(name: &str) -> PyResult<Distance> {
    name.parse().map_err(err)
}

#[pyfunction]
fn prediction_loss(logits: Vec<Vec<f64>>, labels: Vec<u8>, idx: Vec<usize>) -> PyResult<f64> {
    let tape = Tape::new();
    let v = tape.constant(matrix(&logits)?);
    Ok(losses::prediction_loss(v, &labels, &idx)
        .map_err(err)?
        .value())
}

#[pyfunction]
#[pyo3(signature = (c, labels, tau, anchors=None))]
fn supervised_contrastive_loss(
    c: Vec<Vec<f64>>,
    labels: Vec<u8>,
    tau: f64,
    anchors: Option<Vec<usize>>,
) -> PyResult<f64> {
    let tape = Tape::new();
    let v = tape.constant(matrix(&c)?);
    let anchors = all_or(anchors, labels.len());
    Ok(
        losses::supervised_contrastive_loss(v, &labels, tau, &anchors)
            .map_err(err)?
            .value(),
    )
}

#[pyfunction]
fn sufficiency_loss(
    h: Vec<Vec<f64>>,
    positives: Vec<(usize, usize)>,
    negatives: Vec<(usize, usize)>,
) -> PyResult<f64> {
    let tape = Tape::new();
    let v = tape.constant(matrix(&h)?);
    Ok(losses::sufficiency_loss(v, &positives, &negatives)
        .map_err(err)?
        .value())
}

#[pyfunction]
#[pyo3(signature = (e, neighbors, distance_kind="cosine"))]
fn environmental_loss(
    e: Vec<Vec<f64>>,
    neighbors: Vec<Vec<usize>>,
    distance_kind: &str,
) -> PyResult<f64> {
    let tape = Tape::new();
    let v = tape.constant(matrix(&e)?);
    Ok(
        losses::environmental_loss(v, &neighbors, distance(distance_kind)?)
            .map_err(err)?
            .value(),
    )
}

// datasets and runs ---------------------------------------------------------

/// Node features, binary labels and sensitive attribute, and the graph.
#[pyclass(name = "Dataset", module = "sccaf")]
struct PyDataset {
    inner: TabularGraphDataset,
}

#[pymethods]
impl PyDataset {
    #[getter]
    fn name(&self) -> String {
        self.inner.name.clone()
    }

    #[getter]
    fn num_nodes(&self) -> usize {
        self.inner.num_nodes()
    }

    #[getter]
    fn num_features(&self) -> usize {
        self.inner.num_features()
    }

    #[getter]
    fn feature_names(&self) -> Vec<String> {
        self.inner.feature_names.clone()
    }

    #[getter]
    fn features(&self) -> Vec<Vec<f64>> {
        self.inner.features.to_rows()
    }

    /// Labels with `None` for unlabeled nodes.
    #[getter]
    fn labels(&self) -> Vec<Option<u8>> {
        self.inner.labels.clone()
    }

    #[getter]
    fn sensitive(&self) -> Vec<u8> {
        self.inner.sensitive.clone()
    }

    #[getter]
    fn edges(&self) -> Vec<(usize, usize)> {
        self.inner.graph.edges().to_vec()
    }

    /// Writes features.csv and edges.csv into `dir`.
    fn save(&self, dir: PathBuf) -> PyResult<()> {
        self.inner.save(&dir).map(|_| ()).map_err(err)
    }

    fn __repr__(&self) -> String {
        format!(
            "Dataset({:?}, nodes={}, edges={}, features={})",
            self.inner.name,
            self.inner.num_nodes(),
            self.inner.graph.num_edges(),
            self.inner.num_features()
        )
    }
}

/// Reads a features CSV and an edge list. `label` and `sensitive` default to
/// the preset for `name` when it is a known dataset.
#[pyfunction]
#[pyo3(signature = (features, edges, name, label=None, sensitive=None))]
fn load_dataset(
    features: PathBuf,
    edges: PathBuf,
    name: &str,
    label: Option<&str>,
    sensitive: Option<&str>,
) -> PyResult<PyDataset> {
    let mut meta = match DatasetMeta::preset(name) {
        Some(m) => m,
        None => match (label, sensitive) {
            (Some(l), Some(s)) => DatasetMeta::new(name, l, s),
            _ => {
                return Err(PyValueError::new_err(format!(
                    "no preset for {name:?}; pass label and sensitive"
                )))
            }
        },
    };
    if let Some(l) = label {
        meta.label_column = l.into();
    }
    if let Some(s) = sensitive {
        meta.sensitive_column = s.into();
    }
    let inner = ingest::load_dataset(&features, &edges, &meta).map_err(err)?;
    Ok(PyDataset { inner })
}

/// Synthetic two-community graph whose labels leak the sensitive attribute.
#[pyfunction]
#[pyo3(signature = (n=400, seed=0, leakage=1.0))]
fn two_block(n: usize, seed: u64, leakage: f64) -> PyResult<PyDataset> {
    let spec = TwoBlockSpec {
        n,
        leakage,
        ..Default::default()
    };
    let inner = synthetic::two_block(&spec, seed).map_err(err)?;
    Ok(PyDataset { inner })
}

/// Experiment settings, edited with the same `section.key` names as the
/// config file format.
#[pyclass(name = "Config", module = "sccaf", skip_from_py_object)]
#[derive(Clone)]
struct PyConfig {
    inner: ConfigFile,
}

#[pymethods]
impl PyConfig {
    #[new]
    #[pyo3(signature = (**overrides))]
    fn new(overrides: Option<&Bound<'_, PyDict>>) -> PyResult<Self> {
        let mut cfg = PyConfig {
            inner: ConfigFile::default(),
        };
        if let Some(o) = overrides {
            for (k, v) in o.iter() {
                let key: String = k.extract()?;
                cfg.set(&key.replacen('_', ".", 1), &v.str()?.to_string())?;
            }
        }
        Ok(cfg)
    }

    #[staticmethod]
    fn load(path: PathBuf) -> PyResult<Self> {
        Ok(PyConfig {
            inner: ConfigFile::load(&path).map_err(err)?,
        })
    }

    /// Sets one key, e.g. `cfg.set("loss.omega", "0.1")`.
    fn set(&mut self, key: &str, value: &str) -> PyResult<()> {
        self.inner.set(key, value).map_err(err)
    }

    #[getter]
    fn method(&self) -> &'static str {
        self.inner.experiment.method()
    }

    fn lock(&self) -> String {
        self.inner.to_lock_string()
    }

    fn __repr__(&self) -> String {
        format!(
            "Config(method={}, fingerprint={})",
            self.method(),
            trainer::fingerprint(&self.inner.experiment)
        )
    }
}

fn result_dict<'py>(py: Python<'py>, r: &RunResult) -> PyResult<Bound<'py, PyDict>> {
    let d = PyDict::new(py);
    d.set_item("dataset", &r.dataset)?;
    d.set_item("method", &r.method)?;
    let summary = |m: &trainer::MetricSummary| -> PyResult<Bound<'py, PyDict>> {
        let s = PyDict::new(py);
        s.set_item("auc", m.auc)?;
        s.set_item("f1", m.f1)?;
        s.set_item("delta_sp", m.delta_sp)?;
        s.set_item("delta_eo", m.delta_eo)?;
        Ok(s)
    };
    d.set_item("mean", summary(&r.mean)?)?;
    d.set_item("std", summary(&r.std)?)?;
    d.set_item("val_auc", r.val_auc)?;
    d.set_item("val_delta_sp", r.val_delta_sp)?;
    let mut splits = Vec::new();
    for s in &r.splits {
        let sd = report_dict(py, &s.test)?;
        sd.set_item("seed", s.seed)?;
        sd.set_item("best_epoch", s.best_epoch)?;
        sd.set_item("epochs_run", s.epochs_run)?;
        splits.push(sd);
    }
    d.set_item("splits", splits)?;
    let failures: Vec<(u64, String)> = r
        .failures
        .iter()
        .map(|f| (f.seed, f.error.clone()))
        .collect();
    d.set_item("failures", failures)?;
    d.set_item("fingerprint", &r.fingerprint)?;
    d.set_item("elapsed", r.elapsed.as_secs_f64())?;
    Ok(d)
}

/// Pretrain and train on every split seed of `config`; the interpreter lock
/// is released while training runs.
#[pyfunction]
#[pyo3(signature = (dataset, config=None))]
fn run_experiment<'py>(
    py: Python<'py>,
    dataset: &PyDataset,
    config: Option<&PyConfig>,
) -> PyResult<Bound<'py, PyDict>> {
    let cfg = config.map_or_else(
        || ConfigFile::default().experiment,
        |c| c.inner.experiment.clone(),
    );
    let ds = &dataset.inner;
    let r = py
        .detach(|| trainer::run_experiment(ds, &cfg))
        .map_err(err)?;
    result_dict(py, &r)
}

#[pymodule]
fn sccaf(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_function(wrap_pyfunction!(auc, m)?)?;
    m.add_function(wrap_pyfunction!(f1, m)?)?;
    m.add_function(wrap_pyfunction!(statistical_parity, m)?)?;
    m.add_function(wrap_pyfunction!(equal_opportunity, m)?)?;
    m.add_function(wrap_pyfunction!(evaluate, m)?)?;
    m.add_function(wrap_pyfunction!(normalized_adjacency, m)?)?;
    m.add_function(wrap_pyfunction!(find_env_counterfactuals, m)?)?;
    m.add_function(wrap_pyfunction!(find_content_counterfactuals, m)?)?;
    m.add_function(wrap_pyfunction!(find_env_neighbors, m)?)?;
    m.add_function(wrap_pyfunction!(prediction_loss, m)?)?;
    m.add_function(wrap_pyfunction!(supervised_contrastive_loss, m)?)?;
    m.add_function(wrap_pyfunction!(sufficiency_loss, m)?)?;
    m.add_function(wrap_pyfunction!(environmental_loss, m)?)?;
    m.add_function(wrap_pyfunction!(load_dataset, m)?)?;
    m.add_function(wrap_pyfunction!(two_block, m)?)?;
    m.add_function(wrap_pyfunction!(run_experiment, m)?)?;
    m.add_class::<PyDataset>()?;
    m.add_class::<PyConfig>()?;
    Ok(())
}
