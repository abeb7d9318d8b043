//! Python bindings. Configs and reports cross the boundary as JSON strings.

use icode_lab::config::{self, ExperimentConfig};
use icode_lab::contraction::{contraction_scan, ConstantMetric};
use icode_lab::dataset::{self, Dataset};
use icode_lab::experiment;
use icode_lab::fields::{ModelKind, VectorFieldModel};
use icode_lab::systems::{self, GlycoParams};
use icode_lab::train;
use pyo3::exceptions::{PyRuntimeError, PyValueError};
use pyo3::prelude::*;

fn err(e: icode_lab::Error) -> PyErr {
    match e {
        icode_lab::Error::Invalid { .. } | icode_lab::Error::Json(_) | icode_lab::Error::Domain(_) | icode_lab::Error::DimensionMismatch { .. } => PyValueError::new_err(e.to_string()),
        other => PyRuntimeError::new_err(other.to_string()),
    }
}

fn parse_config(json: &str) -> PyResult<ExperimentConfig> {
    ExperimentConfig::from_json(json).map_err(err)
}

fn to_json<T: serde::Serialize>(value: &T) -> PyResult<String> {
    serde_json::to_string(value).map_err(|e| PyRuntimeError::new_err(e.to_string()))
}

/// Ground-truth trajectories with noisy observations.
#[pyclass(name = "Dataset", frozen)]
struct PyDataset(Dataset);

#[pymethods]
impl PyDataset {
    #[staticmethod]
    fn load(dir: &str) -> PyResult<Self> {
        Dataset::load(dir.as_ref()).map(Self).map_err(err)
    }

    /// Writes the bundle and returns its fingerprint.
    fn save(&self, dir: &str) -> PyResult<String> {
        self.0.save(dir.as_ref()).map_err(err)
    }

    fn fingerprint(&self) -> PyResult<String> {
        self.0.fingerprint().map_err(err)
    }

    fn __len__(&self) -> usize {
        self.0.len()
    }

    #[getter]
    fn n(&self) -> usize {
        self.0.n()
    }

    #[getter]
    fn m(&self) -> usize {
        self.0.m()
    }

    #[getter]
    fn split(&self) -> usize {
        self.0.split
    }

    fn times(&self) -> Vec<f64> {
        self.0.grid.times()
    }

    /// Observed states of trajectory `i`, one row per time point.
    fn observed(&self, i: usize) -> PyResult<Vec<Vec<f64>>> {
        self.sample(i).map(|s| s.observed.states.clone())
    }

    fn truth(&self, i: usize) -> PyResult<Vec<Vec<f64>>> {
        self.sample(i).map(|s| s.truth.states.clone())
    }
}

impl PyDataset {
    fn sample(&self, i: usize) -> PyResult<&dataset::Sample> {
        self.0
            .samples
            .get(i)
            .ok_or_else(|| pyo3::exceptions::PyIndexError::new_err(format!("trajectory {i} out of range")))
    }
}

/// A trained or loaded vector-field model.
#[pyclass(name = "Model", frozen)]
struct PyModel(VectorFieldModel);

#[pymethods]
impl PyModel {
    #[staticmethod]
    fn from_json(text: &str) -> PyResult<Self> {
        VectorFieldModel::from_json(text).map(Self).map_err(err)
    }

    fn to_json(&self) -> PyResult<String> {
        self.0.to_json().map_err(err)
    }

    #[getter]
    fn kind(&self) -> String {
        self.0.kind().to_string()
    }

    /// Prediction of trajectory `i` from its last training point.
    fn predict(&self, data: &PyDataset, i: usize) -> PyResult<Vec<Vec<f64>>> {
        let s = data.sample(i)?;
        train::predict_sample(&self.0, &data.0, s).map(|t| t.states).map_err(err)
    }

    /// Pooled prediction metrics as JSON.
    fn evaluate(&self, data: &PyDataset) -> PyResult<String> {
        to_json(&train::evaluate(&self.0, &data.0).map_err(err)?)
    }

    /// Samples the contraction condition; `check` holds `state_box`,
    /// `input_box`, `samples`, `c`, `seed` and optionally `metric` rows.
    fn contraction_check(&self, check: &str) -> PyResult<String> {
        let v: serde_json::Value = serde_json::from_str(check).map_err(|e| PyValueError::new_err(e.to_string()))?;
        let icode = self
            .0
            .as_icode()
            .ok_or_else(|| PyValueError::new_err("the model must be an ICODE"))?;
        let boxes = |key: &str| -> PyResult<Vec<(f64, f64)>> {
            match v.get(key) {
                None => Ok(Vec::new()),
                Some(b) => serde_json::from_value(b.clone()).map_err(|e| PyValueError::new_err(format!("{key}: {e}"))),
            }
        };
        let metric = match v.get("metric") {
            None | Some(serde_json::Value::Null) => None,
            Some(rows) => {
                let rows: Vec<Vec<f64>> =
                    serde_json::from_value(rows.clone()).map_err(|e| PyValueError::new_err(format!("metric: {e}")))?;
                let n = rows.len();
                if rows.iter().any(|r| r.len() != n) {
                    return Err(PyValueError::new_err("metric: L must be square"));
                }
                Some(ConstantMetric::new(nalgebra::DMatrix::from_fn(n, n, |i, j| rows[i][j])).map_err(err)?)
            }
        };
        let report = contraction_scan(
            icode,
            metric.as_ref(),
            &boxes("state_box")?,
            &boxes("input_box")?,
            v.get("samples").and_then(|s| s.as_u64()).unwrap_or(1024) as usize,
            v.get("c").and_then(|s| s.as_f64()).unwrap_or(0.0),
            v.get("seed").and_then(|s| s.as_u64()).unwrap_or(0),
        )
        .map_err(err)?;
        to_json(&report)
    }
}

/// Outcome of a training run.
#[pyclass(name = "TrainResult", frozen, get_all)]
struct PyTrainResult {
    model: Py<PyModel>,
    loss_curve: Vec<f64>,
    best_epoch: usize,
    best_predict_mse: f64,
}

#[pyfunction]
fn presets() -> Vec<&'static str> {
    config::PRESETS.to_vec()
}

/// Fully resolved preset config as JSON.
#[pyfunction]
fn preset_config(name: &str) -> PyResult<String> {
    to_json(&config::preset_config(name).map_err(err)?)
}

#[pyfunction]
fn generate_dataset(py: Python<'_>, config: &str) -> PyResult<PyDataset> {
    let cfg = parse_config(config)?;
    py.detach(|| dataset::generate_dataset(&cfg)).map(PyDataset).map_err(err)
}

/// Trains the config's model (or `kind`) on `data`.
#[pyfunction]
#[pyo3(signature = (config, data, kind=None))]
fn train_model(py: Python<'_>, config: &str, data: &PyDataset, kind: Option<&str>) -> PyResult<PyTrainResult> {
    let mut cfg = parse_config(config)?;
    if let Some(k) = kind {
        cfg.model = k.parse::<ModelKind>().map_err(err)?;
    }
    let out = py.detach(|| train::train(&cfg, &data.0)).map_err(err)?;
    Ok(PyTrainResult {
        model: Py::new(py, PyModel(out.model))?,
        loss_curve: out.loss_curve,
        best_epoch: out.best.epoch,
        best_predict_mse: out.best.predict_mse,
    })
}

/// Comparison table as CSV.
#[pyfunction]
fn compare(py: Python<'_>, config: &str) -> PyResult<String> {
    let cfg = parse_config(config)?;
    py.detach(|| experiment::run_comparison(&cfg)).map(|c| c.to_csv()).map_err(err)
}

#[pyfunction]
fn glyco_rhs(x: Vec<f64>, u: Vec<f64>) -> PyResult<Vec<f64>> {
    systems::glyco_rhs(&x, &u, &GlycoParams::default()).map(|f| f.to_vec()).map_err(err)
}

#[pymodule]
fn icode_lab_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyDataset>()?;
    m.add_class::<PyModel>()?;
    m.add_class::<PyTrainResult>()?;
    m.add_function(wrap_pyfunction!(presets, m)?)?;
    m.add_function(wrap_pyfunction!(preset_config, m)?)?;
    m.add_function(wrap_pyfunction!(generate_dataset, m)?)?;
    m.add_function(wrap_pyfunction!(train_model, m)?)?;
    m.add_function(wrap_pyfunction!(compare, m)?)?;
    m.add_function(wrap_pyfunction!(glyco_rhs, m)?)?;
    m.add("R2_CONVENTION", icode_lab::metrics::R2_CONVENTION)?;
    Ok(())
}
