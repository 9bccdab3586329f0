//! Python bindings. Structured results cross the boundary as JSON and come
//! out as plain dicts and lists.

use std::collections::BTreeMap;
use std::path::PathBuf;

use prospector::bench::{scenario_discharge as discharge, Scenario, ScenarioSpec, DEFAULT_BATTERY_VOLTAGE_V};
use prospector::fingerprint::{self, DEFAULT_SPARSITY_EPSILON};
use prospector::ir::{self, ModelGraph, ModelSource};
use prospector::pipeline::{Config, Pipeline as CorePipeline, PipelineError};
use prospector::{catalog, detect, metrics, optscan, report};
use pyo3::exceptions::{PyIOError, PyRuntimeError, PyValueError};
use pyo3::prelude::*;
use pyo3::types::PyBytes;
use serde::Serialize;

fn to_py<T: Serialize>(py: Python<'_>, value: &T) -> PyResult<Py<PyAny>> {
    let text = serde_json::to_string(value).map_err(|e| PyRuntimeError::new_err(e.to_string()))?;
    Ok(py.import("json")?.call_method1("loads", (text,))?.unbind())
}

fn from_py<T: serde::de::DeserializeOwned>(py: Python<'_>, value: &Bound<'_, PyAny>) -> PyResult<T> {
    let text: String = py.import("json")?.call_method1("dumps", (value,))?.extract()?;
    serde_json::from_str(&text).map_err(|e| PyValueError::new_err(e.to_string()))
}

fn value_err(e: impl std::fmt::Display) -> PyErr {
    PyValueError::new_err(e.to_string())
}

fn pipeline_err(e: PipelineError) -> PyErr {
    match e {
        PipelineError::Io { .. } => PyIOError::new_err(e.to_string()),
        PipelineError::Config(_) | PipelineError::Decode { .. } => PyValueError::new_err(e.to_string()),
        _ => PyRuntimeError::new_err(e.to_string()),
    }
}

/// A parsed model graph.
#[pyclass(name = "Model", module = "prospector")]
struct Model {
    graph: ModelGraph,
}

#[pymethods]
impl Model {
    /// Parses `data` as `framework`; `companion` is the weights file of
    /// two-file formats (caffe, ncnn).
    #[staticmethod]
    #[pyo3(signature = (data, framework, companion=None))]
    fn parse(data: &[u8], framework: &str, companion: Option<&[u8]>) -> PyResult<Self> {
        let mut src = ModelSource::new(framework, data);
        if let Some(c) = companion {
            src = src.with_companion(c);
        }
        let graph = ir::parse_source(&src, &catalog::OpTable::builtin()).map_err(value_err)?;
        Ok(Model { graph })
    }

    #[getter]
    fn model_id(&self) -> &str {
        &self.graph.model_id
    }

    #[getter]
    fn framework(&self) -> &str {
        &self.graph.framework
    }

    #[getter]
    fn node_count(&self) -> usize {
        self.graph.nodes.len()
    }

    fn stats(&self, py: Python<'_>) -> PyResult<Py<PyAny>> {
        to_py(py, &metrics::model_stats(&self.graph).map_err(value_err)?)
    }

    fn fingerprint(&self, py: Python<'_>) -> PyResult<Py<PyAny>> {
        to_py(py, &fingerprint::fingerprint(&self.graph))
    }

    fn optimizations(&self, py: Python<'_>) -> PyResult<Py<PyAny>> {
        to_py(py, &optscan::scan_optimizations(&self.graph))
    }

    #[pyo3(signature = (epsilon=DEFAULT_SPARSITY_EPSILON))]
    fn sparsity(&self, epsilon: f64) -> PyResult<f64> {
        fingerprint::weight_sparsity(&self.graph, epsilon).map_err(value_err)
    }

    /// Canonical native JSON bytes.
    fn to_native<'py>(&self, py: Python<'py>) -> Bound<'py, PyBytes> {
        PyBytes::new(py, &ir::save_native(&self.graph))
    }

    fn __repr__(&self) -> String {
        format!("Model(framework={:?}, nodes={}, id={:?})", self.graph.framework, self.graph.nodes.len(), self.graph.model_id)
    }
}

/// Weight-sharing comparison of two models.
#[pyfunction]
fn compare_models(py: Python<'_>, a: &Model, b: &Model) -> PyResult<Py<PyAny>> {
    let r = fingerprint::compare(&fingerprint::fingerprint(&a.graph), &fingerprint::fingerprint(&b.graph));
    to_py(py, &r)
}

/// Signature verdict for `data` as `framework`: "valid", "invalid" or "unknown".
#[pyfunction]
fn validate(py: Python<'_>, data: &[u8], framework: &str) -> PyResult<Py<PyAny>> {
    to_py(py, &detect::validate(data, framework).verdict)
}

#[pyfunction]
fn ecdf(values: Vec<f64>) -> PyResult<Vec<(f64, f64)>> {
    report::ecdf(&values).map_err(value_err)
}

#[pyfunction]
fn diff_snapshots(
    py: Python<'_>,
    a: BTreeMap<String, Vec<String>>,
    b: BTreeMap<String, Vec<String>>,
) -> PyResult<Py<PyAny>> {
    to_py(py, &report::diff_snapshots(&a, &b))
}

/// Battery discharge in mAh for a named usage scenario.
#[pyfunction]
#[pyo3(signature = (scenario, per_inference_energy_j, battery_voltage_v=DEFAULT_BATTERY_VOLTAGE_V, audio_window_s=None))]
fn scenario_discharge(
    scenario: &str,
    per_inference_energy_j: f64,
    battery_voltage_v: f64,
    audio_window_s: Option<f64>,
) -> PyResult<f64> {
    let s = Scenario::parse(scenario).ok_or_else(|| PyValueError::new_err(format!("unknown scenario {scenario:?}")))?;
    Ok(discharge(&ScenarioSpec::for_scenario(s, audio_window_s), per_inference_energy_j, battery_voltage_v))
}

#[pyfunction]
fn dex_strings(data: &[u8]) -> PyResult<Vec<String>> {
    optscan::extract_dex_strings(data).map_err(value_err)
}

/// Re-serializes a report dict in canonical form and checks it parses.
#[pyfunction]
fn canonical_report<'py>(py: Python<'py>, value: &Bound<'py, PyAny>) -> PyResult<Bound<'py, PyBytes>> {
    let r: report::CorpusReport = from_py(py, value)?;
    Ok(PyBytes::new(py, &report::export_json(&r)))
}

/// The scan / analyze / bench / report stages over one corpus directory.
#[pyclass(name = "Pipeline", module = "prospector")]
struct Pipeline {
    inner: CorePipeline,
}

#[pymethods]
impl Pipeline {
    #[new]
    #[pyo3(signature = (corpus, out, config=None, jobs=1))]
    fn new(corpus: PathBuf, out: PathBuf, config: Option<PathBuf>, jobs: usize) -> PyResult<Self> {
        let config = match config {
            Some(p) => Config::load(&p).map_err(pipeline_err)?,
            None => Config::default(),
        };
        Ok(Pipeline { inner: CorePipeline::new(corpus, out, config, jobs) })
    }

    /// Returns (packages, unreadable, valid_candidates).
    fn scan(&self, py: Python<'_>) -> PyResult<(usize, usize, usize)> {
        let s = py.detach(|| self.inner.scan()).map_err(pipeline_err)?;
        Ok((s.packages, s.unreadable, s.valid_candidates))
    }

    /// Returns (models, skipped, cache_hits).
    fn analyze(&self, py: Python<'_>) -> PyResult<(usize, usize, usize)> {
        let s = py.detach(|| self.inner.analyze()).map_err(pipeline_err)?;
        Ok((s.models, s.skipped, s.cache_hits))
    }

    fn bench(&self, py: Python<'_>) -> PyResult<Py<PyAny>> {
        let records = py.detach(|| self.inner.bench()).map_err(pipeline_err)?;
        to_py(py, &records)
    }

    #[pyo3(signature = (compare=None))]
    fn report(&self, py: Python<'_>, compare: Option<PathBuf>) -> PyResult<Py<PyAny>> {
        let (r, _) = py.detach(|| self.inner.report(compare.as_deref())).map_err(pipeline_err)?;
        to_py(py, &r)
    }
}

#[pymodule(name = "prospector")]
fn prospector_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<Model>()?;
    m.add_class::<Pipeline>()?;
    m.add_function(wrap_pyfunction!(compare_models, m)?)?;
    m.add_function(wrap_pyfunction!(validate, m)?)?;
    m.add_function(wrap_pyfunction!(ecdf, m)?)?;
    m.add_function(wrap_pyfunction!(diff_snapshots, m)?)?;
    m.add_function(wrap_pyfunction!(scenario_discharge, m)?)?;
    m.add_function(wrap_pyfunction!(dex_strings, m)?)?;
    m.add_function(wrap_pyfunction!(canonical_report, m)?)?;
    m.add("SCHEMA_VERSION", report::SCHEMA_VERSION)?;
    m.add("SECTIONS", report::SECTIONS.to_vec())?;
    Ok(())
}
