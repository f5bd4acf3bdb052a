//! Python bindings: BLEU, classification metrics, and the experiment runner.

use pyo3::exceptions::{PyRuntimeError, PyValueError};
use pyo3::prelude::*;
use pyo3::types::PyDict;

use textbalance::expcli::{render_report as render, run_experiment as run, ExperimentConfig, ExperimentReport, Format};
use textbalance::genmetrics::{bleu as corpus_bleu, BleuConfig};
use textbalance::sentclass::compute_metrics;

fn runtime(e: textbalance::Error) -> PyErr {
    PyRuntimeError::new_err(format!("{} ({})", e, e.kind()))
}

fn json_err(e: serde_json::Error) -> PyErr {
    PyValueError::new_err(e.to_string())
}

/// Corpus BLEU of tokenized hypotheses against a pooled reference set.
#[pyfunction]
#[pyo3(signature = (references, hypotheses, max_n = 4))]
fn bleu(references: Vec<Vec<String>>, hypotheses: Vec<Vec<String>>, max_n: usize) -> PyResult<f64> {
    corpus_bleu(&references, &hypotheses, &BleuConfig::with_n(max_n)).map_err(runtime)
}

/// Accuracy, macro scores and per-category scores for integer labels.
#[pyfunction]
fn metrics<'py>(py: Python<'py>, truth: Vec<usize>, pred: Vec<usize>, k: usize) -> PyResult<Bound<'py, PyDict>> {
    let m = compute_metrics(&truth, &pred, k).map_err(runtime)?;
    let d = PyDict::new(py);
    d.set_item("accuracy", m.accuracy)?;
    d.set_item("macro_precision", m.macro_precision)?;
    d.set_item("macro_recall", m.macro_recall)?;
    d.set_item("macro_f1", m.macro_f1)?;
    d.set_item("f1", m.f1)?;
    d.set_item("confusion", m.confusion)?;
    Ok(d)
}

/// Runs a full experiment from a JSON config and returns the report JSON.
#[pyfunction]
fn run_experiment(py: Python<'_>, config_json: &str) -> PyResult<String> {
    let config: ExperimentConfig = serde_json::from_str(config_json).map_err(json_err)?;
    let report = py.detach(|| run(&config)).map_err(runtime)?;
    render(&report, Format::Json).map_err(runtime)
}

/// Renders a report JSON as "markdown", "csv" or "json".
#[pyfunction]
#[pyo3(signature = (report_json, format = "markdown"))]
fn render_report(report_json: &str, format: &str) -> PyResult<String> {
    let report: ExperimentReport = serde_json::from_str(report_json).map_err(json_err)?;
    let format = match format {
        "markdown" => Format::Markdown,
        "csv" => Format::Csv,
        "json" => Format::Json,
        other => return Err(PyValueError::new_err(format!("unknown format {other:?}"))),
    };
    render(&report, format).map_err(runtime)
}

/// Default experiment config as JSON, a starting point for edits.
#[pyfunction]
fn default_config() -> PyResult<String> {
    serde_json::to_string_pretty(&ExperimentConfig::default()).map_err(json_err)
}

#[pymodule]
fn textbalance_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_function(wrap_pyfunction!(bleu, m)?)?;
    m.add_function(wrap_pyfunction!(metrics, m)?)?;
    m.add_function(wrap_pyfunction!(run_experiment, m)?)?;
    m.add_function(wrap_pyfunction!(render_report, m)?)?;
    m.add_function(wrap_pyfunction!(default_config, m)?)?;
    Ok(())
}
