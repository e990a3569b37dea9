//! Python bindings: retention curves, parameter counts, the tokenizer,
//! bootstrap tests and the quintile decomposition.

use fleeting::freq_analysis::{under_over_sse, ResidualRecord};
use fleeting::stats::{bootstrap_t_test as t_test, PairedDiffs};
use fleeting::tokenizer::{train_bpe, BpeVocab};
use fleeting::{ModelConfig, RetentionConfig};
use pyo3::exceptions::PyValueError;
use pyo3::prelude::*;
use pyo3::types::PyDict;

fn err(e: fleeting::Error) -> PyErr {
    PyValueError::new_err(e.to_string())
}

/// Retention weight at distance `d` for buffer `echoic`, decay `alpha`, context `context`.
#[pyfunction]
fn retention_value(d: usize, echoic: usize, alpha: f64, context: usize) -> PyResult<f64> {
    let cfg = RetentionConfig::new(echoic, alpha, context).map_err(err)?;
    fleeting::retention_value(d, &cfg).map_err(err)
}

#[pyfunction]
fn retention_curve(echoic: usize, alpha: f64, context: usize) -> PyResult<Vec<f64>> {
    let cfg = RetentionConfig::new(echoic, alpha, context).map_err(err)?;
    fleeting::retention::retention_curve(&cfg).map_err(err)
}

#[pyfunction]
#[pyo3(signature = (layers, heads, width, vocab, context, use_biases=false, tie_embeddings=true, exclude_position_embeddings=true))]
#[allow(clippy::too_many_arguments)]
fn param_count(
    layers: usize,
    heads: usize,
    width: usize,
    vocab: usize,
    context: usize,
    use_biases: bool,
    tie_embeddings: bool,
    exclude_position_embeddings: bool,
) -> PyResult<usize> {
    let cfg = ModelConfig {
        layers,
        heads,
        width,
        vocab,
        context,
        use_biases,
        tie_embeddings,
        dropout: 0.0,
    };
    cfg.validate().map_err(err)?;
    Ok(fleeting::param_count(&cfg, exclude_position_embeddings))
}

/// Paired bootstrap t-test of `values` against zero.
#[pyfunction]
#[pyo3(signature = (values, n_boot=10_000, seed=0))]
fn bootstrap_t_test<'py>(py: Python<'py>, values: Vec<f64>, n_boot: usize, seed: u64) -> PyResult<Bound<'py, PyDict>> {
    let diffs = PairedDiffs::new("values", values).map_err(err)?;
    let r = t_test(&diffs, n_boot, seed).map_err(err)?;
    let d = PyDict::new(py);
    d.set_item("mean", r.mean)?;
    d.set_item("t", r.t_observed)?;
    d.set_item("p", r.p_value)?;
    d.set_item("ci", (r.ci_low, r.ci_high))?;
    d.set_item("n_boot", r.n_boot)?;
    d.set_item("seed", r.seed)?;
    Ok(d)
}

/// Per-quintile rows as dicts, quintiles cut on `log_freqs`.
#[pyfunction]
fn quintile_errors<'py>(
    py: Python<'py>,
    log_freqs: Vec<f64>,
    residuals: Vec<f64>,
    reference_mean_error: f64,
) -> PyResult<Vec<Bound<'py, PyDict>>> {
    if log_freqs.len() != residuals.len() {
        return Err(PyValueError::new_err("log_freqs and residuals differ in length"));
    }
    let records: Vec<ResidualRecord> = log_freqs
        .iter()
        .zip(&residuals)
        .enumerate()
        .map(|(i, (&log_freq, &residual))| ResidualRecord {
            word: i.to_string(),
            log_freq,
            residual,
        })
        .collect();
    let report = under_over_sse(&records, reference_mean_error).map_err(err)?;
    report
        .rows
        .iter()
        .map(|r| {
            let d = PyDict::new(py);
            d.set_item("quintile", r.quintile)?;
            d.set_item("n", r.n)?;
            d.set_item("mse", r.mse)?;
            d.set_item("sse_under", r.sse_under)?;
            d.set_item("sse_over", r.sse_over)?;
            d.set_item("norm_under", r.norm_under)?;
            d.set_item("norm_over", r.norm_over)?;
            Ok(d)
        })
        .collect()
}

/// Byte-level BPE vocabulary.
#[pyclass(name = "Tokenizer", frozen)]
struct Tokenizer {
    inner: BpeVocab,
}

#[pymethods]
impl Tokenizer {
    #[staticmethod]
    fn train(text: &str, vocab_size: usize) -> PyResult<Self> {
        Ok(Self {
            inner: train_bpe(text.as_bytes(), vocab_size).map_err(err)?,
        })
    }

    #[staticmethod]
    fn from_merges(text: &str) -> PyResult<Self> {
        Ok(Self {
            inner: BpeVocab::parse_merges(text).map_err(err)?,
        })
    }

    fn encode(&self, text: &str) -> Vec<u32> {
        self.inner.encode(text)
    }

    fn decode(&self, ids: Vec<u32>) -> PyResult<String> {
        self.inner.decode(&ids).map_err(err)
    }

    fn merges(&self) -> Vec<(u32, u32)> {
        self.inner.merges().to_vec()
    }

    fn merges_text(&self) -> String {
        self.inner.merges_text()
    }

    fn __len__(&self) -> usize {
        self.inner.len()
    }
}

#[pymodule]
fn fleeting_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_function(wrap_pyfunction!(retention_value, m)?)?;
    m.add_function(wrap_pyfunction!(retention_curve, m)?)?;
    m.add_function(wrap_pyfunction!(param_count, m)?)?;
    m.add_function(wrap_pyfunction!(bootstrap_t_test, m)?)?;
    m.add_function(wrap_pyfunction!(quintile_errors, m)?)?;
    m.add_class::<Tokenizer>()?;
    Ok(())
}
