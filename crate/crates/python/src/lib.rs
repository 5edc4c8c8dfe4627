//! Python bindings for the textmtl crate: the autodiff tensor, the text
//! cleaning pipeline, vocabulary encoding, classification metrics, and the
//! train/eval/compare entry points, importable as the `textmtl` module.

use std::path::PathBuf;

use pyo3::exceptions::{PyRuntimeError, PyValueError};
use pyo3::prelude::*;
use pyo3::types::{PyDict, PyList};

use textmtl_core::error::Error;
use textmtl_core::metrics::{scores, ConfusionMatrix, MetricSummary};
use textmtl_core::multitask::{load_checkpoint, predict_encoded, ModelBundle, Prediction};
use textmtl_core::runner;
use textmtl_core::tensor::Tensor as CoreTensor;
use textmtl_core::text::{build_vocab, Preprocessor, Vocabulary};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn to_py(e: Error) -> PyErr {
    if e.exit_code() == 2 {
        PyValueError::new_err(e.to_string())
    } else {
        PyRuntimeError::new_err(e.to_string())
    }
}

/// A dense f32 tensor with reverse-mode automatic differentiation.
#[pyclass(name = "Tensor")]
struct PyTensor {
    inner: CoreTensor<f32>,
}

#[pymethods]
impl PyTensor {
    /// Build a tensor from a flat list and a shape.
    #[new]
    #[pyo3(signature = (data, shape, requires_grad = false))]
    fn new(data: Vec<f32>, shape: Vec<usize>, requires_grad: bool) -> PyResult<Self> {
        let mut inner = CoreTensor::new(data, &shape).map_err(to_py)?;
        if requires_grad {
            inner = inner.requires_grad();
        }
        Ok(Self { inner })
    }

    /// An all-zero tensor of the given shape.
    #[staticmethod]
    fn zeros(shape: Vec<usize>) -> Self {
        Self { inner: CoreTensor::zeros(&shape) }
    }

    /// A seeded Normal(0, std) tensor of the given shape.
    #[staticmethod]
    fn randn(shape: Vec<usize>, std: f32, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Self { inner: CoreTensor::randn(&shape, std, &mut rng) }
    }

    #[getter]
    fn shape(&self) -> Vec<usize> {
        self.inner.shape()
    }

    #[getter]
    fn requires_grad(&self) -> bool {
        self.inner.requires_grad_flag()
    }

    /// The tensor's elements as a flat list, row-major.
    fn tolist(&self) -> Vec<f32> {
        self.inner.data()
    }

    fn matmul(&self, rhs: &PyTensor) -> PyResult<Self> {
        Ok(Self { inner: self.inner.matmul(&rhs.inner).map_err(to_py)? })
    }

    fn add(&self, rhs: &PyTensor) -> PyResult<Self> {
        Ok(Self { inner: self.inner.add(&rhs.inner).map_err(to_py)? })
    }

    fn mul(&self, rhs: &PyTensor) -> PyResult<Self> {
        Ok(Self { inner: self.inner.mul_elem(&rhs.inner).map_err(to_py)? })
    }

    fn scale(&self, c: f32) -> Self {
        Self { inner: self.inner.scale(c) }
    }

    fn gelu(&self) -> Self {
        Self { inner: self.inner.gelu() }
    }

    /// Row-wise softmax over the last dimension.
    fn softmax(&self) -> PyResult<Self> {
        Ok(Self { inner: self.inner.softmax().map_err(to_py)? })
    }

    /// Sum of every element, as a scalar tensor.
    fn sum(&self) -> Self {
        Self { inner: self.inner.sum() }
    }

    /// Mean negative log-likelihood of `[batch, classes]` row
    /// probabilities against class ids. Chain it directly after
    /// `softmax` to get the fused logits gradient.
    fn cross_entropy(&self, labels: Vec<usize>) -> PyResult<Self> {
        Ok(Self { inner: self.inner.cross_entropy(&labels).map_err(to_py)? })
    }

    /// The single element of a scalar tensor.
    fn item(&self) -> PyResult<f32> {
        self.inner.item().map_err(to_py)
    }

    /// Propagate gradients from this scalar back to every input that
    /// requires them.
    fn backward(&self) -> PyResult<()> {
        self.inner.backward().map_err(to_py)
    }

    /// The accumulated gradient, if this tensor requires one.
    fn grad(&self) -> Option<Vec<f32>> {
        self.inner.grad()
    }

    fn zero_grad(&self) {
        self.inner.zero_grad();
    }

    fn __repr__(&self) -> String {
        format!("Tensor(shape={:?})", self.inner.shape())
    }
}

/// Normalize one text through the full cleaning pipeline. Pass a
/// `lexicon` of known words to enable hashtag segmentation and
/// elongation recovery against it. Returns the cleaned text, or an
/// empty string when fewer than two tokens survive.
#[pyfunction]
#[pyo3(signature = (text, lexicon = None))]
fn preprocess(text: &str, lexicon: Option<Vec<String>>) -> String {
    let pre = match lexicon {
        Some(words) => Preprocessor::with_lexicon(words),
        None => Preprocessor::new(),
    };
    pre.preprocess(text)
}

/// A token-to-id vocabulary with the four reserved entries.
#[pyclass(name = "Vocabulary")]
struct PyVocabulary {
    inner: Vocabulary,
}

#[pymethods]
impl PyVocabulary {
    /// Count whitespace tokens across `texts` and keep the frequent ones.
    #[staticmethod]
    #[pyo3(signature = (texts, min_frequency = 1, max_size = 30000))]
    fn build(texts: Vec<String>, min_frequency: usize, max_size: usize) -> PyResult<Self> {
        let vocab = build_vocab(texts.iter().map(|s| s.as_str()), min_frequency, max_size)
            .map_err(to_py)?;
        Ok(Self { inner: vocab })
    }

    fn __len__(&self) -> usize {
        self.inner.len()
    }

    /// Encode a cleaned text into `(ids, attention_mask)`, padded or
    /// truncated to `max_seq_len`.
    fn encode(&self, text: &str, max_seq_len: usize) -> PyResult<(Vec<usize>, Vec<u32>)> {
        let enc = self.inner.encode(text, max_seq_len).map_err(to_py)?;
        let mask = enc.attention_mask.iter().map(|&m| u32::from(m)).collect();
        Ok((enc.ids, mask))
    }
}

fn summary_into_dict(py: Python<'_>, dict: &Bound<'_, PyDict>, m: &MetricSummary) -> PyResult<()> {
    let _ = py;
    dict.set_item("accuracy", m.accuracy)?;
    dict.set_item("precision_macro", m.precision_macro)?;
    dict.set_item("recall_macro", m.recall_macro)?;
    dict.set_item("f1_macro", m.f1_macro)?;
    dict.set_item("f1_weighted", m.f1_weighted)?;
    Ok(())
}

/// Score predictions against truth. Both are class-id lists indexing into
/// `labels`. Returns a dict of summary metrics plus `per_class` rows and
/// the raw `confusion` counts (rows = true class).
#[pyfunction]
fn score_predictions(
    py: Python<'_>,
    true_labels: Vec<usize>,
    predicted: Vec<usize>,
    labels: Vec<String>,
) -> PyResult<Py<PyDict>> {
    let cm = ConfusionMatrix::from_pairs(&true_labels, &predicted, &labels).map_err(to_py)?;
    let (summary, per_class) = scores(&cm).map_err(to_py)?;
    let out = PyDict::new(py);
    summary_into_dict(py, &out, &summary)?;
    let rows = PyList::empty(py);
    for class in &per_class {
        let row = PyDict::new(py);
        row.set_item("label", &class.label)?;
        row.set_item("support", class.support)?;
        row.set_item("precision", class.precision)?;
        row.set_item("recall", class.recall)?;
        row.set_item("f1", class.f1)?;
        rows.append(row)?;
    }
    out.set_item("per_class", rows)?;
    out.set_item("confusion", cm.rows())?;
    Ok(out.into())
}

/// Train from a TOML config, exactly like `textmtl train`. Returns the
/// artifact paths: `checkpoint`, `train_log`, `output_dir`, and a
/// `reports` dict mapping each trained task to its report JSON.
#[pyfunction]
#[pyo3(signature = (config, seed = None, epochs = None, output = None))]
fn train(
    py: Python<'_>,
    config: PathBuf,
    seed: Option<u64>,
    epochs: Option<usize>,
    output: Option<PathBuf>,
) -> PyResult<Py<PyDict>> {
    let artifacts =
        runner::cmd_train(&config, seed, epochs, output.as_deref()).map_err(to_py)?;
    let out = PyDict::new(py);
    out.set_item("output_dir", artifacts.output_dir)?;
    out.set_item("checkpoint", artifacts.checkpoint)?;
    out.set_item("train_log", artifacts.train_log)?;
    let reports = PyDict::new(py);
    for (task, path) in &artifacts.reports {
        reports.set_item(task, path)?;
    }
    out.set_item("reports", reports)?;
    Ok(out.into())
}

/// Score a checkpoint against a labeled CSV, exactly like `textmtl eval`.
/// Returns the summary metrics plus the artifact paths and rendered text.
#[pyfunction]
#[pyo3(signature = (checkpoint, data, task, output = None))]
fn evaluate(
    py: Python<'_>,
    checkpoint: PathBuf,
    data: PathBuf,
    task: &str,
    output: Option<PathBuf>,
) -> PyResult<Py<PyDict>> {
    let artifacts =
        runner::cmd_eval(&checkpoint, &data, task, output.as_deref()).map_err(to_py)?;
    let out = PyDict::new(py);
    summary_into_dict(py, &out, &artifacts.report.metrics)?;
    out.set_item("task", &artifacts.report.task)?;
    out.set_item("model", &artifacts.report.model)?;
    out.set_item("text", artifacts.report.to_text())?;
    out.set_item("report_json", artifacts.report_json)?;
    out.set_item("report_text", artifacts.report_text)?;
    out.set_item("confusion_csv", artifacts.confusion_csv)?;
    Ok(out.into())
}

/// Merge report JSON files into one comparison, exactly like
/// `textmtl compare`. Returns the rendered table.
#[pyfunction]
#[pyo3(signature = (reports, output = None))]
fn compare(reports: Vec<PathBuf>, output: Option<PathBuf>) -> PyResult<String> {
    let artifacts = runner::cmd_compare(&reports, output.as_deref()).map_err(to_py)?;
    Ok(artifacts.rendered)
}

/// A trained model loaded from a checkpoint, ready to classify raw text.
#[pyclass(name = "Classifier")]
struct PyClassifier {
    bundle: ModelBundle,
    preprocessor: Preprocessor,
    vocab: Vocabulary,
}

#[pymethods]
impl PyClassifier {
    /// Load a checkpoint written by `train`.
    #[staticmethod]
    fn load(path: PathBuf) -> PyResult<Self> {
        let bundle = load_checkpoint(&path).map_err(to_py)?;
        let vocab = bundle
            .meta
            .vocab
            .as_ref()
            .ok_or_else(|| {
                PyRuntimeError::new_err("checkpoint sidecar carries no vocabulary")
            })?
            .to_vocabulary()
            .map_err(to_py)?;
        let preprocessor = match &bundle.meta.lexicon {
            Some(words) => Preprocessor::with_lexicon(words.iter().cloned()),
            None => Preprocessor::new(),
        };
        Ok(Self { bundle, preprocessor, vocab })
    }

    /// The task names this checkpoint serves.
    fn tasks(&self) -> Vec<String> {
        self.bundle.model.task_specs().iter().map(|s| s.name.clone()).collect()
    }

    /// The label names of one task.
    fn labels(&self, task: &str) -> PyResult<Vec<String>> {
        let spec = self.bundle.model.task_spec(task).map_err(to_py)?;
        Ok(spec.label_names.clone())
    }

    /// Classify raw texts under one task. Each entry is the predicted
    /// label, or None when the text normalizes to fewer than two tokens.
    fn predict(&self, task: &str, texts: Vec<String>) -> PyResult<Vec<Option<String>>> {
        let predictions =
            predict_encoded(&self.bundle.model, task, &texts, &self.preprocessor, &self.vocab)
                .map_err(to_py)?;
        Ok(predictions
            .into_iter()
            .map(|p| match p {
                Prediction::Rejected => None,
                Prediction::Label { label, .. } => Some(label),
            })
            .collect())
    }

    /// Class probabilities for raw texts under one task; None marks a
    /// rejected text.
    fn predict_proba(&self, task: &str, texts: Vec<String>) -> PyResult<Vec<Option<Vec<f32>>>> {
        let predictions =
            predict_encoded(&self.bundle.model, task, &texts, &self.preprocessor, &self.vocab)
                .map_err(to_py)?;
        Ok(predictions
            .into_iter()
            .map(|p| match p {
                Prediction::Rejected => None,
                Prediction::Label { probs, .. } => Some(probs),
            })
            .collect())
    }
}

#[pymodule]
fn textmtl(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyTensor>()?;
    m.add_class::<PyVocabulary>()?;
    m.add_class::<PyClassifier>()?;
    m.add_function(wrap_pyfunction!(preprocess, m)?)?;
    m.add_function(wrap_pyfunction!(score_predictions, m)?)?;
    m.add_function(wrap_pyfunction!(train, m)?)?;
    m.add_function(wrap_pyfunction!(evaluate, m)?)?;
    m.add_function(wrap_pyfunction!(compare, m)?)?;
    Ok(())
}
