//! Python bindings: corpus loading and generation, outlier detection,
//! invariant-feature selection, preference training and LOPO evaluation.

use std::path::PathBuf;

use invariant_affect as core;
use invariant_affect::eval::{experiment_splits, ModelConfig, PreparedCorpus, SubsetOutcome};
use invariant_affect::ocsvm::{DetectConfig, KernelChoice};
use pyo3::exceptions::{PyOSError, PyRuntimeError, PyValueError};
use pyo3::prelude::*;
use pyo3::types::PyDict;

fn to_py(err: core::Error) -> PyErr {
    match err {
        core::Error::NotConverged { .. } => PyRuntimeError::new_err(err.to_string()),
        core::Error::Io { .. } => PyOSError::new_err(err.to_string()),
        other => PyValueError::new_err(other.to_string()),
    }
}

fn kernel_choice(kernel: &str, gamma: Option<f64>) -> PyResult<KernelChoice> {
    match kernel {
        "rbf" => Ok(KernelChoice::Rbf { gamma }),
        "linear" => Ok(KernelChoice::Linear),
        other => Err(PyValueError::new_err(format!("unknown kernel '{other}', expected 'rbf' or 'linear'"))),
    }
}

fn model_config(lambda: Option<f64>, p_t: f64, symmetric_pairs: bool) -> ModelConfig {
    ModelConfig {
        p_t,
        symmetric_pairs,
        ..ModelConfig::default().with_lambda(lambda)
    }
}

#[pyclass(name = "Corpus", frozen)]
pub struct PyCorpus {
    inner: core::Corpus,
}

#[pymethods]
impl PyCorpus {
    /// Load a corpus from a manifest file.
    #[staticmethod]
    fn load(path: PathBuf) -> PyResult<Self> {
        Ok(PyCorpus {
            inner: core::load_corpus(&path).map_err(to_py)?,
        })
    }

    /// Write the corpus as a manifest plus per-session CSV files; returns the manifest path.
    fn write(&self, dir: PathBuf) -> PyResult<PathBuf> {
        core::write_corpus(&self.inner, &core::ManifestConfig::default(), &dir).map_err(to_py)
    }

    #[getter]
    fn d(&self) -> usize {
        self.inner.d()
    }

    #[getter]
    fn env_ids(&self) -> Vec<String> {
        self.inner.env_ids()
    }

    fn __len__(&self) -> usize {
        self.inner.environments().len()
    }

    fn __repr__(&self) -> String {
        format!("Corpus(n_envs={}, d={})", self.inner.environments().len(), self.inner.d())
    }
}

#[pyclass(name = "Partition", frozen)]
pub struct PyPartition {
    inner: core::Partition,
}

#[pymethods]
impl PyPartition {
    #[getter]
    fn inliers(&self) -> Vec<String> {
        self.inner.inliers.clone()
    }

    #[getter]
    fn outliers(&self) -> Vec<String> {
        self.inner.outliers.clone()
    }

    /// Decision value per environment; negative means outlier.
    #[getter]
    fn scores(&self) -> Vec<(String, f64)> {
        self.inner.scores.iter().map(|s| (s.env_id.clone(), s.score)).collect()
    }

    fn to_json(&self) -> String {
        core::io::to_json_string(&self.inner)
    }

    fn __repr__(&self) -> String {
        format!(
            "Partition(inliers={}, outliers={})",
            self.inner.inliers.len(),
            self.inner.outliers.len()
        )
    }
}

#[pyclass(name = "InvariantMask", frozen)]
pub struct PyInvariantMask {
    inner: core::InvariantMask,
}

#[pymethods]
impl PyInvariantMask {
    #[getter]
    fn selected(&self) -> Vec<usize> {
        self.inner.selected.clone()
    }

    #[getter]
    fn lambda_(&self) -> f64 {
        self.inner.lambda
    }

    #[getter]
    fn c_pos(&self) -> Vec<usize> {
        self.inner.c_pos.clone()
    }

    #[getter]
    fn c_neg(&self) -> Vec<usize> {
        self.inner.c_neg.clone()
    }

    fn __len__(&self) -> usize {
        self.inner.selected.len()
    }

    fn to_json(&self) -> String {
        core::io::to_json_string(&self.inner)
    }
}

#[pyclass(name = "PrefModel", frozen)]
pub struct PyPrefModel {
    inner: core::PrefModel,
}

#[pymethods]
impl PyPrefModel {
    #[getter]
    fn features(&self) -> Vec<usize> {
        self.inner.features.clone()
    }

    #[getter]
    fn weights(&self) -> Vec<f64> {
        self.inner.weights.clone()
    }

    #[getter]
    fn bias(&self) -> f64 {
        self.inner.bias
    }

    /// Probability that the first window of a pair is preferred, given `x_a - x_b`.
    fn predict_proba(&self, diff: Vec<f64>) -> PyResult<f64> {
        Ok(core::predict(&self.inner, &diff).map_err(to_py)?.probability)
    }

    fn to_json(&self) -> String {
        core::io::to_json_string(&self.inner)
    }
}

#[pyclass(name = "Report", frozen)]
pub struct PyReport {
    inner: core::Report,
}

#[pymethods]
impl PyReport {
    #[getter]
    fn mean_accuracy(&self) -> f64 {
        self.inner.mean_accuracy
    }

    #[getter]
    fn ci95(&self) -> (f64, f64) {
        (self.inner.ci95.lo, self.inner.ci95.hi)
    }

    #[getter]
    fn mean_features(&self) -> f64 {
        self.inner.mean_features
    }

    /// `(held_out_env, accuracy, n_features)` per fold.
    #[getter]
    fn folds(&self) -> Vec<(String, f64, usize)> {
        self.inner
            .folds
            .iter()
            .map(|f| (f.held_out_env.clone(), f.accuracy, f.n_features))
            .collect()
    }

    fn to_json(&self) -> String {
        core::io::to_json_string(&self.inner)
    }

    fn __repr__(&self) -> String {
        format!(
            "Report(folds={}, mean_accuracy={:.4}, ci95=({:.4}, {:.4}))",
            self.inner.folds.len(),
            self.inner.mean_accuracy,
            self.inner.ci95.lo,
            self.inner.ci95.hi
        )
    }
}

/// Point-biserial correlation; `None` when either side is constant.
#[pyfunction]
fn point_biserial(x: Vec<f64>, y: Vec<u8>) -> PyResult<Option<f64>> {
    core::point_biserial(&x, &y).map_err(to_py)
}

/// Synthetic corpus; returns the corpus and the planted outlier ids.
#[pyfunction]
#[pyo3(signature = (n_envs=50, n_outliers=16, sessions_per_env=4, windows_per_session=60, d=768, n_invariant=150, flip_fraction=0.6, noise_sd=0.1, spurious_scale=0.5, seed=0))]
#[allow(clippy::too_many_arguments)]
fn generate(
    n_envs: usize,
    n_outliers: usize,
    sessions_per_env: usize,
    windows_per_session: usize,
    d: usize,
    n_invariant: usize,
    flip_fraction: f64,
    noise_sd: f64,
    spurious_scale: f64,
    seed: u64,
) -> PyResult<(PyCorpus, Vec<String>)> {
    let spec = core::SynthSpec {
        n_envs,
        n_outliers,
        sessions_per_env,
        windows_per_session,
        d,
        n_invariant,
        flip_fraction,
        noise_sd,
        spurious_scale,
        seed,
    };
    let (inner, truth) = core::generate(&spec).map_err(to_py)?;
    Ok((PyCorpus { inner }, truth.outlier_env_ids))
}

#[pyfunction]
#[pyo3(signature = (corpus, nu=0.3, kernel="rbf", gamma=None, p_t=0.15, symmetric_pairs=true))]
fn detect_outliers(
    corpus: &PyCorpus,
    nu: f64,
    kernel: &str,
    gamma: Option<f64>,
    p_t: f64,
    symmetric_pairs: bool,
) -> PyResult<PyPartition> {
    let config = DetectConfig {
        nu,
        kernel: kernel_choice(kernel, gamma)?,
        p_t,
        symmetric_pairs,
        ..DetectConfig::default()
    };
    Ok(PyPartition {
        inner: core::detect_outliers(&corpus.inner, &config).map_err(to_py)?,
    })
}

/// Invariant features counted over the sign vectors of `envs`.
#[pyfunction]
#[pyo3(signature = (corpus, envs, lambda_=0.7, p_t=0.15, symmetric_pairs=true))]
fn select_invariant(
    corpus: &PyCorpus,
    envs: Vec<String>,
    lambda_: f64,
    p_t: f64,
    symmetric_pairs: bool,
) -> PyResult<PyInvariantMask> {
    let config = model_config(Some(lambda_), p_t, symmetric_pairs);
    let prepared = PreparedCorpus::for_config(&corpus.inner, &config).map_err(to_py)?;
    Ok(PyInvariantMask {
        inner: prepared.mask_over(&envs, lambda_).map_err(to_py)?,
    })
}

/// Preference model on the pairs of `envs`, optionally restricted to a mask.
#[pyfunction]
#[pyo3(signature = (corpus, envs, mask=None, p_t=0.15, symmetric_pairs=true, reg=1e-4))]
fn train(
    corpus: &PyCorpus,
    envs: Vec<String>,
    mask: Option<&PyInvariantMask>,
    p_t: f64,
    symmetric_pairs: bool,
    reg: f64,
) -> PyResult<PyPrefModel> {
    let config = model_config(None, p_t, symmetric_pairs);
    let prepared = PreparedCorpus::for_config(&corpus.inner, &config).map_err(to_py)?;
    let sets = envs
        .iter()
        .map(|e| prepared.pairs(e))
        .collect::<core::Result<Vec<_>>>()
        .map_err(to_py)?;
    let train_config = core::TrainConfig {
        reg,
        ..core::TrainConfig::default()
    };
    Ok(PyPrefModel {
        inner: core::preflearn::train(&sets, mask.map(|m| &m.inner), &train_config).map_err(to_py)?,
    })
}

/// Leave-one-participant-out accuracy over `envs`; `lambda_=None` uses all features.
#[pyfunction]
#[pyo3(signature = (corpus, envs, lambda_=None, p_t=0.15, symmetric_pairs=true))]
fn lopo_cv(
    corpus: &PyCorpus,
    envs: Vec<String>,
    lambda_: Option<f64>,
    p_t: f64,
    symmetric_pairs: bool,
) -> PyResult<PyReport> {
    let config = model_config(lambda_, p_t, symmetric_pairs);
    Ok(PyReport {
        inner: core::lopo_cv(&corpus.inner, &envs, &config).map_err(to_py)?,
    })
}

/// LOPO reports for the all / inliers / outliers subsets; `None` where a subset is too small.
#[pyfunction]
#[pyo3(signature = (corpus, partition, lambda_=None, p_t=0.15, symmetric_pairs=true))]
fn evaluate_splits<'py>(
    py: Python<'py>,
    corpus: &PyCorpus,
    partition: &PyPartition,
    lambda_: Option<f64>,
    p_t: f64,
    symmetric_pairs: bool,
) -> PyResult<Bound<'py, PyDict>> {
    let config = model_config(lambda_, p_t, symmetric_pairs);
    let splits = experiment_splits(&corpus.inner, &partition.inner, &config).map_err(to_py)?;
    let out = PyDict::new(py);
    for (name, outcome) in [("all", splits.all), ("inliers", splits.inliers), ("outliers", splits.outliers)] {
        let report = match outcome {
            SubsetOutcome::Computed { report } => Some(PyReport { inner: report }),
            SubsetOutcome::NotComputable { .. } => None,
        };
        out.set_item(name, report)?;
    }
    Ok(out)
}

#[pymodule]
fn invariant_affect_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyCorpus>()?;
    m.add_class::<PyPartition>()?;
    m.add_class::<PyInvariantMask>()?;
    m.add_class::<PyPrefModel>()?;
    m.add_class::<PyReport>()?;
    m.add_function(wrap_pyfunction!(point_biserial, m)?)?;
    m.add_function(wrap_pyfunction!(generate, m)?)?;
    m.add_function(wrap_pyfunction!(detect_outliers, m)?)?;
    m.add_function(wrap_pyfunction!(select_invariant, m)?)?;
    m.add_function(wrap_pyfunction!(train, m)?)?;
    m.add_function(wrap_pyfunction!(lopo_cv, m)?)?;
    m.add_function(wrap_pyfunction!(evaluate_splits, m)?)?;
    Ok(())
}
