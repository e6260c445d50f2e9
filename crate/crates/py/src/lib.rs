//! Python module `echodx`: tensors, the (2+1)D network, attribution,
//! embedding, metrics and the phantom generator.

use std::path::PathBuf;

use echodx_core::deeplift::{deeplift_attribute, Baseline};
use echodx_core::net::{build_network, checkpoint, Network as CoreNetwork, NetworkConfig as CoreConfig};
use echodx_core::phantom::{generate_dataset, PhantomParams, PhantomTask};
use echodx_core::preprocess::{resample_cycle, CineLoop};
use echodx_core::tsne::{calibrate_affinities, nearest_neighbor_agreement, tsne_optimize, TsneConfig};
use echodx_core::{ect, metrics, train, Error, Tensor as CoreTensor};
use pyo3::exceptions::{PyIOError, PyValueError};
use pyo3::prelude::*;

fn py_err(e: Error) -> PyErr {
    match e {
        Error::Io { .. } => PyIOError::new_err(e.to_string()),
        other => PyValueError::new_err(other.to_string()),
    }
}

/// Dense row-major f32 tensor.
#[pyclass(name = "Tensor", module = "echodx", skip_from_py_object)]
#[derive(Clone)]
struct Tensor {
    inner: CoreTensor<f32>,
}

#[pymethods]
impl Tensor {
    #[new]
    fn new(shape: Vec<usize>, data: Vec<f32>) -> PyResult<Self> {
        Ok(Self {
            inner: CoreTensor::from_vec(shape, data).map_err(py_err)?,
        })
    }

    #[staticmethod]
    fn zeros(shape: Vec<usize>) -> Self {
        Self {
            inner: CoreTensor::zeros(&shape),
        }
    }

    /// Read an `.ect` file.
    #[staticmethod]
    fn read(path: PathBuf) -> PyResult<Self> {
        Ok(Self {
            inner: ect::read(path).map_err(py_err)?,
        })
    }

    fn write(&self, path: PathBuf) -> PyResult<()> {
        ect::write(path, &self.inner).map_err(py_err)
    }

    #[getter]
    fn shape(&self) -> Vec<usize> {
        self.inner.shape().to_vec()
    }

    fn numel(&self) -> usize {
        self.inner.numel()
    }

    /// Flat row-major values.
    fn tolist(&self) -> Vec<f32> {
        self.inner.data().to_vec()
    }

    fn reshape(&self, shape: Vec<usize>) -> PyResult<Self> {
        Ok(Self {
            inner: self.inner.clone().reshape(&shape).map_err(py_err)?,
        })
    }

    fn sum(&self) -> f64 {
        self.inner.data().iter().map(|&v| v as f64).sum()
    }

    fn __len__(&self) -> usize {
        self.inner.shape().first().copied().unwrap_or(0)
    }

    fn __repr__(&self) -> String {
        format!("Tensor(shape={:?})", self.inner.shape())
    }
}

/// Architecture description; `preset` is `desk` or `default`.
#[pyclass(name = "NetworkConfig", module = "echodx", skip_from_py_object)]
#[derive(Clone)]
struct NetworkConfig {
    inner: CoreConfig,
}

#[pymethods]
impl NetworkConfig {
    #[new]
    #[pyo3(signature = (preset = "desk"))]
    fn new(preset: &str) -> PyResult<Self> {
        let inner = match preset {
            "desk" => CoreConfig::desk(),
            "default" => CoreConfig::default(),
            other => return Err(PyValueError::new_err(format!("unknown preset {other:?} (desk|default)"))),
        };
        Ok(Self { inner })
    }

    /// Set one `key=value` field, e.g. `set("input_shape", "1,6,16,16")`.
    fn set(&mut self, key: &str, value: &str) -> PyResult<()> {
        self.inner.set(key, value).map_err(py_err)
    }

    #[staticmethod]
    fn from_text(text: &str) -> PyResult<Self> {
        Ok(Self {
            inner: CoreConfig::from_text(text).map_err(py_err)?,
        })
    }

    fn to_text(&self) -> String {
        self.inner.to_text()
    }

    fn validate(&self) -> PyResult<()> {
        self.inner.validate().map_err(py_err)
    }

    #[getter]
    fn feature_dim(&self) -> usize {
        self.inner.feature_dim()
    }

    #[getter]
    fn num_classes(&self) -> usize {
        self.inner.num_classes
    }

    #[getter]
    fn input_shape(&self) -> Vec<usize> {
        self.inner.input_shape.to_vec()
    }
}

/// Inference-mode (2+1)D residual classifier.
#[pyclass(name = "Network", module = "echodx")]
struct Network {
    inner: CoreNetwork<f32>,
}

#[pymethods]
impl Network {
    #[new]
    #[pyo3(signature = (config, seed = 0))]
    fn new(config: PyRef<'_, NetworkConfig>, seed: u64) -> PyResult<Self> {
        let mut inner = build_network(&config.inner, seed).map_err(py_err)?;
        inner.frozen = true;
        Ok(Self { inner })
    }

    #[staticmethod]
    fn load(path: PathBuf) -> PyResult<Self> {
        let mut inner = checkpoint::load(path).map_err(py_err)?;
        inner.frozen = true;
        Ok(Self { inner })
    }

    fn save(&self, path: PathBuf) -> PyResult<()> {
        checkpoint::save(&self.inner, path).map_err(py_err)
    }

    #[getter]
    fn config(&self) -> NetworkConfig {
        NetworkConfig {
            inner: self.inner.config().clone(),
        }
    }

    #[getter]
    fn feature_dim(&self) -> usize {
        self.inner.feature_dim()
    }

    fn num_parameters(&self) -> usize {
        self.inner.params().iter().map(|p| p.value.numel()).sum()
    }

    /// Logits `[N, classes]` for a batch `[N, C, T, H, W]`.
    fn forward_logits(&self, py: Python<'_>, batch: PyRef<'_, Tensor>) -> PyResult<Tensor> {
        let x = batch.inner.clone();
        let inner = py.detach(|| self.inner.forward_logits(&x)).map_err(py_err)?;
        Ok(Tensor { inner })
    }

    /// Pooled features `[N, feature_dim]`.
    fn extract_features(&self, py: Python<'_>, batch: PyRef<'_, Tensor>) -> PyResult<Tensor> {
        let x = batch.inner.clone();
        let inner = py.detach(|| self.inner.extract_features(&x)).map_err(py_err)?;
        Ok(Tensor { inner })
    }

    /// DeepLIFT map of one clip for `target`'s logit. Returns
    /// `(map, logit, baseline_logit)`.
    #[pyo3(signature = (clip, target, baseline = "zeros"))]
    fn attribute(
        &self,
        py: Python<'_>,
        clip: PyRef<'_, Tensor>,
        target: usize,
        baseline: &str,
    ) -> PyResult<(Tensor, f32, f32)> {
        let clip = clip.inner.clone();
        let base = match baseline {
            "zeros" => Baseline::zeros(clip.shape()),
            "temporal_mean" => Baseline::temporal_mean(&clip).map_err(py_err)?,
            other => {
                return Err(PyValueError::new_err(format!(
                    "unknown baseline {other:?} (zeros|temporal_mean)"
                )))
            }
        };
        let map = py
            .detach(|| deeplift_attribute(&self.inner, &clip, "py", target, &base))
            .map_err(py_err)?;
        Ok((Tensor { inner: map.values }, map.logit, map.baseline_logit))
    }
}

/// `(train, val, test)` sizes for one class of `n` samples.
#[pyfunction]
#[pyo3(signature = (n, fractions = (0.7, 0.1, 0.2)))]
fn split_counts(n: usize, fractions: (f64, f64, f64)) -> PyResult<(usize, usize, usize)> {
    train::split_counts(n, [fractions.0, fractions.1, fractions.2]).map_err(py_err)
}

/// Subset name (`train`/`val`/`test`) for every label, stratified by class.
#[pyfunction]
#[pyo3(signature = (labels, seed, fractions = (0.7, 0.1, 0.2)))]
fn stratified_split(labels: Vec<usize>, seed: u64, fractions: (f64, f64, f64)) -> PyResult<Vec<&'static str>> {
    let s = train::stratified_split(&labels, [fractions.0, fractions.1, fractions.2], seed).map_err(py_err)?;
    Ok(s.assignment.iter().map(|a| a.name()).collect())
}

#[pyfunction]
fn confusion_matrix(truth: Vec<usize>, pred: Vec<usize>, classes: usize) -> PyResult<Vec<Vec<u64>>> {
    metrics::confusion_matrix(&truth, &pred, classes).map_err(py_err)
}

/// `(recall, precision, f1)` per class from a count matrix.
#[pyfunction]
fn per_class_prf1(counts: Vec<Vec<u64>>) -> Vec<(f64, f64, f64)> {
    metrics::per_class_prf1(&counts)
        .into_iter()
        .map(|s| (s.recall, s.precision, s.f1))
        .collect()
}

#[pyfunction]
fn f1_score(precision: f64, recall: f64) -> f64 {
    metrics::f1_score(precision, recall).0
}

#[pyfunction]
fn overall_accuracy(counts: Vec<Vec<u64>>) -> PyResult<f64> {
    metrics::overall_accuracy(&counts).map_err(py_err)
}

/// Exact t-SNE of `rows`. Returns `(points, initial_kl, final_kl)`.
#[pyfunction]
#[pyo3(signature = (rows, perplexity = 30.0, iterations = 1000, seed = 0))]
fn tsne(
    py: Python<'_>,
    rows: Vec<Vec<f64>>,
    perplexity: f64,
    iterations: usize,
    seed: u64,
) -> PyResult<(Vec<(f64, f64)>, f64, f64)> {
    let cfg = TsneConfig {
        perplexity,
        iterations,
        seed,
        ..TsneConfig::default()
    };
    let r = py
        .detach(|| calibrate_affinities(&rows, perplexity).and_then(|aff| tsne_optimize(&aff, &cfg)))
        .map_err(py_err)?;
    Ok((r.points.iter().map(|p| (p[0], p[1])).collect(), r.initial_kl, r.final_kl))
}

/// Fraction of points whose nearest neighbour shares their label.
#[pyfunction]
fn nn_agreement(points: Vec<(f64, f64)>, labels: Vec<usize>) -> f64 {
    let pts: Vec<[f64; 2]> = points.into_iter().map(|(x, y)| [x, y]).collect();
    nearest_neighbor_agreement(&pts, &labels)
}

/// Resample one cardiac cycle of `frames` `[T, H, W]` to `target` frames.
#[pyfunction]
#[pyo3(signature = (frames, cycle_start, cycle_len, target = 30))]
fn resample(frames: PyRef<'_, Tensor>, cycle_start: usize, cycle_len: usize, target: usize) -> PyResult<Tensor> {
    let clip = CineLoop::new(frames.inner.clone(), cycle_start, cycle_len, "py").map_err(py_err)?;
    Ok(Tensor {
        inner: resample_cycle(&clip, target).map_err(py_err)?,
    })
}

/// Write a phantom dataset to `out_dir`; returns the number of clips.
#[pyfunction]
#[pyo3(signature = (out_dir, per_class, seed, task = "lv"))]
fn synth(py: Python<'_>, out_dir: PathBuf, per_class: usize, seed: u64, task: &str) -> PyResult<usize> {
    let task: PhantomTask = task.parse().map_err(py_err)?;
    let p = PhantomParams {
        task,
        ..PhantomParams::default()
    };
    let m = py
        .detach(|| generate_dataset(per_class, &p, &out_dir, seed))
        .map_err(py_err)?;
    Ok(m.entries.len())
}

#[pymodule]
fn echodx(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add("__version__", env!("CARGO_PKG_VERSION"))?;
    m.add_class::<Tensor>()?;
    m.add_class::<NetworkConfig>()?;
    m.add_class::<Network>()?;
    m.add_function(wrap_pyfunction!(split_counts, m)?)?;
    m.add_function(wrap_pyfunction!(stratified_split, m)?)?;
    m.add_function(wrap_pyfunction!(confusion_matrix, m)?)?;
    m.add_function(wrap_pyfunction!(per_class_prf1, m)?)?;
    m.add_function(wrap_pyfunction!(f1_score, m)?)?;
    m.add_function(wrap_pyfunction!(overall_accuracy, m)?)?;
    m.add_function(wrap_pyfunction!(tsne, m)?)?;
    m.add_function(wrap_pyfunction!(nn_agreement, m)?)?;
    m.add_function(wrap_pyfunction!(resample, m)?)?;
    m.add_function(wrap_pyfunction!(synth, m)?)?;
    Ok(())
}
