//! Python bindings. Matrices cross the boundary as lists of rows.

use pyo3::create_exception;
use pyo3::exceptions::PyException;
use pyo3::prelude::*;
use pyo3::types::PyAny;

use tdrc_core::ga::{self, GaConfig, GaTrace, GeneLayout};
use tdrc_core::gridsearch::{self, GridSpec};
use tdrc_core::{datasets, masking, Chromosome, Matrix};

create_exception!(tdrc, TdrcError, PyException);

fn err(e: tdrc_core::Error) -> PyErr {
    TdrcError::new_err(e.to_string())
}

fn rows_of(m: &Matrix) -> Vec<Vec<f64>> {
    (0..m.rows()).map(|r| m.row(r).to_vec()).collect()
}

fn matrix(rows: Vec<Vec<f64>>) -> PyResult<Matrix> {
    Matrix::from_rows(&rows).map_err(err)
}

/// Parses serialized output with Python's json module.
fn to_py(py: Python<'_>, value: &impl serde::Serialize) -> PyResult<Py<PyAny>> {
    let text = serde_json::to_string(value).map_err(|e| TdrcError::new_err(e.to_string()))?;
    Ok(py.import("json")?.call_method1("loads", (text,))?.unbind())
}

#[pyclass(name = "ReservoirParams", module = "tdrc", skip_from_py_object)]
#[derive(Clone)]
struct PyParams(tdrc_core::ReservoirParams);

#[pymethods]
impl PyParams {
    #[new]
    #[pyo3(signature = (n_nodes, tau, beta, phi0, rho, tau_d=6.0, theta=None, substeps=None))]
    #[allow(clippy::too_many_arguments)]
    fn new(
        n_nodes: usize,
        tau: f64,
        beta: f64,
        phi0: f64,
        rho: f64,
        tau_d: f64,
        theta: Option<f64>,
        substeps: Option<usize>,
    ) -> PyResult<Self> {
        let mut p = tdrc_core::ReservoirParams::new(n_nodes, tau, beta, phi0, rho);
        p.tau_d = tau_d;
        p.theta = theta.unwrap_or(tau_d / n_nodes.max(1) as f64);
        p.substeps = substeps;
        p.validate().map_err(err)?;
        Ok(Self(p))
    }

    #[getter]
    fn n_nodes(&self) -> usize {
        self.0.n_nodes
    }
    #[getter]
    fn tau(&self) -> f64 {
        self.0.tau
    }
    #[getter]
    fn tau_d(&self) -> f64 {
        self.0.tau_d
    }
    #[getter]
    fn beta(&self) -> f64 {
        self.0.beta
    }
    #[getter]
    fn phi0(&self) -> f64 {
        self.0.phi0
    }
    #[getter]
    fn rho(&self) -> f64 {
        self.0.rho
    }
    #[getter]
    fn theta(&self) -> f64 {
        self.0.theta
    }

    /// (h, steps per node, steps per delay).
    fn step_plan(&self) -> PyResult<(f64, usize, usize)> {
        let p = self.0.step_plan().map_err(err)?;
        Ok((p.h, p.steps_per_node, p.delay_steps))
    }

    fn nonlinearity(&self, s: f64) -> f64 {
        self.0.nonlinearity(s)
    }

    fn __repr__(&self) -> String {
        format!("ReservoirParams({})", self.0.describe())
    }
}

#[pyclass(name = "Dataset", module = "tdrc")]
struct PyDataset(tdrc_core::Dataset);

#[pymethods]
impl PyDataset {
    /// Loads a manifest plus feature CSVs.
    #[staticmethod]
    fn load(manifest: std::path::PathBuf) -> PyResult<Self> {
        tdrc_core::load_dataset(&manifest).map(Self).map_err(err)
    }

    /// Synthetic benchmark; keywords override the generator defaults.
    #[staticmethod]
    #[pyo3(signature = (**kwargs))]
    fn synthetic(py: Python<'_>, kwargs: Option<&Bound<'_, pyo3::types::PyDict>>) -> PyResult<Self> {
        let mut cfg = serde_json::to_value(datasets::SyntheticConfig::default()).expect("serializes");
        if let Some(kw) = kwargs {
            let text: String = py.import("json")?.call_method1("dumps", (kw,))?.extract()?;
            let patch: serde_json::Value =
                serde_json::from_str(&text).map_err(|e| TdrcError::new_err(e.to_string()))?;
            for (k, v) in patch.as_object().into_iter().flatten() {
                if cfg.get(k).is_none() {
                    return Err(TdrcError::new_err(format!("unknown synthetic option `{k}`")));
                }
                cfg[k] = v.clone();
            }
        }
        let cfg: datasets::SyntheticConfig =
            serde_json::from_value(cfg).map_err(|e| TdrcError::new_err(e.to_string()))?;
        tdrc_core::generate_synthetic(&cfg).map(Self).map_err(err)
    }

    fn save(&self, dir: std::path::PathBuf) -> PyResult<String> {
        let path = tdrc_core::save_dataset(&self.0, &dir).map_err(err)?;
        Ok(path.display().to_string())
    }

    fn __len__(&self) -> usize {
        self.0.len()
    }

    #[getter]
    fn classes(&self) -> Vec<String> {
        self.0.classes.clone()
    }

    #[getter]
    fn feature_dim(&self) -> usize {
        self.0.feature_dim
    }

    fn ids(&self) -> Vec<String> {
        self.0.samples.iter().map(|s| s.id.clone()).collect()
    }

    /// (label index, M × L feature rows) of one sample.
    fn sample(&self, id: &str) -> PyResult<(usize, Vec<Vec<f64>>)> {
        let s = self.0.select(&[id.to_string()]).map_err(err)?[0];
        Ok((s.label, rows_of(&s.features)))
    }

    /// Stratified split: dict with fold_a, fold_b, test and pca id lists.
    #[pyo3(signature = (seed, sizes=None))]
    fn split(&self, py: Python<'_>, seed: u64, sizes: Option<(usize, usize, usize, usize)>) -> PyResult<Py<PyAny>> {
        let sizes = match sizes {
            Some((fold_a, fold_b, test, pca)) => datasets::SplitSizes {
                fold_a,
                fold_b,
                test,
                pca,
            },
            None => datasets::SplitSizes::proportional(self.0.len()),
        };
        let plan = tdrc_core::make_split(&self.0, sizes, seed).map_err(err)?;
        to_py(py, &plan)
    }
}

#[pyclass(name = "Mask", module = "tdrc", skip_from_py_object)]
#[derive(Clone)]
struct PyMask(tdrc_core::MaskSpec);

#[pymethods]
impl PyMask {
    /// Sparse ±amplitude mask without compression.
    #[staticmethod]
    #[pyo3(signature = (n_nodes, n_features, connectivity=0.3, amplitude=0.4, seed=0))]
    fn random(n_nodes: usize, n_features: usize, connectivity: f64, amplitude: f64, seed: u64) -> PyResult<Self> {
        let w = tdrc_core::generate_random_mask(n_nodes, n_features, connectivity, amplitude, seed).map_err(err)?;
        Ok(Self(tdrc_core::MaskSpec::random_only(w).with_seed(seed)))
    }

    /// Fuses this mask with a PCA autoencoder fitted on the frames of `ids`.
    fn with_pca(&self, dataset: &PyDataset, ids: Vec<String>, m_prime: usize) -> PyResult<(Self, f64)> {
        let frames = dataset.0.frames(&ids).map_err(err)?;
        let fit = tdrc_core::pca_fit(&frames, m_prime).map_err(err)?;
        let mask = tdrc_core::build_composite_mask(&self.0.w_input, &fit.w_compress, &fit.mean).map_err(err)?;
        let mask = match self.0.seed {
            Some(s) => mask.with_seed(s),
            None => mask,
        };
        Ok((Self(mask), fit.report.retained_variance))
    }

    #[getter]
    fn compression_ratio(&self) -> f64 {
        self.0.compression_ratio()
    }

    fn composite(&self) -> Vec<Vec<f64>> {
        rows_of(&self.0.w_composite)
    }
}

#[pyclass(name = "Quantization", module = "tdrc", skip_from_py_object)]
#[derive(Clone)]
struct PyQuant(tdrc_core::QuantizationModel);

#[pymethods]
impl PyQuant {
    #[staticmethod]
    fn none() -> Self {
        Self(tdrc_core::QuantizationModel::none())
    }

    /// Additive uniform noise of `level` at every injection point.
    #[staticmethod]
    #[pyo3(signature = (level, seed=0))]
    fn additive(level: f64, seed: u64) -> Self {
        Self(tdrc_core::QuantizationModel::additive(level, seed))
    }

    #[staticmethod]
    #[pyo3(signature = (bits, seed=0))]
    fn for_bits(bits: u32, seed: u64) -> PyResult<Self> {
        let level = tdrc_core::QuantizationModel::level_for_bits(bits).map_err(err)?;
        Ok(Self(tdrc_core::QuantizationModel::additive(level, seed)))
    }

    #[staticmethod]
    fn round_to_step(level: f64) -> Self {
        Self(tdrc_core::QuantizationModel::round_to_step(level))
    }

    #[getter]
    fn level(&self) -> f64 {
        self.0.level
    }
}

#[pyfunction]
fn level_for_bits(bits: u32) -> PyResult<f64> {
    tdrc_core::QuantizationModel::level_for_bits(bits).map_err(err)
}

#[pyclass(name = "Pipeline", module = "tdrc")]
struct PyPipeline(tdrc_core::Pipeline);

#[pymethods]
impl PyPipeline {
    #[new]
    /// Without `quant` the pipeline runs noise-free.
    #[pyo3(signature = (mask, params, classes, quant=None, lambda_=1e-6))]
    fn new(
        mask: &PyMask,
        params: &PyParams,
        classes: Vec<String>,
        quant: Option<&PyQuant>,
        lambda_: f64,
    ) -> PyResult<Self> {
        let readout = tdrc_core::ReadoutConfig {
            lambda: lambda_,
            ..Default::default()
        };
        let quant = quant.map_or_else(tdrc_core::QuantizationModel::none, |q| q.0.clone());
        tdrc_core::Pipeline::new(mask.0.clone(), params.0.clone(), quant, readout, classes)
            .map(Self)
            .map_err(err)
    }

    /// N × L virtual-node states of one sample.
    fn states(&self, dataset: &PyDataset, id: &str) -> PyResult<Vec<Vec<f64>>> {
        let s = dataset.0.select(&[id.to_string()]).map_err(err)?[0];
        self.0.states(s).map(|m| rows_of(&m)).map_err(err)
    }

    /// Mean validation WER of two-fold cross-validation.
    fn crossval_wer(&self, py: Python<'_>, dataset: &PyDataset, fold_a: Vec<String>, fold_b: Vec<String>) -> PyResult<f64> {
        let plan = datasets::SplitPlan {
            fold_a,
            fold_b,
            test: Vec::new(),
            pca: Vec::new(),
        };
        py.detach(|| tdrc_core::crossval_wer(&dataset.0, &plan, &self.0)).map_err(err)
    }

    fn fit(&self, py: Python<'_>, dataset: &PyDataset, ids: Vec<String>) -> PyResult<PyModel> {
        py.detach(|| {
            let samples = dataset.0.select(&ids)?;
            self.0.fit_samples(&samples)
        })
        .map(PyModel)
        .map_err(err)
    }
}

#[pyclass(name = "TrainedModel", module = "tdrc")]
struct PyModel(tdrc_core::TrainedModel);

#[pymethods]
impl PyModel {
    /// Dict with wer, n_errors, n_samples and confusion.
    fn evaluate(&self, py: Python<'_>, dataset: &PyDataset, ids: Vec<String>) -> PyResult<Py<PyAny>> {
        let report = py
            .detach(|| {
                let samples = dataset.0.select(&ids)?;
                self.0.evaluate(&samples)
            })
            .map_err(err)?;
        to_py(py, &report)
    }

    /// (class label, per-class scores) for M × L feature rows.
    fn classify(&self, features: Vec<Vec<f64>>) -> PyResult<(String, Vec<f64>)> {
        let sample = datasets::FeatureSample {
            id: String::new(),
            label: 0,
            features: matrix(features)?,
        };
        let (k, scores) = self.0.classify(&sample).map_err(err)?;
        Ok((self.0.class_labels[k].clone(), scores))
    }

    fn save(&self, path: std::path::PathBuf) -> PyResult<()> {
        self.0.save_json(&path).map_err(err)
    }

    #[staticmethod]
    fn load(path: std::path::PathBuf) -> PyResult<Self> {
        tdrc_core::TrainedModel::load_json(&path).map(Self).map_err(err)
    }

    #[getter]
    fn classes(&self) -> Vec<String> {
        self.0.class_labels.clone()
    }
}

/// Ridge readout W (Q × N) from states (N × K) and teacher (Q × K).
#[pyfunction]
#[pyo3(signature = (states, teacher, lambda_=1e-6))]
fn ridge(states: Vec<Vec<f64>>, teacher: Vec<Vec<f64>>, lambda_: f64) -> PyResult<Vec<Vec<f64>>> {
    let w = tdrc_core::train_readout(&matrix(states)?, &matrix(teacher)?, lambda_).map_err(err)?;
    Ok(rows_of(&w))
}

/// (W_c rows, mean, eigenvalues, retained variance) for M × P samples.
#[pyfunction]
fn pca_fit(samples: Vec<Vec<f64>>, m_prime: usize) -> PyResult<(Vec<Vec<f64>>, Vec<f64>, Vec<f64>, f64)> {
    let fit = masking::pca_fit(&matrix(samples)?, m_prime).map_err(err)?;
    Ok((rows_of(&fit.w_compress), fit.mean, fit.report.eigenvalues.clone(), fit.report.retained_variance))
}

/// Decodes a chromosome string into parameters, other fields from `base`.
#[pyfunction]
fn decode(bits: &str, base: &PyParams) -> PyResult<PyParams> {
    let c = Chromosome::parse(bits).map_err(err)?;
    ga::decode(&c, &GeneLayout::standard(), &base.0).map(PyParams).map_err(err)
}

/// (bit string, whether any value was snapped or clamped).
#[pyfunction]
fn encode(params: &PyParams) -> PyResult<(String, bool)> {
    let (c, snapped) = ga::encode(&params.0, &GeneLayout::standard());
    Ok((c.bit_string(), snapped))
}

#[pyclass(name = "GaTrace", module = "tdrc")]
struct PyTrace(GaTrace);

#[pymethods]
impl PyTrace {
    #[getter]
    fn best_loss(&self) -> f64 {
        self.0.best_loss()
    }

    #[getter]
    fn best_bits(&self) -> String {
        self.0.best.bit_string()
    }

    #[getter]
    fn evaluations(&self) -> usize {
        self.0.evaluations
    }

    fn best_loss_curve(&self) -> Vec<f64> {
        self.0.best_loss_curve()
    }

    fn to_csv(&self) -> String {
        self.0.to_csv()
    }
}

/// Runs the GA over the default 30-bit layout. `objective` receives the
/// chromosome as a bit string and returns a loss.
#[pyfunction]
#[pyo3(signature = (objective, seed=0, n_generations=40, n_pop=20))]
fn run_ga(py: Python<'_>, objective: Py<PyAny>, seed: u64, n_generations: usize, n_pop: usize) -> PyResult<PyTrace> {
    let cfg = GaConfig {
        seed,
        n_generations,
        n_pop,
        ..GaConfig::default()
    };
    let layout = GeneLayout::standard();
    let trace = py.detach(|| {
        ga::run_ga(&cfg, &layout, |c: &Chromosome| {
            Python::attach(|py| {
                objective
                    .call1(py, (c.bit_string(),))
                    .and_then(|v| v.extract::<f64>(py))
                    .map_err(|e| tdrc_core::Error::Objective(e.to_string()))
            })
        })
    });
    trace.map(PyTrace).map_err(err)
}

/// Cost of a full-resolution grid on the default layout versus the GA budget.
#[pyfunction]
fn estimate_exhaustive_cost(py: Python<'_>) -> PyResult<Py<PyAny>> {
    to_py(py, &gridsearch::estimate_exhaustive_cost(&GeneLayout::standard(), &GaConfig::default()))
}

/// Number of points of the default landscape grid.
#[pyfunction]
fn default_grid_size() -> usize {
    GridSpec::default().cardinality()
}

#[pymodule]
fn tdrc(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add("TdrcError", m.py().get_type::<TdrcError>())?;
    m.add_class::<PyParams>()?;
    m.add_class::<PyDataset>()?;
    m.add_class::<PyMask>()?;
    m.add_class::<PyQuant>()?;
    m.add_class::<PyPipeline>()?;
    m.add_class::<PyModel>()?;
    m.add_class::<PyTrace>()?;
    m.add_function(wrap_pyfunction!(level_for_bits, m)?)?;
    m.add_function(wrap_pyfunction!(ridge, m)?)?;
    m.add_function(wrap_pyfunction!(pca_fit, m)?)?;
    m.add_function(wrap_pyfunction!(decode, m)?)?;
    m.add_function(wrap_pyfunction!(encode, m)?)?;
    m.add_function(wrap_pyfunction!(run_ga, m)?)?;
    m.add_function(wrap_pyfunction!(estimate_exhaustive_cost, m)?)?;
    m.add_function(wrap_pyfunction!(default_grid_size, m)?)?;
    Ok(())
}
