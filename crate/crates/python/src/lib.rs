//! Python bindings: run configs, training runs and reports, plus the small
//! numeric ops (count profiles, DRW weights, perturbation draws, optimizer
//! steps on a quadratic) for quick checks from Python.

use std::collections::HashMap;

use pyo3::exceptions::PyValueError;
use pyo3::prelude::*;

use gnm_lab::autodiff::{ParamSet, Tensor};
use gnm_lab::harness::{self, GroupAccuracy, RunConfig, RunReport};
use gnm_lab::landscape::{self, LandscapeGrid};
use gnm_lab::losses::{self, ClassCounts};
use gnm_lab::optim::{
    sample_gaussian_perturbation, GaussianNeighborhood, HalfSquaredNorm, Optimizer, OptimizerConfig, OptimizerKind,
    Perturbation, Schedule,
};
use gnm_lab::rng::{stream, Stream};

fn err(e: gnm_lab::Error) -> PyErr {
    PyValueError::new_err(e.to_string())
}

fn class_counts(v: Vec<usize>) -> PyResult<ClassCounts> {
    ClassCounts::new(v).map_err(err)
}

fn accuracy_dict(a: &GroupAccuracy) -> HashMap<&'static str, Option<f64>> {
    HashMap::from([
        ("overall", Some(a.overall)),
        ("head", a.head),
        ("med", a.med),
        ("tail", a.tail),
    ])
}

/// A parsed run configuration.
#[pyclass(name = "Config", from_py_object)]
#[derive(Clone)]
struct PyConfig {
    inner: RunConfig,
}

#[pymethods]
impl PyConfig {
    /// Parse `key = value` text; an empty string gives the defaults.
    #[staticmethod]
    #[pyo3(signature = (text = ""))]
    fn parse(text: &str) -> PyResult<Self> {
        Ok(Self {
            inner: harness::parse_config(text).map_err(err)?,
        })
    }

    #[getter]
    fn seed(&self) -> u64 {
        self.inner.seed
    }

    #[setter]
    fn set_seed(&mut self, seed: u64) {
        self.inner = self.inner.clone().with_seed(seed);
    }

    #[getter]
    fn optimizer(&self) -> String {
        self.inner.optim.kind.to_string()
    }

    #[setter]
    fn set_optimizer(&mut self, kind: &str) -> PyResult<()> {
        self.inner.optim.kind = kind.parse().map_err(err)?;
        Ok(())
    }

    #[getter]
    fn epochs(&self) -> (usize, usize) {
        (self.inner.t1, self.inner.t2)
    }

    fn __repr__(&self) -> String {
        format!(
            "Config(seed={}, optimizer={}, t1={}, t2={}, lr={})",
            self.inner.seed, self.inner.optim.kind, self.inner.t1, self.inner.t2, self.inner.optim.lr
        )
    }
}

/// A finished or aborted training run.
#[pyclass(name = "Report", from_py_object)]
#[derive(Clone)]
struct PyReport {
    inner: RunReport,
}

#[pymethods]
impl PyReport {
    #[staticmethod]
    fn from_jsonl(text: &str) -> PyResult<Self> {
        Ok(Self {
            inner: RunReport::from_jsonl(text).map_err(err)?,
        })
    }

    fn to_jsonl(&self) -> String {
        self.inner.to_jsonl()
    }

    /// JSON lines without timing fields, for equality checks between runs.
    #[pyo3(signature = (with_config = true))]
    fn masked(&self, with_config: bool) -> String {
        self.inner.masked(with_config)
    }

    #[getter]
    fn completed(&self) -> bool {
        self.inner.is_completed()
    }

    #[getter]
    fn epochs(&self) -> usize {
        self.inner.epochs.len()
    }

    #[getter]
    fn final_accuracy(&self) -> Option<HashMap<&'static str, Option<f64>>> {
        self.inner.summary.final_accuracy.as_ref().map(accuracy_dict)
    }

    /// Per-epoch balanced test accuracy of each group.
    fn accuracy_curve(&self) -> Vec<HashMap<&'static str, Option<f64>>> {
        self.inner.epochs.iter().map(|e| accuracy_dict(&e.accuracy)).collect()
    }

    /// `(forward, backward, steps)` over the whole run.
    #[getter]
    fn passes(&self) -> (u64, u64, u64) {
        let s = &self.inner.summary;
        (s.forward, s.backward, s.steps)
    }

    #[getter]
    fn mean_step_ns(&self) -> f64 {
        self.inner.summary.mean_step_ns
    }
}

/// Run the two-stage experiment in memory (nothing is written to disk).
#[pyfunction]
fn train(config: &PyConfig) -> PyResult<PyReport> {
    let mut cfg = config.inner.clone();
    cfg.out_dir = None;
    cfg.landscape_csv = None;
    cfg.dump_data = None;
    Ok(PyReport {
        inner: harness::run_experiment(&cfg).map_err(err)?,
    })
}

/// Side-by-side table of reports against the first.
#[pyfunction]
fn compare(reports: Vec<PyReport>) -> PyResult<String> {
    let labelled: Vec<(String, RunReport)> = reports
        .into_iter()
        .enumerate()
        .map(|(i, r)| (format!("run{i}"), r.inner))
        .collect();
    Ok(harness::compare_runs(&labelled).map_err(err)?.to_string())
}

#[pyfunction]
fn longtail_counts(classes: usize, n_max: usize, imbalance_ratio: f64) -> PyResult<Vec<usize>> {
    Ok(gnm_lab::data::longtail_counts(classes, n_max, imbalance_ratio)
        .map_err(err)?
        .as_slice()
        .to_vec())
}

/// `(head, med, tail)` class indices.
#[pyfunction]
#[pyo3(signature = (counts, t_head = 100, t_tail = 20))]
fn split_classes(counts: Vec<usize>, t_head: usize, t_tail: usize) -> PyResult<(Vec<usize>, Vec<usize>, Vec<usize>)> {
    let s = gnm_lab::data::split_classes(&class_counts(counts)?, t_head, t_tail).map_err(err)?;
    Ok((s.head, s.med, s.tail))
}

#[pyfunction]
#[pyo3(signature = (counts, epoch, t1, beta = 0.9999))]
fn drw_weights(counts: Vec<usize>, epoch: usize, t1: usize, beta: f64) -> PyResult<Vec<f64>> {
    Ok(losses::drw_weights(&class_counts(counts)?, beta, epoch, t1)
        .map_err(err)?
        .as_slice()
        .to_vec())
}

#[pyfunction]
fn balanced_softmax_adjust(logits: Vec<Vec<f64>>, counts: Vec<usize>) -> PyResult<Vec<Vec<f64>>> {
    let rows = logits.len();
    let cols = logits.first().map_or(0, Vec::len);
    let t = Tensor::matrix(rows, cols, logits.concat()).map_err(err)?;
    let out = losses::balanced_softmax_adjust(&t, &class_counts(counts)?).map_err(err)?;
    Ok((0..rows).map(|r| out.row(r).to_vec()).collect())
}

/// `n` entries of `radius * clamp(N(0, sigma^2), -clamp, clamp)` from the
/// perturbation stream of `seed`.
#[pyfunction]
#[pyo3(signature = (n, radius = 0.005, sigma = 1.0 / 3.0, clamp = 1.0, seed = 0))]
fn sample_perturbation(n: usize, radius: f64, sigma: f64, clamp: f64, seed: u64) -> Vec<f64> {
    let nb = GaussianNeighborhood { radius, sigma, clamp };
    sample_gaussian_perturbation(&[vec![n]], &nb, &mut stream(seed, Stream::Perturbation)).flatten()
}

fn theta_params(theta: Vec<f64>) -> PyResult<ParamSet> {
    if theta.is_empty() {
        return Err(PyValueError::new_err("theta must be non-empty"));
    }
    let mut p = ParamSet::new();
    p.insert("theta", Tensor::vector(theta)).map_err(err)?;
    Ok(p)
}

/// One optimizer step on `0.5 * ||theta||^2` at a constant learning rate.
/// Returns `(new_theta, loss, (forward, backward))`.
#[pyfunction]
#[pyo3(signature = (kind, theta, lr = 0.1, weight_decay = 0.0, rho = 0.05, amplitude = 0.1, seed = 0))]
fn quadratic_step(
    kind: &str,
    theta: Vec<f64>,
    lr: f64,
    weight_decay: f64,
    rho: f64,
    amplitude: f64,
    seed: u64,
) -> PyResult<(Vec<f64>, f64, (u64, u64))> {
    let kind: OptimizerKind = kind.parse().map_err(err)?;
    let cfg = OptimizerConfig {
        kind,
        lr,
        schedule: Schedule::Constant,
        weight_decay,
        rho_sam: rho,
        amplitude,
        ..OptimizerConfig::default()
    };
    let mut params = theta_params(theta)?;
    let mut opt = Optimizer::new(cfg, 1, seed).map_err(err)?;
    let loss = opt.step(&mut params, &HalfSquaredNorm, 0).map_err(err)?;
    Ok((params.flatten(), loss, (opt.counter.forward, opt.counter.backward)))
}

/// Landscape of `0.5 * ||theta||^2` along explicit directions. Returns
/// `(alphas, row-major values, center, flatness)`.
#[pyfunction]
#[pyo3(signature = (theta, d1, d2, range = 1.0, resolution = 5))]
fn quadratic_landscape(
    theta: Vec<f64>,
    d1: Vec<f64>,
    d2: Vec<f64>,
    range: f64,
    resolution: usize,
) -> PyResult<(Vec<f64>, Vec<f64>, f64, f64)> {
    let params = theta_params(theta)?;
    let d1 = Perturbation::from_flat(&params, &d1).map_err(err)?;
    let d2 = Perturbation::from_flat(&params, &d2).map_err(err)?;
    let grid: LandscapeGrid =
        landscape::landscape_grid(&params, &HalfSquaredNorm, &d1, &d2, range, resolution).map_err(err)?;
    let flat = landscape::flatness_score(&grid).map_err(err)?;
    Ok((grid.alphas, grid.values, grid.center, flat))
}

#[pymodule]
fn gnm_lab_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyConfig>()?;
    m.add_class::<PyReport>()?;
    m.add_function(wrap_pyfunction!(train, m)?)?;
    m.add_function(wrap_pyfunction!(compare, m)?)?;
    m.add_function(wrap_pyfunction!(longtail_counts, m)?)?;
    m.add_function(wrap_pyfunction!(split_classes, m)?)?;
    m.add_function(wrap_pyfunction!(drw_weights, m)?)?;
    m.add_function(wrap_pyfunction!(balanced_softmax_adjust, m)?)?;
    m.add_function(wrap_pyfunction!(sample_perturbation, m)?)?;
    m.add_function(wrap_pyfunction!(quadratic_step, m)?)?;
    m.add_function(wrap_pyfunction!(quadratic_landscape, m)?)?;
    Ok(())
}
