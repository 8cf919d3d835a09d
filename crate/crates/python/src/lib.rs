//! Python bindings. Matrices cross the boundary as lists of row lists.

use std::path::PathBuf;

use fsl_core::baselines::{accuracy, learner_fit, learner_predict, FittedLearner, LearnerKind};
use fsl_core::checkpoint::load_checkpoint;
use fsl_core::config::RunConfig;
use fsl_core::engine::{benchmark_timing, evaluate, BackboneParams, EvalOptions, Pipeline};
use fsl_core::episode::{sample_synthetic_episode, Episode, Phase, Support, SynthSpec};
use fsl_core::lssvm::{fit_lssvm, LssvmModel};
use fsl_core::rng::RngState;
use fsl_core::transduction::psm::{psm_iterate, PsmConfig};
use fsl_core::{Error, Matrix};
use pyo3::exceptions::{PyIOError, PyRuntimeError, PyValueError};
use pyo3::prelude::*;

fn to_py_err(e: Error) -> PyErr {
    match e.exit_code() {
        2 => PyValueError::new_err(e.to_string()),
        3 => PyRuntimeError::new_err(e.to_string()),
        _ if matches!(e, Error::Io(_)) => PyIOError::new_err(e.to_string()),
        _ => PyValueError::new_err(e.to_string()),
    }
}

/// Row lists to a matrix; an empty list is a `0 × 0` matrix.
pub fn matrix_from_rows(rows: &[Vec<f64>]) -> Result<Matrix, Error> {
    if rows.is_empty() {
        return Ok(Matrix::zeros(0, 0));
    }
    Matrix::from_rows(rows)
}

pub fn matrix_to_rows(m: &Matrix) -> Vec<Vec<f64>> {
    m.row_iter().map(<[f64]>::to_vec).collect()
}

fn matrix(rows: Vec<Vec<f64>>) -> PyResult<Matrix> {
    matrix_from_rows(&rows).map_err(to_py_err)
}

/// Resolved run configuration.
#[pyclass(name = "RunConfig", from_py_object)]
#[derive(Clone)]
struct PyRunConfig {
    inner: RunConfig,
}

#[pymethods]
impl PyRunConfig {
    /// Parses `text` (empty for all defaults).
    #[new]
    #[pyo3(signature = (text = ""))]
    fn new(text: &str) -> PyResult<Self> {
        Ok(Self { inner: RunConfig::parse_str(text).map_err(to_py_err)? })
    }

    /// Sets `key` (bare or `section.key`) and revalidates.
    fn set(&mut self, key: &str, value: &str) -> PyResult<()> {
        let mut next = self.inner.clone();
        next.apply_override(key, value).map_err(to_py_err)?;
        next.validate().map_err(to_py_err)?;
        self.inner = next;
        Ok(())
    }

    fn get(&self, key: &str) -> PyResult<String> {
        match key.split_once('.') {
            Some((section, name)) => self.inner.get(section, name).map_err(to_py_err),
            None => self.lookup_any(key),
        }
    }

    fn to_text(&self) -> String {
        self.inner.to_text()
    }

    fn __repr__(&self) -> String {
        format!("RunConfig(seed={}, learner={})", self.inner.seed, self.inner.learner)
    }
}

impl PyRunConfig {
    fn lookup_any(&self, key: &str) -> PyResult<String> {
        let hits: Vec<String> = fsl_core::config::SECTIONS
            .iter()
            .filter(|(_, keys)| keys.contains(&key))
            .filter_map(|(s, _)| self.inner.get(s, key).ok())
            .collect();
        match hits.as_slice() {
            [one] => Ok(one.clone()),
            [] => Err(to_py_err(Error::UnknownKey(key.to_string()))),
            _ => Err(PyValueError::new_err(format!("ambiguous key `{key}`, use section.key"))),
        }
    }
}

/// A sampled episode.
#[pyclass(name = "Episode", get_all)]
struct PyEpisode {
    way: usize,
    shot: usize,
    support_x: Vec<Vec<f64>>,
    support_y: Vec<usize>,
    query_x: Vec<Vec<f64>>,
    query_y: Option<Vec<usize>>,
}

impl From<Episode> for PyEpisode {
    fn from(e: Episode) -> Self {
        Self {
            way: e.way,
            shot: e.shot,
            support_x: matrix_to_rows(&e.support_x),
            support_y: e.support_y,
            query_x: matrix_to_rows(&e.query_x),
            query_y: e.query_y,
        }
    }
}

/// Draws one synthetic episode.
#[pyfunction]
#[pyo3(signature = (way, shot, query, dim = 16, std = 0.35, support_noise_factor = 1.0, seed = 42))]
fn sample_episode(
    way: usize,
    shot: usize,
    query: usize,
    dim: usize,
    std: f64,
    support_noise_factor: f64,
    seed: u64,
) -> PyResult<PyEpisode> {
    let spec = SynthSpec { dim, within_class_std: std, support_noise_factor, seed, ..SynthSpec::default() };
    spec.validate().map_err(to_py_err)?;
    let ep = sample_synthetic_episode(&spec, way, shot, query, &mut RngState::from_seed(seed)).map_err(to_py_err)?;
    Ok(ep.into())
}

/// A fitted multi-class LSSVM.
#[pyclass(name = "Lssvm")]
struct PyLssvm {
    inner: LssvmModel,
}

#[pymethods]
impl PyLssvm {
    /// Fits on the support set with the learner settings of `config`.
    #[staticmethod]
    #[pyo3(signature = (support_x, support_y, classes, config = None))]
    fn fit(support_x: Vec<Vec<f64>>, support_y: Vec<usize>, classes: usize, config: Option<PyRunConfig>) -> PyResult<Self> {
        let cfg = config.map(|c| c.inner).unwrap_or_default();
        let x = matrix(support_x)?;
        let support = Support::new(&x, &support_y, classes).map_err(to_py_err)?;
        Ok(Self { inner: fit_lssvm(support, &cfg.lssvm_config()).map_err(to_py_err)? })
    }

    /// `(labels, class_scores)` for the query rows.
    fn predict(&self, query_x: Vec<Vec<f64>>) -> PyResult<(Vec<usize>, Vec<Vec<f64>>)> {
        let (labels, scores) = self.inner.predict(&matrix(query_x)?).map_err(to_py_err)?;
        Ok((labels, matrix_to_rows(&scores)))
    }

    /// Per-subproblem decision values `c_l`.
    fn decision_values(&self, query_x: Vec<Vec<f64>>) -> PyResult<Vec<Vec<f64>>> {
        Ok(matrix_to_rows(&self.inner.decision_values(&matrix(query_x)?).map_err(to_py_err)?))
    }

    /// `(alpha, bias)` per subproblem.
    fn dual(&self) -> Vec<(Vec<f64>, f64)> {
        self.inner.subproblems().iter().map(|s| (s.alpha.clone(), s.bias)).collect()
    }

    /// Largest stationarity and bias residuals of the optimality conditions.
    fn kkt_residuals(&self) -> (f64, f64) {
        let r = self.inner.kkt_residuals();
        (r.stationarity, r.bias)
    }
}

/// Fits `learner` (`nn`, `rr` or `lssvm`) and predicts, optionally with `psm_iters` pseudo-support rounds.
/// Returns `(predictions, accuracy_trace)`; the trace is empty without `query_y`.
#[pyfunction]
#[pyo3(signature = (learner, support_x, support_y, classes, query_x, query_y = None, psm_iters = 0, config = None))]
#[allow(clippy::too_many_arguments)]
fn fit_predict(
    learner: &str,
    support_x: Vec<Vec<f64>>,
    support_y: Vec<usize>,
    classes: usize,
    query_x: Vec<Vec<f64>>,
    query_y: Option<Vec<usize>>,
    psm_iters: usize,
    config: Option<PyRunConfig>,
) -> PyResult<(Vec<usize>, Vec<f64>)> {
    let cfg = config.map(|c| c.inner).unwrap_or_default();
    let kind: LearnerKind = learner.parse().map_err(to_py_err)?;
    let spec = cfg.learner_spec_of(kind);
    let (x, q) = (matrix(support_x)?, matrix(query_x)?);
    let support = Support::new(&x, &support_y, classes).map_err(to_py_err)?;
    let (preds, trace) = if psm_iters == 0 {
        let model: FittedLearner = learner_fit(&spec, support).map_err(to_py_err)?;
        (learner_predict(&spec, &model, &q).map_err(to_py_err)?.0, None)
    } else {
        let out = psm_iterate(&spec, support, &q, &PsmConfig { iterations: psm_iters, ..cfg.psm }).map_err(to_py_err)?;
        (out.predictions, Some(out.trace))
    };
    let acc = match (&query_y, trace) {
        (Some(t), Some(tr)) => tr.iter().map(|p| accuracy(p, t)).collect(),
        (Some(t), None) => vec![accuracy(&preds, t)],
        (None, _) => Vec::new(),
    };
    Ok((preds, acc))
}

/// Runs the configured evaluation; returns `(mean_acc, ci95, psm_trace_acc)`.
#[pyfunction]
#[pyo3(signature = (config, checkpoint = None))]
fn run_eval(config: PyRunConfig, checkpoint: Option<PathBuf>) -> PyResult<(f64, f64, Vec<f64>)> {
    let cfg = config.inner;
    let pipeline = match checkpoint {
        Some(p) => load_checkpoint(&p).map_err(to_py_err)?.pipeline,
        None => Pipeline { backbone: BackboneParams::identity(), iam: None },
    };
    let source = fsl_core::commands::episode_source(&cfg).map_err(to_py_err)?;
    let opts = EvalOptions {
        learner: cfg.learner_spec(),
        iam: cfg.iam,
        psm: cfg.psm,
        way: cfg.eval.shape.way,
        shot: cfg.eval.shape.shot,
        query: cfg.eval.shape.query,
        episodes: cfg.eval.episodes,
        phase: Phase::Test,
        seed: cfg.seed,
    };
    let r = evaluate(&pipeline, &source, &opts).map_err(to_py_err)?;
    Ok((r.mean_acc, r.ci95, r.psm_trace_acc))
}

/// `(learner, acc, ci95, total_s, per_episode_us)`.
type BenchTuple = (String, f64, f64, f64, f64);

/// Times the configured bench learners, one row per learner.
#[pyfunction]
fn run_bench(config: PyRunConfig) -> PyResult<Vec<BenchTuple>> {
    let cfg = config.inner;
    let specs: Vec<_> = cfg.bench.learners.iter().map(|&k| cfg.learner_spec_of(k)).collect();
    let rows = benchmark_timing(&specs, cfg.bench.episodes, &cfg.bench.shape, &cfg.synth_spec(), cfg.seed).map_err(to_py_err)?;
    Ok(rows.into_iter().map(|r| (r.learner.to_string(), r.acc, r.ci95, r.total_s, r.per_episode_us)).collect())
}

#[pymodule]
fn fsl(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyRunConfig>()?;
    m.add_class::<PyEpisode>()?;
    m.add_class::<PyLssvm>()?;
    m.add_function(wrap_pyfunction!(sample_episode, m)?)?;
    m.add_function(wrap_pyfunction!(fit_predict, m)?)?;
    m.add_function(wrap_pyfunction!(run_eval, m)?)?;
    m.add_function(wrap_pyfunction!(run_bench, m)?)?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rows_round_trip() {
        let rows = vec![vec![1.0, 2.0], vec![3.0, 4.0], vec![5.0, 6.0]];
        let m = matrix_from_rows(&rows).unwrap();
        assert_eq!(m.shape(), (3, 2));
        assert_eq!(matrix_to_rows(&m), rows);
        assert_eq!(matrix_from_rows(&[]).unwrap().shape(), (0, 0));
        assert!(matrix_from_rows(&[vec![1.0], vec![1.0, 2.0]]).is_err());
    }
}
