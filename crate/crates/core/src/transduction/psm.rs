//! Pseudo support: pseudo-label the queries, add one prototype per predicted
//! class to the support set, refit, repeat.

use crate::baselines::{learner_fit, learner_predict, BaseLearnerSpec};
use crate::episode::Support;
use crate::error::{Error, Result};
use crate::numerics::Matrix;

pub const DEFAULT_PSM_ITERATIONS: usize = 10;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PsmConfig {
    pub iterations: usize,
    /// Keep pseudo samples from earlier iterations instead of replacing them.
    pub accumulate: bool,
}

impl Default for PsmConfig {
    fn default() -> Self {
        PsmConfig { iterations: DEFAULT_PSM_ITERATIONS, accumulate: true }
    }
}

impl PsmConfig {
    pub fn off() -> Self {
        PsmConfig { iterations: 0, accumulate: true }
    }
}

#[derive(Debug, Clone)]
pub struct PsmOutcome {
    pub predictions: Vec<usize>,
    pub scores: Matrix,
    /// `trace[0]` holds the plain learner's labels, `trace[t]` the labels after iteration `t`.
    pub trace: Vec<Vec<usize>>,
    /// Support rows used by the last fit.
    pub support_size: usize,
}

/// Means of the query rows per pseudo label, for labels that occur.
fn pseudo_prototypes(query_x: &Matrix, labels: &[usize], classes: usize) -> (Matrix, Vec<usize>) {
    let d = query_x.cols();
    let mut sums = vec![0.0; classes * d];
    let mut counts = vec![0usize; classes];
    for (row, &c) in query_x.row_iter().zip(labels) {
        counts[c] += 1;
        for (s, v) in sums[c * d..(c + 1) * d].iter_mut().zip(row) {
            *s += v;
        }
    }
    let mut data = Vec::new();
    let mut ys = Vec::new();
    for c in 0..classes {
        if counts[c] > 0 {
            let inv = 1.0 / counts[c] as f64;
            data.extend(sums[c * d..(c + 1) * d].iter().map(|s| s * inv));
            ys.push(c);
        }
    }
    (Matrix::new(ys.len(), d, data).expect("sized buffer"), ys)
}

pub fn psm_iterate(spec: &BaseLearnerSpec, support: Support<'_>, query_x: &Matrix, psm: &PsmConfig) -> Result<PsmOutcome> {
    if query_x.rows() == 0 {
        return Err(Error::EmptyQuery);
    }
    let classes = support.classes;
    let model = learner_fit(spec, support)?;
    let (mut labels, mut scores) = learner_predict(spec, &model, query_x)?;
    let mut trace = vec![labels.clone()];
    let mut pseudo_x = Matrix::zeros(0, query_x.cols());
    let mut pseudo_y: Vec<usize> = Vec::new();
    let mut support_size = support.x.rows();

    for _ in 0..psm.iterations {
        let (protos, ys) = pseudo_prototypes(query_x, &labels, classes);
        if psm.accumulate {
            pseudo_x = pseudo_x.vstack(&protos)?;
            pseudo_y.extend(ys);
        } else {
            pseudo_x = protos;
            pseudo_y = ys;
        }
        let x = support.x.vstack(&pseudo_x)?;
        let y: Vec<usize> = support.y.iter().chain(&pseudo_y).copied().collect();
        support_size = x.rows();
        let model = learner_fit(spec, Support::new(&x, &y, classes)?)?;
        (labels, scores) = learner_predict(spec, &model, query_x)?;
        trace.push(labels.clone());
    }
    Ok(PsmOutcome { predictions: labels, scores, trace, support_size })
}
