//! Inverse attention: support rows attend over the query set, the attended
//! values are averaged per class, and the result is added back to the support
//! features through a bottleneck and layer norm.

use std::sync::atomic::{AtomicU64, Ordering};

use crate::baselines::class_means;
use crate::error::{Error, Result};
use crate::numerics::{layer_norm_backward, layer_norm_rows_cached, LayerNormCache, Matrix, LN_EPS};
use crate::rng::RngState;

pub const DEFAULT_IAM_DROPOUT: f64 = 0.1;
pub const DEFAULT_REDUCTION: usize = 16;

static NEXT_VERSION: AtomicU64 = AtomicU64::new(1);

fn next_version() -> u64 {
    NEXT_VERSION.fetch_add(1, Ordering::Relaxed)
}

fn glorot(rows: usize, cols: usize, rng: &mut RngState) -> Matrix {
    let bound = (6.0 / (rows + cols) as f64).sqrt();
    let data = (0..rows * cols).map(|_| rng.uniform(-bound, bound)).collect();
    Matrix::new(rows, cols, data).expect("sized buffer")
}

/// `relu(x·w1)·w2`, no biases.
#[derive(Debug, Clone, PartialEq)]
pub struct BottleneckMap {
    pub w1: Matrix,
    pub w2: Matrix,
}

#[derive(Debug, Clone)]
pub struct BottleneckCache {
    input: Matrix,
    pre: Matrix,
    hidden: Matrix,
}

pub fn hidden_width(d_in: usize, r: usize) -> usize {
    (d_in / r.max(1)).max(1)
}

impl BottleneckMap {
    pub fn init(d_in: usize, d_out: usize, r: usize, rng: &mut RngState) -> Self {
        let h = hidden_width(d_in, r);
        let w1 = glorot(d_in, h, rng);
        let w2 = glorot(h, d_out, rng);
        BottleneckMap { w1, w2 }
    }

    pub fn d_in(&self) -> usize {
        self.w1.rows()
    }

    pub fn d_out(&self) -> usize {
        self.w2.cols()
    }

    pub fn forward(&self, x: &Matrix) -> Result<Matrix> {
        self.forward_cached(x).map(|(y, _)| y)
    }

    pub fn forward_cached(&self, x: &Matrix) -> Result<(Matrix, BottleneckCache)> {
        let pre = x.matmul(&self.w1)?;
        let hidden = pre.map(|v| v.max(0.0));
        let out = hidden.matmul(&self.w2)?;
        Ok((out, BottleneckCache { input: x.clone(), pre, hidden }))
    }

    /// Returns `(dx, dw1, dw2)`.
    pub fn vjp(&self, cache: &BottleneckCache, upstream: &Matrix) -> Result<(Matrix, Matrix, Matrix)> {
        let dw2 = cache.hidden.t_matmul(upstream)?;
        let mut dpre = upstream.matmul_t(&self.w2)?;
        for (g, &p) in dpre.as_mut_slice().iter_mut().zip(cache.pre.as_slice()) {
            if p <= 0.0 {
                *g = 0.0;
            }
        }
        let dw1 = cache.input.t_matmul(&dpre)?;
        let dx = dpre.matmul_t(&self.w1)?;
        Ok((dx, dw1, dw2))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum IamMode {
    Train,
    Eval,
}

#[derive(Debug, Clone)]
pub struct IamParams {
    map_q: BottleneckMap,
    map_k: BottleneckMap,
    map_v: BottleneckMap,
    map_h: BottleneckMap,
    ln_gain: Matrix,
    ln_bias: Matrix,
    dropout_rate: f64,
    reduction: usize,
    version: u64,
}

/// Number of trainable tensors in [`IamParams::tensors`].
pub const IAM_TENSORS: usize = 10;

impl IamParams {
    pub fn dim(&self) -> usize {
        self.ln_gain.cols()
    }

    pub fn d_k(&self) -> usize {
        self.map_q.d_out()
    }

    pub fn d_v(&self) -> usize {
        self.map_v.d_out()
    }

    pub fn reduction(&self) -> usize {
        self.reduction
    }

    pub fn dropout_rate(&self) -> f64 {
        self.dropout_rate
    }

    pub fn set_dropout_rate(&mut self, rate: f64) -> Result<()> {
        if !(0.0..1.0).contains(&rate) {
            return Err(Error::InvalidArgument(format!("dropout rate must be in [0, 1), got {rate}")));
        }
        self.dropout_rate = rate;
        Ok(())
    }

    pub fn version(&self) -> u64 {
        self.version
    }

    pub fn map_q(&self) -> &BottleneckMap {
        &self.map_q
    }

    pub fn map_k(&self) -> &BottleneckMap {
        &self.map_k
    }

    pub fn map_v(&self) -> &BottleneckMap {
        &self.map_v
    }

    pub fn map_h(&self) -> &BottleneckMap {
        &self.map_h
    }

    pub fn ln_gain(&self) -> &[f64] {
        self.ln_gain.as_slice()
    }

    pub fn ln_bias(&self) -> &[f64] {
        self.ln_bias.as_slice()
    }

    /// Trainable tensors in a fixed order: q, k, v, h maps (w1 then w2), then
    /// layer-norm gain and bias as `1×d` rows.
    pub fn tensors(&self) -> [&Matrix; IAM_TENSORS] {
        [
            &self.map_q.w1,
            &self.map_q.w2,
            &self.map_k.w1,
            &self.map_k.w2,
            &self.map_v.w1,
            &self.map_v.w2,
            &self.map_h.w1,
            &self.map_h.w2,
            &self.ln_gain,
            &self.ln_bias,
        ]
    }

    /// Mutable access to the tensors. Invalidates every cache taken so far.
    pub fn tensors_mut(&mut self) -> [&mut Matrix; IAM_TENSORS] {
        self.version = next_version();
        [
            &mut self.map_q.w1,
            &mut self.map_q.w2,
            &mut self.map_k.w1,
            &mut self.map_k.w2,
            &mut self.map_v.w1,
            &mut self.map_v.w2,
            &mut self.map_h.w1,
            &mut self.map_h.w2,
            &mut self.ln_gain,
            &mut self.ln_bias,
        ]
    }

    /// Rebuilds parameters from tensors in [`IamParams::tensors`] order.
    pub fn from_tensors(tensors: Vec<Matrix>, dropout_rate: f64, reduction: usize) -> Result<Self> {
        let [qw1, qw2, kw1, kw2, vw1, vw2, hw1, hw2, gain, bias]: [Matrix; IAM_TENSORS] = tensors
            .try_into()
            .map_err(|v: Vec<Matrix>| Error::ShapeMismatch(format!("expected {IAM_TENSORS} IAM tensors, got {}", v.len())))?;
        let mut p = IamParams {
            map_q: BottleneckMap { w1: qw1, w2: qw2 },
            map_k: BottleneckMap { w1: kw1, w2: kw2 },
            map_v: BottleneckMap { w1: vw1, w2: vw2 },
            map_h: BottleneckMap { w1: hw1, w2: hw2 },
            ln_gain: gain,
            ln_bias: bias,
            dropout_rate: 0.0,
            reduction,
            version: next_version(),
        };
        p.set_dropout_rate(dropout_rate)?;
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<()> {
        let d = self.dim();
        let chain = |m: &BottleneckMap, d_in: usize, d_out: usize, name: &str| -> Result<()> {
            if m.w1.rows() != d_in || m.w2.rows() != m.w1.cols() || m.w2.cols() != d_out {
                return Err(Error::ShapeMismatch(format!(
                    "{name}: w1 {}x{}, w2 {}x{}, expected {d_in} -> {d_out}",
                    m.w1.rows(),
                    m.w1.cols(),
                    m.w2.rows(),
                    m.w2.cols()
                )));
            }
            Ok(())
        };
        chain(&self.map_q, d, self.d_k(), "map_q")?;
        chain(&self.map_k, d, self.d_k(), "map_k")?;
        chain(&self.map_v, d, self.d_v(), "map_v")?;
        chain(&self.map_h, self.d_v(), d, "map_h")?;
        if self.ln_gain.rows() != 1 || self.ln_bias.shape() != (1, d) {
            return Err(Error::ShapeMismatch("layer norm gain/bias must be 1xd".into()));
        }
        if self.tensors().iter().any(|t| !t.is_finite()) {
            return Err(Error::NonFinite("IAM parameters"));
        }
        Ok(())
    }
}

/// Fresh parameters whose residual branch is exactly zero.
pub fn iam_init_params(d: usize, d_k: usize, d_v: usize, r: usize, rng: &mut RngState) -> Result<IamParams> {
    if d == 0 || d_k == 0 || d_v == 0 || r == 0 {
        return Err(Error::InvalidArgument(format!("IAM dims must be >= 1 (d={d}, d_k={d_k}, d_v={d_v}, r={r})")));
    }
    let map_q = BottleneckMap::init(d, d_k, r, rng);
    let map_k = BottleneckMap::init(d, d_k, r, rng);
    let map_v = BottleneckMap::init(d, d_v, r, rng);
    let mut map_h = BottleneckMap::init(d_v, d, r, rng);
    map_h.w2 = Matrix::zeros(map_h.w2.rows(), d);
    Ok(IamParams {
        map_q,
        map_k,
        map_v,
        map_h,
        ln_gain: Matrix::filled(1, d, 1.0),
        ln_bias: Matrix::zeros(1, d),
        dropout_rate: DEFAULT_IAM_DROPOUT,
        reduction: r,
        version: next_version(),
    })
}

#[derive(Debug, Clone)]
pub struct IamCache {
    version: u64,
    support_y: Vec<usize>,
    classes: usize,
    query_rows: usize,
    q: (Matrix, BottleneckCache),
    k: (Matrix, BottleneckCache),
    v: (Matrix, BottleneckCache),
    h: BottleneckCache,
    attention: Matrix,
    mask: Option<Vec<f64>>,
    ln: LayerNormCache,
}

impl IamCache {
    pub fn attention(&self) -> &Matrix {
        &self.attention
    }

    pub fn dropout_mask(&self) -> Option<&[f64]> {
        self.mask.as_deref()
    }
}

/// Replaces each row with the mean of the rows sharing its label.
pub fn prototype_replace(a: &Matrix, labels: &[usize], classes: usize) -> Matrix {
    let means = class_means(a, labels, classes);
    means.select_rows(labels)
}

pub fn iam_forward(
    params: &IamParams,
    support_x: &Matrix,
    support_y: &[usize],
    query_x: &Matrix,
    mode: IamMode,
    rng: &mut RngState,
) -> Result<(Matrix, IamCache)> {
    let d = params.dim();
    if support_x.cols() != d || query_x.cols() != d {
        return Err(Error::ShapeMismatch(format!(
            "IAM over dim {d} given support dim {} and query dim {}",
            support_x.cols(),
            query_x.cols()
        )));
    }
    if support_y.len() != support_x.rows() {
        return Err(Error::ShapeMismatch(format!("{} support rows, {} labels", support_x.rows(), support_y.len())));
    }
    if query_x.rows() == 0 {
        return Err(Error::EmptyQuery);
    }
    let classes = support_y.iter().max().map_or(0, |&c| c + 1);

    let q = params.map_q.forward_cached(support_x)?;
    let k = params.map_k.forward_cached(query_x)?;
    let v = params.map_v.forward_cached(query_x)?;
    let scale = 1.0 / (params.d_k() as f64).sqrt();
    let mut attention = q.0.matmul_t(&k.0)?.scale(scale);
    for r in 0..attention.rows() {
        crate::numerics::softmax_in_place(attention.row_mut(r));
    }
    let attended = attention.matmul(&v.0)?;
    let proto = prototype_replace(&attended, support_y, classes);
    let (mut branch, h) = params.map_h.forward_cached(&proto)?;

    let mask = match mode {
        IamMode::Train if params.dropout_rate > 0.0 => {
            let keep = 1.0 - params.dropout_rate;
            let m: Vec<f64> = (0..branch.as_slice().len())
                .map(|_| if rng.unit() < keep { 1.0 / keep } else { 0.0 })
                .collect();
            for (b, &w) in branch.as_mut_slice().iter_mut().zip(&m) {
                *b *= w;
            }
            Some(m)
        }
        _ => None,
    };
    let residual = support_x.add(&branch)?;
    let (out, ln) = layer_norm_rows_cached(&residual, params.ln_gain(), params.ln_bias(), LN_EPS)?;
    let cache = IamCache {
        version: params.version,
        support_y: support_y.to_vec(),
        classes,
        query_rows: query_x.rows(),
        q,
        k,
        v,
        h,
        attention,
        mask,
        ln,
    };
    Ok((out, cache))
}

#[derive(Debug, Clone)]
pub struct IamGrads {
    /// Same order as [`IamParams::tensors`].
    pub params: Vec<Matrix>,
    pub support_x: Matrix,
    pub query_x: Matrix,
}

pub fn iam_vjp(params: &IamParams, cache: &IamCache, upstream: &Matrix) -> Result<IamGrads> {
    if cache.version != params.version {
        return Err(Error::StaleCache { cache: cache.version, params: params.version });
    }
    let (d_res, d_gain, d_bias) = layer_norm_backward(&cache.ln, params.ln_gain(), upstream)?;
    let mut d_support = d_res.clone();
    let mut d_branch = d_res;
    if let Some(mask) = &cache.mask {
        for (g, &w) in d_branch.as_mut_slice().iter_mut().zip(mask) {
            *g *= w;
        }
    }
    let (d_proto, dh1, dh2) = params.map_h.vjp(&cache.h, &d_branch)?;
    // averaging within classes is symmetric, so its adjoint is itself
    let d_attended = prototype_replace(&d_proto, &cache.support_y, cache.classes);

    let (q, k, v) = (&cache.q.0, &cache.k.0, &cache.v.0);
    let p = &cache.attention;
    let d_v = p.t_matmul(&d_attended)?;
    let mut d_logits = d_attended.matmul_t(v)?;
    for r in 0..d_logits.rows() {
        let pr = p.row(r);
        let dot: f64 = d_logits.row(r).iter().zip(pr).map(|(a, b)| a * b).sum();
        for (g, &pv) in d_logits.row_mut(r).iter_mut().zip(pr) {
            *g = pv * (*g - dot);
        }
    }
    let scale = 1.0 / (params.d_k() as f64).sqrt();
    let d_q = d_logits.matmul(k)?.scale(scale);
    let d_k = d_logits.t_matmul(q)?.scale(scale);

    let (dsq, dq1, dq2) = params.map_q.vjp(&cache.q.1, &d_q)?;
    let (dqk, dk1, dk2) = params.map_k.vjp(&cache.k.1, &d_k)?;
    let (dqv, dv1, dv2) = params.map_v.vjp(&cache.v.1, &d_v)?;
    d_support.add_assign(&dsq)?;
    let d_query = dqk.add(&dqv)?;
    debug_assert_eq!(d_query.rows(), cache.query_rows);
    let d = params.dim();
    Ok(IamGrads {
        params: vec![
            dq1,
            dq2,
            dk1,
            dk2,
            dv1,
            dv2,
            dh1,
            dh2,
            Matrix::new(1, d, d_gain)?,
            Matrix::new(1, d, d_bias)?,
        ],
        support_x: d_support,
        query_x: d_query,
    })
}
