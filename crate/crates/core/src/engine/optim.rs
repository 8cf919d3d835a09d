use crate::error::{Error, Result};
use crate::numerics::Matrix;

pub const DEFAULT_MOMENTUM: f64 = 0.9;
pub const DEFAULT_WEIGHT_DECAY: f64 = 5e-4;
pub const DEFAULT_LR: f64 = 0.1;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SgdConfig {
    pub momentum: f64,
    pub weight_decay: f64,
    pub nesterov: bool,
}

impl Default for SgdConfig {
    fn default() -> Self {
        SgdConfig { momentum: DEFAULT_MOMENTUM, weight_decay: DEFAULT_WEIGHT_DECAY, nesterov: true }
    }
}

#[derive(Debug, Clone, Default)]
pub struct SgdState {
    velocity: Vec<Matrix>,
}

impl SgdState {
    pub fn new() -> Self {
        Self::default()
    }
}

/// One step of SGD with L2 weight decay folded into the gradient and
/// (Nesterov) momentum:
/// `g ← ∇ + λp; v ← μv + g; p ← p − lr·(g + μv)` (or `p − lr·v` without Nesterov).
pub fn sgd_step(params: &mut [&mut Matrix], grads: &[Matrix], state: &mut SgdState, cfg: &SgdConfig, lr: f64) -> Result<()> {
    if params.len() != grads.len() {
        return Err(Error::ShapeMismatch(format!("{} parameters, {} gradients", params.len(), grads.len())));
    }
    for (i, (p, g)) in params.iter().zip(grads).enumerate() {
        if p.shape() != g.shape() {
            return Err(Error::ShapeMismatch(format!(
                "tensor {i}: parameter {}x{}, gradient {}x{}",
                p.rows(),
                p.cols(),
                g.rows(),
                g.cols()
            )));
        }
    }
    if state.velocity.is_empty() {
        state.velocity = grads.iter().map(|g| Matrix::zeros(g.rows(), g.cols())).collect();
    } else if state.velocity.len() != grads.len() || state.velocity.iter().zip(grads).any(|(v, g)| v.shape() != g.shape()) {
        return Err(Error::ShapeMismatch("optimizer state does not match parameters".into()));
    }
    let (mu, wd) = (cfg.momentum, cfg.weight_decay);
    for ((p, g), v) in params.iter_mut().zip(grads).zip(&mut state.velocity) {
        for ((pv, &gv), vv) in p.as_mut_slice().iter_mut().zip(g.as_slice()).zip(v.as_mut_slice()) {
            let d = gv + wd * *pv;
            *vv = mu * *vv + d;
            let step = if cfg.nesterov { d + mu * *vv } else { *vv };
            *pv -= lr * step;
        }
    }
    Ok(())
}

/// Piecewise-constant learning rate: each factor applies from its milestone epoch on.
#[derive(Debug, Clone, PartialEq)]
pub struct LrSchedule {
    pub lr_init: f64,
    pub milestones: Vec<usize>,
    pub factors: Vec<f64>,
}

impl Default for LrSchedule {
    fn default() -> Self {
        LrSchedule { lr_init: DEFAULT_LR, milestones: vec![20, 40, 50], factors: vec![0.06, 0.2, 0.2] }
    }
}

impl LrSchedule {
    pub fn validate(&self) -> Result<()> {
        if self.milestones.len() != self.factors.len() {
            return Err(Error::InvalidArgument(format!(
                "{} lr milestones but {} factors",
                self.milestones.len(),
                self.factors.len()
            )));
        }
        if !(self.lr_init >= 0.0) || self.factors.iter().any(|f| !(*f >= 0.0)) {
            return Err(Error::InvalidArgument("learning rate and factors must be >= 0".into()));
        }
        Ok(())
    }
}

pub fn lr_schedule(epoch: usize, schedule: &LrSchedule) -> f64 {
    schedule
        .milestones
        .iter()
        .zip(&schedule.factors)
        .filter(|(&m, _)| epoch >= m)
        .fold(schedule.lr_init, |lr, (_, f)| lr * f)
}
