//! Episodic meta-training and evaluation of the backbone → IAM → LSSVM pipeline.

pub mod backbone;
pub mod eval;
pub mod loss;
pub mod optim;
pub mod train;

pub use backbone::{backbone_forward, backbone_vjp, BackboneParams, Layer};
pub use eval::{bench_table_csv, bench_table_text, benchmark_timing, mean_ci95, evaluate, BenchRow, BenchShape, EvalOptions, EvalReport, TimeSummary};
pub use loss::meta_loss;
pub use optim::{lr_schedule, sgd_step, LrSchedule, SgdConfig, SgdState};
pub use train::{train, LogRecord, TrainConfig, TrainReport};

use crate::episode::{draw_episode_from_bank, sample_synthetic_episode, Episode, FeatureBank, Phase, SplitSpec, SynthSpec};
use crate::error::{Error, Result};
use crate::lssvm::{fit_lssvm, lssvm_vjp, LssvmConfig};
use crate::numerics::Matrix;
use crate::rng::RngState;
use crate::transduction::iam::{iam_forward, iam_vjp, IamMode, IamParams};

/// Where episodes come from.
#[derive(Debug, Clone)]
pub enum EpisodeSource {
    /// Fresh Gaussian classes per episode; every phase draws from the same distribution.
    Synthetic(SynthSpec),
    Bank { bank: FeatureBank, split: SplitSpec },
}

impl EpisodeSource {
    pub fn input_dim(&self) -> usize {
        match self {
            EpisodeSource::Synthetic(s) => s.dim,
            EpisodeSource::Bank { bank, .. } => bank.dim(),
        }
    }

    pub fn sample(&self, phase: Phase, way: usize, shot: usize, query: usize, rng: &mut RngState) -> Result<Episode> {
        match self {
            EpisodeSource::Synthetic(spec) => sample_synthetic_episode(spec, way, shot, query, rng),
            EpisodeSource::Bank { bank, split } => draw_episode_from_bank(bank, split.classes(phase), way, shot, query, rng),
        }
    }
}

/// Trainable parts of the pipeline.
#[derive(Debug, Clone)]
pub struct Pipeline {
    pub backbone: BackboneParams,
    pub iam: Option<IamParams>,
}

impl Pipeline {
    /// Backbone tensors first, then IAM tensors.
    pub fn tensors(&self) -> Vec<&Matrix> {
        let mut t = self.backbone.tensors();
        if let Some(iam) = &self.iam {
            t.extend(iam.tensors());
        }
        t
    }

    pub fn tensors_mut(&mut self) -> Vec<&mut Matrix> {
        let mut t = self.backbone.tensors_mut();
        if let Some(iam) = &mut self.iam {
            t.extend(iam.tensors_mut());
        }
        t
    }

    pub fn feature_dim(&self, input_dim: usize) -> usize {
        self.backbone.output_dim(input_dim)
    }

    pub fn validate(&self, input_dim: usize) -> Result<()> {
        self.backbone.validate()?;
        if let Some(w) = self.backbone.widths().first() {
            if *w != input_dim {
                return Err(Error::ShapeMismatch(format!("backbone expects dim {w}, data has {input_dim}")));
            }
        }
        if let Some(iam) = &self.iam {
            iam.validate()?;
            if iam.dim() != self.feature_dim(input_dim) {
                return Err(Error::ShapeMismatch(format!(
                    "IAM dim {} vs feature dim {}",
                    iam.dim(),
                    self.feature_dim(input_dim)
                )));
            }
        }
        Ok(())
    }

    /// Support and query features after the backbone and (optionally) IAM.
    pub fn features(&self, episode: &Episode, use_iam: bool, mode: IamMode, rng: &mut RngState) -> Result<(Matrix, Matrix)> {
        let stacked = episode.support_x.vstack(&episode.query_x)?;
        let (feats, _) = backbone_forward(&self.backbone, &stacked)?;
        let (fs, fq) = feats.split_rows(episode.support_x.rows());
        if !use_iam {
            return Ok((fs, fq));
        }
        let iam = self.iam.as_ref().ok_or_else(|| Error::Config("IAM requested but the model has no IAM parameters".into()))?;
        let (adjusted, _) = iam_forward(iam, &fs, &episode.support_y, &fq, mode, rng)?;
        Ok((adjusted, fq))
    }
}

/// Forward and backward pass of one training episode: meta-loss on the query
/// set and its gradient for every tensor in [`Pipeline::tensors`] order.
pub fn episode_loss_and_grads(
    pipeline: &Pipeline,
    episode: &Episode,
    lssvm: &LssvmConfig,
    mode: IamMode,
    rng: &mut RngState,
) -> Result<(f64, Vec<Matrix>)> {
    let labels = episode.query_y.as_deref().ok_or_else(|| Error::InvalidArgument("training episode needs query labels".into()))?;
    let n_support = episode.support_x.rows();
    let stacked = episode.support_x.vstack(&episode.query_x)?;
    let (feats, bb_cache) = backbone_forward(&pipeline.backbone, &stacked)?;
    let (fs, fq) = feats.split_rows(n_support);
    let (adjusted, iam_cache) = match &pipeline.iam {
        Some(iam) => {
            let (a, c) = iam_forward(iam, &fs, &episode.support_y, &fq, mode, rng)?;
            (a, Some(c))
        }
        None => (fs, None),
    };
    let model = fit_lssvm(crate::episode::Support::new(&adjusted, &episode.support_y, episode.way)?, lssvm)?;
    let scores = model.linear_scores(&fq)?;
    let (loss, d_scores) = meta_loss(&scores, labels)?;
    let g = lssvm_vjp(&model, &fq, &d_scores)?;
    let (mut d_fs, mut d_fq) = (g.support_x, g.query_x);
    let mut iam_grads = Vec::new();
    if let (Some(iam), Some(cache)) = (&pipeline.iam, &iam_cache) {
        let gi = iam_vjp(iam, cache, &d_fs)?;
        d_fs = gi.support_x;
        d_fq.add_assign(&gi.query_x)?;
        iam_grads = gi.params;
    }
    let (mut grads, _) = backbone_vjp(&pipeline.backbone, &bb_cache, &d_fs.vstack(&d_fq)?)?;
    grads.extend(iam_grads);
    Ok((loss, grads))
}

/// Scalar loss only, for finite-difference checks.
pub fn episode_loss(pipeline: &Pipeline, episode: &Episode, lssvm: &LssvmConfig) -> Result<f64> {
    let mut rng = RngState::from_seed(0);
    let (fs, fq) = pipeline.features(episode, pipeline.iam.is_some(), IamMode::Eval, &mut rng)?;
    let model = fit_lssvm(crate::episode::Support::new(&fs, &episode.support_y, episode.way)?, lssvm)?;
    let scores = model.linear_scores(&fq)?;
    meta_loss(&scores, episode.query_y.as_deref().unwrap_or_default()).map(|(l, _)| l)
}
