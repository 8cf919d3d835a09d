use rayon::prelude::*;

use super::{episode_loss_and_grads, evaluate, lr_schedule, sgd_step, EpisodeSource, EvalOptions, LrSchedule, Pipeline, SgdConfig, SgdState};
use crate::baselines::BaseLearnerSpec;
use crate::episode::Phase;
use crate::error::{Error, Result};
use crate::lssvm::LssvmConfig;
use crate::numerics::Matrix;
use crate::rng::SeedStream;
use crate::transduction::iam::IamMode;
use crate::transduction::psm::PsmConfig;

const TRAIN_TAG: u64 = 0x7472_6169;
const VAL_TAG: u64 = 0x7661_6c69;

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub way: usize,
    pub train_shot: usize,
    pub test_shot: usize,
    pub query_train: usize,
    pub query_test: usize,
    pub epochs: usize,
    pub batches_per_epoch: usize,
    pub episodes_per_batch: usize,
    pub schedule: LrSchedule,
    pub sgd: SgdConfig,
    /// Shot of the validation tasks used to pick the best epoch.
    pub val_shot: usize,
    pub val_episodes: usize,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            way: 5,
            train_shot: 5,
            test_shot: 1,
            query_train: 6,
            query_test: 15,
            epochs: 60,
            batches_per_epoch: 1000,
            episodes_per_batch: 8,
            schedule: LrSchedule::default(),
            sgd: SgdConfig::default(),
            val_shot: 5,
            val_episodes: 200,
            seed: 42,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let counts = [
            ("way", self.way),
            ("train_shot", self.train_shot),
            ("test_shot", self.test_shot),
            ("query_train", self.query_train),
            ("query_test", self.query_test),
            ("batches_per_epoch", self.batches_per_epoch),
            ("episodes_per_batch", self.episodes_per_batch),
            ("val_shot", self.val_shot),
        ];
        if let Some((name, _)) = counts.iter().find(|(_, v)| *v == 0) {
            return Err(Error::Config(format!("{name} must be >= 1")));
        }
        if self.way < 2 {
            return Err(Error::Config("way must be >= 2".into()));
        }
        self.schedule.validate()
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LogRecord {
    pub epoch: usize,
    pub batch: usize,
    pub loss: f64,
    pub lr: f64,
}

impl std::fmt::Display for LogRecord {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{} {} {:.6} {:e}", self.epoch, self.batch, self.loss, self.lr)
    }
}

#[derive(Debug, Clone)]
pub struct TrainReport {
    /// Parameters of the best validation epoch (or the initial ones if no epoch beat them).
    pub best: Pipeline,
    pub last: Pipeline,
    pub log: Vec<LogRecord>,
    pub initial_val_acc: f64,
    pub val_acc: Vec<f64>,
    /// `None` when the initial parameters stayed best.
    pub best_epoch: Option<usize>,
}

impl TrainReport {
    pub fn best_val_acc(&self) -> f64 {
        self.best_epoch.map_or(self.initial_val_acc, |e| self.val_acc[e])
    }
}

fn validation_accuracy(pipeline: &Pipeline, source: &EpisodeSource, cfg: &TrainConfig, lssvm: &LssvmConfig) -> Result<f64> {
    if cfg.val_episodes == 0 {
        return Ok(0.0);
    }
    let opts = EvalOptions {
        learner: BaseLearnerSpec::Lssvm(lssvm.clone()),
        iam: pipeline.iam.is_some(),
        psm: PsmConfig::off(),
        way: cfg.way,
        shot: cfg.val_shot,
        query: cfg.query_test,
        episodes: cfg.val_episodes,
        phase: Phase::Val,
        seed: SeedStream::new(cfg.seed).derive(VAL_TAG).seed(),
    };
    Ok(evaluate(pipeline, source, &opts)?.mean_acc)
}

/// Episodic meta-training with one optimizer step per batch. `on_log` sees
/// every batch record as it is produced.
pub fn train(
    cfg: &TrainConfig,
    source: &EpisodeSource,
    init: Pipeline,
    lssvm: &LssvmConfig,
    mut on_log: impl FnMut(&LogRecord),
) -> Result<TrainReport> {
    cfg.validate()?;
    lssvm.validate()?;
    init.validate(source.input_dim())?;
    let stream = SeedStream::new(cfg.seed).derive(TRAIN_TAG);
    let mut pipeline = init;
    let mut state = SgdState::new();
    let initial_val_acc = validation_accuracy(&pipeline, source, cfg, lssvm)?;
    let (mut best, mut best_acc, mut best_epoch) = (pipeline.clone(), initial_val_acc, None);
    let mut log = Vec::with_capacity(cfg.epochs * cfg.batches_per_epoch);
    let mut val_acc = Vec::with_capacity(cfg.epochs);

    for epoch in 0..cfg.epochs {
        let lr = lr_schedule(epoch, &cfg.schedule);
        for batch in 0..cfg.batches_per_epoch {
            let base = ((epoch * cfg.batches_per_epoch + batch) * cfg.episodes_per_batch) as u64;
            let results: Vec<Result<(f64, Vec<Matrix>)>> = (0..cfg.episodes_per_batch as u64)
                .into_par_iter()
                .map(|e| {
                    let mut rng = stream.stream(base + e);
                    let ep = source.sample(Phase::Train, cfg.way, cfg.train_shot, cfg.query_train, &mut rng)?;
                    episode_loss_and_grads(&pipeline, &ep, lssvm, IamMode::Train, &mut rng)
                })
                .collect();
            let mut loss = 0.0;
            let mut grads: Option<Vec<Matrix>> = None;
            for r in results {
                let (l, g) = r.map_err(|e| match e {
                    e if e.is_numeric() => Error::NonFiniteLoss { epoch, batch, detail: format!("episode failed: {e}") },
                    e => e,
                })?;
                loss += l;
                match &mut grads {
                    None => grads = Some(g),
                    Some(acc) => {
                        for (a, b) in acc.iter_mut().zip(&g) {
                            a.add_assign(b)?;
                        }
                    }
                }
            }
            let inv = 1.0 / cfg.episodes_per_batch as f64;
            loss *= inv;
            let grads: Vec<Matrix> = grads.unwrap_or_default().into_iter().map(|g| g.scale(inv)).collect();
            if !loss.is_finite() || grads.iter().any(|g| !g.is_finite()) {
                let norms: Vec<String> = grads.iter().map(|g| format!("{:.3e}", g.max_abs())).collect();
                return Err(Error::NonFiniteLoss {
                    epoch,
                    batch,
                    detail: format!("loss {loss}, lr {lr}, grad max-abs per tensor [{}]", norms.join(", ")),
                });
            }
            sgd_step(&mut pipeline.tensors_mut(), &grads, &mut state, &cfg.sgd, lr)?;
            let record = LogRecord { epoch, batch, loss, lr };
            on_log(&record);
            log.push(record);
        }
        let acc = validation_accuracy(&pipeline, source, cfg, lssvm)?;
        val_acc.push(acc);
        if acc > best_acc {
            best_acc = acc;
            best = pipeline.clone();
            best_epoch = Some(epoch);
        }
    }
    Ok(TrainReport { best, last: pipeline, log, initial_val_acc, val_acc, best_epoch })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::engine::BackboneParams;
    use crate::episode::SynthSpec;
    use crate::rng::RngState;
    use crate::transduction::iam::iam_init_params;

    fn toy_pipeline(seed: u64) -> Pipeline {
        let mut rng = RngState::from_seed(seed);
        Pipeline {
            backbone: BackboneParams::init(&[8, 12, 8], &mut rng).unwrap(),
            iam: Some(iam_init_params(8, 8, 8, 4, &mut rng).unwrap()),
        }
    }

    fn toy_cfg() -> TrainConfig {
        TrainConfig {
            epochs: 1,
            batches_per_epoch: 50,
            episodes_per_batch: 4,
            val_episodes: 20,
            schedule: LrSchedule { lr_init: 0.05, ..LrSchedule::default() },
            ..TrainConfig::default()
        }
    }

    #[test]
    fn loss_decreases_on_separable_tasks() {
        let source = EpisodeSource::Synthetic(SynthSpec { dim: 8, within_class_std: 0.0, ..SynthSpec::default() });
        let report = train(&toy_cfg(), &source, toy_pipeline(1), &LssvmConfig::default(), |_| {}).unwrap();
        assert_eq!(report.log.len(), 50);
        let head: f64 = report.log[..5].iter().map(|r| r.loss).sum();
        let tail: f64 = report.log[45..].iter().map(|r| r.loss).sum();
        assert!(tail < head, "{head} -> {tail}");
    }

    #[test]
    fn null_update_and_determinism() {
        let source = EpisodeSource::Synthetic(SynthSpec { dim: 8, ..SynthSpec::default() });
        let cfg = TrainConfig {
            batches_per_epoch: 3,
            schedule: LrSchedule { lr_init: 0.0, ..LrSchedule::default() },
            sgd: SgdConfig { weight_decay: 0.0, ..SgdConfig::default() },
            ..toy_cfg()
        };
        let init = toy_pipeline(2);
        let report = train(&cfg, &source, init.clone(), &LssvmConfig::default(), |_| {}).unwrap();
        assert_eq!(report.last.tensors(), init.tensors());

        let cfg = TrainConfig { batches_per_epoch: 4, epochs: 2, ..toy_cfg() };
        let a = train(&cfg, &source, toy_pipeline(3), &LssvmConfig::default(), |_| {}).unwrap();
        let b = train(&cfg, &source, toy_pipeline(3), &LssvmConfig::default(), |_| {}).unwrap();
        assert_eq!(a.log, b.log);
        assert_eq!(a.last.tensors(), b.last.tensors());
        assert_eq!(a.val_acc, b.val_acc);
    }

    #[test]
    fn higher_shot_training_runs() {
        let source = EpisodeSource::Synthetic(SynthSpec { dim: 8, ..SynthSpec::default() });
        let cfg = TrainConfig { train_shot: 7, test_shot: 1, batches_per_epoch: 2, ..toy_cfg() };
        assert!(train(&cfg, &source, toy_pipeline(4), &LssvmConfig::default(), |_| {}).is_ok());
    }

    #[test]
    fn non_finite_loss_aborts() {
        let source = EpisodeSource::Synthetic(SynthSpec { dim: 8, ..SynthSpec::default() });
        let mut p = toy_pipeline(5);
        p.backbone.layers[0].weight[(0, 0)] = 1e300;
        p.backbone.layers[0].weight[(1, 0)] = 1e300;
        let cfg = TrainConfig { val_episodes: 0, ..toy_cfg() };
        let err = train(&cfg, &source, p, &LssvmConfig::default(), |_| {}).unwrap_err();
        assert!(matches!(err, Error::NonFiniteLoss { epoch: 0, batch: 0, .. }), "{err}");
    }
}
