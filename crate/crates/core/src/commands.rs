//! The commands behind the `fsl` binary. Each takes a resolved [`RunConfig`],
//! writes its artifacts under `out_dir` (every one carrying the config) and
//! prints a short human summary to `out`.

use std::fmt::Write as _;
use std::io::Write;
use std::path::{Path, PathBuf};

use crate::baselines::{learner_fit, learner_predict, accuracy, LearnerKind};
use crate::checkpoint::{load_checkpoint, write_checkpoint, Checkpoint};
use crate::config::RunConfig;
use crate::engine::{
    bench_table_csv, bench_table_text, benchmark_timing, evaluate, train, BackboneParams, BenchRow, EpisodeSource,
    EvalOptions, EvalReport, Pipeline, TrainReport,
};
use crate::episode::{load_feature_bank, write_feature_bank, FeatureBank, Phase, SplitSpec, Support};
use crate::error::{Error, Result};
use crate::numerics::{Matrix, Pca2};
use crate::rng::{RngState, SeedStream};
use crate::transduction::iam::{iam_forward, iam_init_params, IamMode};
use crate::transduction::psm::PsmConfig;

const INIT_TAG: u64 = 0x696e_6974;
const VIZ_TAG: u64 = 0x7669_7a30;

pub const BANK_FILE: &str = "bank.fbk";
pub const CHECKPOINT_FILE: &str = "checkpoint.fck";
pub const TRAIN_LOG_FILE: &str = "train.log";
pub const EVAL_REPORT_FILE: &str = "eval_report.txt";
pub const EVAL_CSV_FILE: &str = "eval_episodes.csv";
pub const ABLATION_FILE: &str = "ablation.csv";
pub const PSM_SWEEP_FILE: &str = "psm_sweep.csv";
pub const BENCH_TEXT_FILE: &str = "bench.txt";
pub const BENCH_CSV_FILE: &str = "bench.csv";
pub const VIZ_FILE: &str = "viz.csv";

fn create_out_dir(cfg: &RunConfig) -> Result<&Path> {
    std::fs::create_dir_all(&cfg.out_dir)?;
    Ok(&cfg.out_dir)
}

/// `# `-prefixed config block that starts every text artifact.
fn config_header(cfg: &RunConfig) -> String {
    cfg.to_text_prefixed("# ")
}

/// Bank with its class split (default half train, a quarter val, the rest test),
/// or the synthetic distribution.
pub fn episode_source(cfg: &RunConfig) -> Result<EpisodeSource> {
    let Some(path) = &cfg.bank else {
        return Ok(EpisodeSource::Synthetic(cfg.synth_spec()));
    };
    let bank = load_feature_bank(path)?;
    let n = bank.classes().len();
    let n_train = cfg.bank_train_classes.unwrap_or(n / 2);
    let n_val = cfg.bank_val_classes.unwrap_or(n / 4);
    let split = SplitSpec::partition(bank.classes(), n_train, n_val)?;
    Ok(EpisodeSource::Bank { bank, split })
}

#[derive(Debug, Clone)]
pub struct GenArgs {
    pub classes: usize,
    pub dim: usize,
    pub per_class: usize,
    pub std: f64,
    /// Defaults to `out_dir/bank.fbk`.
    pub output: Option<PathBuf>,
}

#[derive(Debug, Clone)]
pub struct GenOutcome {
    pub path: PathBuf,
    pub classes: usize,
    pub dim: usize,
    pub samples: usize,
}

/// Writes a synthetic FBK1 bank plus a `.cfg` sidecar holding the config
/// (the bank format itself has no room for it).
pub fn cmd_gen(cfg: &RunConfig, args: &GenArgs, out: &mut dyn Write) -> Result<GenOutcome> {
    for (flag, v) in [("--classes", args.classes), ("--dim", args.dim), ("--per-class", args.per_class)] {
        if v == 0 {
            return Err(Error::BadFlag(format!("{flag} must be >= 1")));
        }
    }
    if !(args.std >= 0.0 && args.std.is_finite()) {
        return Err(Error::BadFlag(format!("--std must be a finite value >= 0, got {}", args.std)));
    }
    let mut rng = RngState::from_seed(cfg.seed);
    let bank = FeatureBank::synthetic(args.classes, args.dim, args.per_class, args.std, cfg.synth.class_center_scale, &mut rng)?;
    let path = match &args.output {
        Some(p) => {
            if let Some(parent) = p.parent().filter(|d| !d.as_os_str().is_empty()) {
                std::fs::create_dir_all(parent)?;
            }
            p.clone()
        }
        None => create_out_dir(cfg)?.join(BANK_FILE),
    };
    write_feature_bank(&bank, &path)?;
    let mut sidecar = format!(
        "# gen classes = {} dim = {} per_class = {} std = {}\n",
        args.classes, args.dim, args.per_class, args.std
    );
    sidecar.push_str(&cfg.to_text());
    let mut cfg_path = path.clone().into_os_string();
    cfg_path.push(".cfg");
    std::fs::write(cfg_path, sidecar)?;
    let outcome = GenOutcome { path, classes: args.classes, dim: args.dim, samples: bank.num_samples() };
    writeln!(out, "classes = {} dim = {} samples = {} -> {}", outcome.classes, outcome.dim, outcome.samples, outcome.path.display())?;
    Ok(outcome)
}

/// The untrained pipeline described by `cfg` for inputs of width `input_dim`.
pub fn init_pipeline(cfg: &RunConfig, input_dim: usize) -> Result<Pipeline> {
    let mut rng = SeedStream::new(cfg.seed).derive(INIT_TAG).stream(0);
    let backbone = if cfg.backbone.is_empty() {
        BackboneParams::identity()
    } else {
        if cfg.backbone[0] != input_dim {
            return Err(Error::Config(format!("backbone starts at {} but the data has dim {input_dim}", cfg.backbone[0])));
        }
        BackboneParams::init(&cfg.backbone, &mut rng)?
    };
    let d = backbone.output_dim(input_dim);
    let iam = if cfg.iam {
        let mut p = iam_init_params(d, d, d, cfg.iam_reduction(d), &mut rng)?;
        p.set_dropout_rate(cfg.iam_dropout)?;
        Some(p)
    } else {
        None
    };
    Ok(Pipeline { backbone, iam })
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub checkpoint: PathBuf,
    pub log: PathBuf,
    pub report: TrainReport,
}

/// Meta-trains the configured pipeline and keeps the best-on-validation parameters.
pub fn cmd_train(cfg: &RunConfig, resume: Option<&Path>, out: &mut dyn Write) -> Result<TrainOutcome> {
    if resume.is_some() {
        return Err(Error::BadFlag("--resume is not supported; training always starts from initialization".into()));
    }
    let source = episode_source(cfg)?;
    let init = init_pipeline(cfg, source.input_dim())?;
    if init.tensors().is_empty() {
        return Err(Error::Config("nothing to train: set `backbone` and/or `iam = on`".into()));
    }
    let dir = create_out_dir(cfg)?;
    let mut log = config_header(cfg);
    log.push_str("# epoch batch loss lr\n");
    let report = train(&cfg.train_config(), &source, init, &cfg.lssvm_config(), |r| {
        let _ = writeln!(log, "{r}");
    })?;
    writeln!(out, "initial val_acc = {:.4}", report.initial_val_acc)?;
    for (e, acc) in report.val_acc.iter().enumerate() {
        let _ = writeln!(log, "# epoch {e} val_acc {acc:.6}");
        writeln!(out, "epoch {e} val_acc = {acc:.4}")?;
    }
    let log_path = dir.join(TRAIN_LOG_FILE);
    std::fs::write(&log_path, log)?;
    let ckpt_path = dir.join(CHECKPOINT_FILE);
    write_checkpoint(&Checkpoint { config: cfg.clone(), pipeline: report.best.clone() }, &ckpt_path)?;
    let best = report.best_epoch.map_or_else(|| "init".to_string(), |e| e.to_string());
    writeln!(out, "best epoch = {best} val_acc = {:.4} -> {}", report.best_val_acc(), ckpt_path.display())?;
    Ok(TrainOutcome { checkpoint: ckpt_path, log: log_path, report })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum EvalExtra {
    #[default]
    None,
    /// IAM on/off × PSM off/on.
    Ablation,
    /// Accuracy after every PSM iteration `0..=psm_iters`.
    PsmSweep,
}

#[derive(Debug, Clone, Default)]
pub struct EvalArgs {
    pub checkpoint: Option<PathBuf>,
    pub extra: EvalExtra,
    /// Append timing keys to the report (they are not reproducible).
    pub timings: bool,
}

#[derive(Debug, Clone)]
pub struct AblationRow {
    pub name: String,
    pub iam: bool,
    pub psm_iterations: usize,
    pub mean_acc: f64,
    pub ci95: f64,
}

#[derive(Debug, Clone)]
pub struct EvalOutcome {
    pub report: EvalReport,
    pub ablation: Vec<AblationRow>,
    pub report_path: PathBuf,
    pub csv_path: PathBuf,
}

/// The pipeline to evaluate: the checkpoint's, or the identity when the config needs none.
fn eval_pipeline(cfg: &RunConfig, checkpoint: Option<&Path>, need_iam: bool) -> Result<Pipeline> {
    match checkpoint {
        Some(p) => Ok(load_checkpoint(p)?.pipeline),
        None if need_iam => Err(Error::Config("iam = on needs --checkpoint".into())),
        None if !cfg.backbone.is_empty() => Err(Error::Config("a configured backbone needs --checkpoint".into())),
        None => Ok(Pipeline { backbone: BackboneParams::identity(), iam: None }),
    }
}

fn eval_options(cfg: &RunConfig, iam: bool, psm: PsmConfig) -> EvalOptions {
    EvalOptions {
        learner: cfg.learner_spec(),
        iam,
        psm,
        way: cfg.eval.shape.way,
        shot: cfg.eval.shape.shot,
        query: cfg.eval.shape.query,
        episodes: cfg.eval.episodes,
        phase: Phase::Test,
        seed: cfg.seed,
    }
}

fn row_name(learner: LearnerKind, iam: bool, psm: bool) -> String {
    let mut s = learner.name().to_uppercase();
    if iam {
        s.push_str("+IAM");
    }
    if psm {
        s.push_str("+PSM");
    }
    s
}

pub fn cmd_eval(cfg: &RunConfig, args: &EvalArgs, out: &mut dyn Write) -> Result<EvalOutcome> {
    let need_iam = cfg.iam || args.extra == EvalExtra::Ablation;
    let pipeline = eval_pipeline(cfg, args.checkpoint.as_deref(), need_iam)?;
    if need_iam && pipeline.iam.is_none() {
        return Err(Error::Config("the checkpoint has no IAM parameters".into()));
    }
    let source = episode_source(cfg)?;
    let dir = create_out_dir(cfg)?.to_path_buf();
    let report = evaluate(&pipeline, &source, &eval_options(cfg, cfg.iam, cfg.psm))?;

    writeln!(out, "{}", report.summary_line())?;
    write!(out, "{}", report.render(args.timings))?;
    let report_path = dir.join(EVAL_REPORT_FILE);
    std::fs::write(&report_path, format!("{}{}", config_header(cfg), report.render(args.timings)))?;
    let csv_path = dir.join(EVAL_CSV_FILE);
    std::fs::write(&csv_path, format!("{}{}", config_header(cfg), report.per_episode_csv()))?;

    let mut ablation = Vec::new();
    match args.extra {
        EvalExtra::None => {}
        EvalExtra::Ablation => {
            let k = cfg.psm.iterations.max(1);
            let mut csv = config_header(cfg);
            csv.push_str("model,iam,psm_iters,mean_acc,ci95\n");
            writeln!(out, "{:<18} {:>8} {:>8}", "model", "acc", "ci95")?;
            for iam in [false, true] {
                for psm_on in [false, true] {
                    let psm = if psm_on { PsmConfig { iterations: k, ..cfg.psm } } else { PsmConfig::off() };
                    let r = evaluate(&pipeline, &source, &eval_options(cfg, iam, psm))?;
                    let row = AblationRow {
                        name: row_name(cfg.learner, iam, psm_on),
                        iam,
                        psm_iterations: psm.iterations,
                        mean_acc: r.mean_acc,
                        ci95: r.ci95,
                    };
                    writeln!(out, "{:<18} {:>8.2} {:>8.2}", row.name, 100.0 * row.mean_acc, 100.0 * row.ci95)?;
                    let _ = writeln!(csv, "{},{},{},{:.6},{:.6}", row.name, iam, row.psm_iterations, row.mean_acc, row.ci95);
                    ablation.push(row);
                }
            }
            std::fs::write(dir.join(ABLATION_FILE), csv)?;
        }
        EvalExtra::PsmSweep => {
            let mut csv = config_header(cfg);
            csv.push_str("k,mean_acc\n");
            for (k, acc) in report.psm_trace_acc.iter().enumerate() {
                writeln!(out, "k = {k:>2} acc = {:.2}", 100.0 * acc)?;
                let _ = writeln!(csv, "{k},{acc:.6}");
            }
            std::fs::write(dir.join(PSM_SWEEP_FILE), csv)?;
        }
    }
    Ok(EvalOutcome { report, ablation, report_path, csv_path })
}

pub fn cmd_bench(cfg: &RunConfig, out: &mut dyn Write) -> Result<Vec<BenchRow>> {
    let specs: Vec<_> = cfg.bench.learners.iter().map(|&k| cfg.learner_spec_of(k)).collect();
    let rows = benchmark_timing(&specs, cfg.bench.episodes, &cfg.bench.shape, &cfg.synth_spec(), cfg.seed)?;
    let dir = create_out_dir(cfg)?;
    let text = bench_table_text(&rows);
    write!(out, "{text}")?;
    std::fs::write(dir.join(BENCH_TEXT_FILE), format!("{}{text}", config_header(cfg)))?;
    std::fs::write(dir.join(BENCH_CSV_FILE), format!("{}{}", config_header(cfg), bench_table_csv(&rows)))?;
    Ok(rows)
}

#[derive(Debug, Clone)]
pub struct VizOutcome {
    pub path: PathBuf,
    /// Rows in `role, class, pc1, pc2` order: supports, adjusted supports, queries.
    pub rows: Vec<(&'static str, usize, f64, f64)>,
    pub acc_before: f64,
    pub acc_after: f64,
    /// Mean distance between a support feature and its adjusted version.
    pub mean_displacement: f64,
}

/// Projects one episode's supports, IAM-adjusted supports and queries onto
/// the two leading principal axes of their union.
pub fn cmd_viz(cfg: &RunConfig, checkpoint: &Path, out: &mut dyn Write) -> Result<VizOutcome> {
    let pipeline = load_checkpoint(checkpoint)?.pipeline;
    let iam = pipeline.iam.as_ref().ok_or_else(|| Error::Config("viz needs a checkpoint with IAM parameters".into()))?;
    let source = episode_source(cfg)?;
    pipeline.validate(source.input_dim())?;
    let mut rng = SeedStream::new(cfg.seed).derive(VIZ_TAG).stream(0);
    let ep = source.sample(Phase::Test, cfg.viz.way, cfg.viz.shot, cfg.viz.query, &mut rng)?;
    let truth = ep.query_y.clone().ok_or_else(|| Error::InvalidArgument("viz needs query labels".into()))?;
    let (fs, fq) = pipeline.features(&ep, false, IamMode::Eval, &mut rng)?;
    let (adjusted, _) = iam_forward(iam, &fs, &ep.support_y, &fq, IamMode::Eval, &mut rng)?;

    let spec = cfg.learner_spec();
    let acc_of = |support: &Matrix| -> Result<f64> {
        let model = learner_fit(&spec, Support::new(support, &ep.support_y, ep.way)?)?;
        Ok(accuracy(&learner_predict(&spec, &model, &fq)?.0, &truth))
    };
    let (acc_before, acc_after) = (acc_of(&fs)?, acc_of(&adjusted)?);
    let mean_displacement = fs
        .row_iter()
        .zip(adjusted.row_iter())
        .map(|(a, b)| crate::numerics::squared_distance(a, b).sqrt())
        .sum::<f64>()
        / fs.rows() as f64;

    let union = fs.vstack(&adjusted)?.vstack(&fq)?;
    let pca = Pca2::fit(&union)?;
    let proj = pca.transform(&union)?;
    let ns = fs.rows();
    let labels = ep.support_y.iter().chain(&ep.support_y).chain(&truth);
    let rows: Vec<(&'static str, usize, f64, f64)> = labels
        .enumerate()
        .map(|(i, &c)| {
            let role = if i < ns {
                "support"
            } else if i < 2 * ns {
                "adjusted"
            } else {
                "query"
            };
            (role, c, proj[(i, 0)], proj[(i, 1)])
        })
        .collect();

    let mut csv = config_header(cfg);
    csv.push_str("role,class,pc1,pc2\n");
    for (role, c, x, y) in &rows {
        let _ = writeln!(csv, "{role},{c},{x:.6},{y:.6}");
    }
    let _ = writeln!(
        csv,
        "# acc_before = {acc_before:.6} acc_after = {acc_after:.6} mean_displacement = {mean_displacement:.6}"
    );
    let path = create_out_dir(cfg)?.join(VIZ_FILE);
    std::fs::write(&path, csv)?;
    writeln!(
        out,
        "{} rows, acc before {:.2} after {:.2}, mean displacement {:.4} -> {}",
        rows.len(),
        100.0 * acc_before,
        100.0 * acc_after,
        mean_displacement,
        path.display()
    )?;
    Ok(VizOutcome { path, rows, acc_before, acc_after, mean_displacement })
}
