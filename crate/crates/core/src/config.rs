//! Run configuration: a sectioned `key = value` document.
//!
//! ```text
//! # comment
//! gamma = 0.1          # bare keys resolve when the name is unique
//! [eval]
//! episodes = 1000
//! ```
//!
//! Every key has a default; [`RunConfig::to_text`] writes the fully resolved
//! document back out so artifacts can carry it.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use crate::baselines::{BaseLearnerSpec, LearnerKind, DEFAULT_RIDGE_LAMBDA};
use crate::coding::{CodingScheme, DecodeMode};
use crate::engine::{BenchShape, LrSchedule, SgdConfig, TrainConfig};
use crate::episode::SynthSpec;
use crate::error::{Error, Result};
use crate::lssvm::{parse_kernel, KernelSpec, LssvmConfig};
use crate::transduction::iam::DEFAULT_IAM_DROPOUT;
use crate::transduction::psm::PsmConfig;

/// Sections and the keys each one accepts, in serialization order.
pub const SECTIONS: &[(&str, &[&str])] = &[
    ("run", &["seed", "threads", "out_dir", "bank", "bank_train_classes", "bank_val_classes"]),
    (
        "learner",
        &["learner", "ridge_lambda", "gamma", "kernel", "rbf_sigma", "decode", "bias_stationarity_scale", "coding", "coding_seed"],
    ),
    ("transduction", &["iam", "iam_r", "iam_dropout", "psm_iters", "psm_accumulate"]),
    (
        "train",
        &[
            "backbone",
            "way",
            "train_shot",
            "test_shot",
            "query_train",
            "query_test",
            "epochs",
            "batches_per_epoch",
            "episodes_per_batch",
            "lr_init",
            "lr_milestones",
            "lr_factors",
            "momentum",
            "weight_decay",
            "nesterov",
            "val_shot",
            "val_episodes",
        ],
    ),
    ("synth", &["dim", "class_center_scale", "within_class_std", "support_noise_factor"]),
    ("eval", &["way", "shot", "query", "episodes"]),
    ("bench", &["episodes", "learners", "way", "shot", "query", "dim"]),
    ("viz", &["way", "shot", "query"]),
];

pub const DEFAULT_RBF_SIGMA: f64 = 1.0;

/// Feature dims up to this use reduction 8 when `iam_r = auto`, larger ones 16.
pub const LOW_DIM_LIMIT: usize = 64;

#[derive(Debug, Clone, PartialEq)]
pub struct EpisodeShape {
    pub way: usize,
    pub shot: usize,
    pub query: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalSection {
    pub shape: EpisodeShape,
    pub episodes: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BenchSection {
    pub episodes: usize,
    pub learners: Vec<LearnerKind>,
    pub shape: BenchShape,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub seed: u64,
    /// Worker threads; 0 lets the pool decide.
    pub threads: usize,
    pub out_dir: PathBuf,
    /// Feature bank file; synthetic tasks when absent.
    pub bank: Option<PathBuf>,
    /// Class split of the bank; `None` means 60% / 20% / rest.
    pub bank_train_classes: Option<usize>,
    pub bank_val_classes: Option<usize>,

    pub learner: LearnerKind,
    pub ridge_lambda: f64,
    pub gamma: f64,
    pub kernel: KernelSpec,
    pub rbf_sigma: f64,
    pub decode: DecodeMode,
    pub bias_stationarity_scale: f64,
    pub coding: CodingScheme,
    pub coding_seed: u64,

    pub iam: bool,
    /// `None` picks by feature dim, see [`RunConfig::iam_reduction`].
    pub iam_r: Option<usize>,
    pub iam_dropout: f64,
    pub psm: PsmConfig,

    /// MLP widths including the input dim; empty for the identity.
    pub backbone: Vec<usize>,
    /// Training settings; the seed comes from `seed`.
    pub train: TrainConfig,
    /// Synthetic task distribution; the seed comes from `seed`.
    pub synth: SynthSpec,
    pub eval: EvalSection,
    pub bench: BenchSection,
    pub viz: EpisodeShape,
}

impl Default for RunConfig {
    fn default() -> Self {
        let lssvm = LssvmConfig::default();
        RunConfig {
            seed: 42,
            threads: 0,
            out_dir: PathBuf::from("out"),
            bank: None,
            bank_train_classes: None,
            bank_val_classes: None,
            learner: LearnerKind::Lssvm,
            ridge_lambda: DEFAULT_RIDGE_LAMBDA,
            gamma: lssvm.gamma,
            kernel: lssvm.kernel,
            rbf_sigma: DEFAULT_RBF_SIGMA,
            decode: lssvm.decode,
            bias_stationarity_scale: lssvm.bias_stationarity_scale,
            coding: lssvm.coding,
            coding_seed: lssvm.coding_seed,
            iam: false,
            iam_r: None,
            iam_dropout: DEFAULT_IAM_DROPOUT,
            psm: PsmConfig::default(),
            backbone: Vec::new(),
            train: TrainConfig::default(),
            synth: SynthSpec::default(),
            eval: EvalSection { shape: EpisodeShape { way: 5, shot: 1, query: 15 }, episodes: 1000 },
            bench: BenchSection {
                episodes: 10_000,
                learners: vec![LearnerKind::PrototypeNn, LearnerKind::Ridge, LearnerKind::Lssvm],
                shape: BenchShape::default(),
            },
            viz: EpisodeShape { way: 5, shot: 1, query: 15 },
        }
    }
}

fn bad_value(key: &str, expected: &str, value: &str) -> Error {
    Error::Config(format!("`{key}`: expected {expected}, got `{value}`"))
}

fn parse_num<T: FromStr>(key: &str, value: &str, expected: &str) -> Result<T> {
    value.parse().map_err(|_| bad_value(key, expected, value))
}

fn parse_real(key: &str, value: &str) -> Result<f64> {
    let v: f64 = parse_num(key, value, "a real number")?;
    if !v.is_finite() {
        return Err(bad_value(key, "a finite real number", value));
    }
    Ok(v)
}

fn parse_bool(key: &str, value: &str) -> Result<bool> {
    match value {
        "on" | "true" | "yes" | "1" => Ok(true),
        "off" | "false" | "no" | "0" => Ok(false),
        _ => Err(bad_value(key, "on|off", value)),
    }
}

fn parse_list<T: FromStr>(key: &str, value: &str, expected: &str) -> Result<Vec<T>> {
    if value.is_empty() {
        return Ok(Vec::new());
    }
    value.split(',').map(|s| parse_num(key, s.trim(), expected)).collect()
}

fn parse_opt_count(key: &str, value: &str) -> Result<Option<usize>> {
    if value == "auto" {
        return Ok(None);
    }
    parse_num(key, value, "a count or `auto`").map(Some)
}

fn join<T: ToString>(items: &[T]) -> String {
    items.iter().map(T::to_string).collect::<Vec<_>>().join(",")
}

fn opt_count(v: Option<usize>) -> String {
    v.map_or_else(|| "auto".to_string(), |n| n.to_string())
}

fn on_off(b: bool) -> &'static str {
    if b {
        "on"
    } else {
        "off"
    }
}

/// Resolves a key as written (`name` or `section.name`) inside the current
/// section, if any.
fn resolve_key(section: Option<&str>, key: &str) -> Result<(&'static str, &'static str)> {
    let (sec, name) = match key.split_once('.') {
        Some((s, n)) => (Some(s), n),
        None => (section, key),
    };
    let matches: Vec<(&'static str, &'static str)> = SECTIONS
        .iter()
        .filter(|(s, _)| sec.is_none_or(|want| want == *s))
        .flat_map(|(s, keys)| keys.iter().filter(|k| **k == name).map(move |k| (*s, *k)))
        .collect();
    match matches.as_slice() {
        [one] => Ok(*one),
        [] => Err(Error::UnknownKey(key.to_string())),
        many => {
            let options: Vec<String> = many.iter().map(|(s, k)| format!("{s}.{k}")).collect();
            Err(Error::Config(format!("ambiguous key `{key}`: write one of {}", options.join(", "))))
        }
    }
}

impl RunConfig {
    /// Parses a document on top of the defaults.
    pub fn parse_str(text: &str) -> Result<Self> {
        let mut cfg = RunConfig::default();
        cfg.apply_text(text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    fn apply_text(&mut self, text: &str) -> Result<()> {
        let mut section: Option<&str> = None;
        for (n, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let with_line = |e: Error| match e {
                Error::Config(m) => Error::Config(format!("line {}: {m}", n + 1)),
                e => e,
            };
            if let Some(name) = line.strip_prefix('[') {
                let name = name
                    .strip_suffix(']')
                    .ok_or_else(|| with_line(Error::Config(format!("malformed section header `{line}`"))))?
                    .trim();
                let known = SECTIONS.iter().find(|(s, _)| *s == name);
                section = Some(known.ok_or_else(|| with_line(Error::Config(format!("unknown section [{name}]"))))?.0);
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| with_line(Error::Config(format!("expected `key = value`, got `{line}`"))))?;
            let (sec, name) = resolve_key(section, key.trim()).map_err(with_line)?;
            self.set(sec, name, value.trim()).map_err(with_line)?;
        }
        Ok(())
    }

    /// Applies one `key=value` override; the key is bare or `section.key`.
    pub fn apply_override(&mut self, key: &str, value: &str) -> Result<()> {
        let (sec, name) = resolve_key(None, key.trim())?;
        self.set(sec, name, value.trim())
    }

    /// Sets one key. `section` and `key` must come from [`SECTIONS`].
    pub fn set(&mut self, section: &str, key: &str, v: &str) -> Result<()> {
        let count = |v: &str| parse_num::<usize>(key, v, "a nonnegative integer");
        match (section, key) {
            ("run", "seed") => self.seed = parse_num(key, v, "an unsigned 64-bit integer")?,
            ("run", "threads") => self.threads = count(v)?,
            ("run", "out_dir") => self.out_dir = PathBuf::from(v),
            ("run", "bank") => self.bank = (!v.is_empty()).then(|| PathBuf::from(v)),
            ("run", "bank_train_classes") => self.bank_train_classes = parse_opt_count(key, v)?,
            ("run", "bank_val_classes") => self.bank_val_classes = parse_opt_count(key, v)?,

            ("learner", "learner") => self.learner = v.parse()?,
            ("learner", "ridge_lambda") => self.ridge_lambda = parse_real(key, v)?,
            ("learner", "gamma") => self.gamma = parse_real(key, v)?,
            ("learner", "kernel") => self.kernel = parse_kernel(v, self.rbf_sigma)?,
            ("learner", "rbf_sigma") => {
                self.rbf_sigma = parse_real(key, v)?;
                if let KernelSpec::Rbf { sigma } = &mut self.kernel {
                    *sigma = self.rbf_sigma;
                }
            }
            ("learner", "decode") => self.decode = v.parse()?,
            ("learner", "bias_stationarity_scale") => self.bias_stationarity_scale = parse_real(key, v)?,
            ("learner", "coding") => self.coding = v.parse()?,
            ("learner", "coding_seed") => self.coding_seed = parse_num(key, v, "an unsigned 64-bit integer")?,

            ("transduction", "iam") => self.iam = parse_bool(key, v)?,
            ("transduction", "iam_r") => self.iam_r = parse_opt_count(key, v)?,
            ("transduction", "iam_dropout") => self.iam_dropout = parse_real(key, v)?,
            ("transduction", "psm_iters") => self.psm.iterations = count(v)?,
            ("transduction", "psm_accumulate") => self.psm.accumulate = parse_bool(key, v)?,

            ("train", "backbone") => self.backbone = parse_list(key, v, "comma-separated widths")?,
            ("train", "way") => self.train.way = count(v)?,
            ("train", "train_shot") => self.train.train_shot = count(v)?,
            ("train", "test_shot") => self.train.test_shot = count(v)?,
            ("train", "query_train") => self.train.query_train = count(v)?,
            ("train", "query_test") => self.train.query_test = count(v)?,
            ("train", "epochs") => self.train.epochs = count(v)?,
            ("train", "batches_per_epoch") => self.train.batches_per_epoch = count(v)?,
            ("train", "episodes_per_batch") => self.train.episodes_per_batch = count(v)?,
            ("train", "lr_init") => self.train.schedule.lr_init = parse_real(key, v)?,
            ("train", "lr_milestones") => self.train.schedule.milestones = parse_list(key, v, "comma-separated epochs")?,
            ("train", "lr_factors") => self.train.schedule.factors = parse_list(key, v, "comma-separated reals")?,
            ("train", "momentum") => self.train.sgd.momentum = parse_real(key, v)?,
            ("train", "weight_decay") => self.train.sgd.weight_decay = parse_real(key, v)?,
            ("train", "nesterov") => self.train.sgd.nesterov = parse_bool(key, v)?,
            ("train", "val_shot") => self.train.val_shot = count(v)?,
            ("train", "val_episodes") => self.train.val_episodes = count(v)?,

            ("synth", "dim") => self.synth.dim = count(v)?,
            ("synth", "class_center_scale") => self.synth.class_center_scale = parse_real(key, v)?,
            ("synth", "within_class_std") => self.synth.within_class_std = parse_real(key, v)?,
            ("synth", "support_noise_factor") => self.synth.support_noise_factor = parse_real(key, v)?,

            ("eval", "way") => self.eval.shape.way = count(v)?,
            ("eval", "shot") => self.eval.shape.shot = count(v)?,
            ("eval", "query") => self.eval.shape.query = count(v)?,
            ("eval", "episodes") => self.eval.episodes = count(v)?,

            ("bench", "episodes") => self.bench.episodes = count(v)?,
            ("bench", "learners") => self.bench.learners = parse_list(key, v, "nn|rr|lssvm list")?,
            ("bench", "way") => self.bench.shape.way = count(v)?,
            ("bench", "shot") => self.bench.shape.shot = count(v)?,
            ("bench", "query") => self.bench.shape.query = count(v)?,
            ("bench", "dim") => self.bench.shape.dim = count(v)?,

            ("viz", "way") => self.viz.way = count(v)?,
            ("viz", "shot") => self.viz.shot = count(v)?,
            ("viz", "query") => self.viz.query = count(v)?,
            _ => return Err(Error::UnknownKey(format!("{section}.{key}"))),
        }
        Ok(())
    }

    /// The value of one key as it is serialized.
    pub fn get(&self, section: &str, key: &str) -> Result<String> {
        let s = match (section, key) {
            ("run", "seed") => self.seed.to_string(),
            ("run", "threads") => self.threads.to_string(),
            ("run", "out_dir") => self.out_dir.display().to_string(),
            ("run", "bank") => self.bank.as_ref().map(|p| p.display().to_string()).unwrap_or_default(),
            ("run", "bank_train_classes") => opt_count(self.bank_train_classes),
            ("run", "bank_val_classes") => opt_count(self.bank_val_classes),

            ("learner", "learner") => self.learner.to_string(),
            ("learner", "ridge_lambda") => self.ridge_lambda.to_string(),
            ("learner", "gamma") => self.gamma.to_string(),
            ("learner", "kernel") => self.kernel.name().to_string(),
            ("learner", "rbf_sigma") => self.rbf_sigma.to_string(),
            ("learner", "decode") => self.decode.to_string(),
            ("learner", "bias_stationarity_scale") => self.bias_stationarity_scale.to_string(),
            ("learner", "coding") => self.coding.to_string(),
            ("learner", "coding_seed") => self.coding_seed.to_string(),

            ("transduction", "iam") => on_off(self.iam).to_string(),
            ("transduction", "iam_r") => opt_count(self.iam_r),
            ("transduction", "iam_dropout") => self.iam_dropout.to_string(),
            ("transduction", "psm_iters") => self.psm.iterations.to_string(),
            ("transduction", "psm_accumulate") => on_off(self.psm.accumulate).to_string(),

            ("train", "backbone") => join(&self.backbone),
            ("train", "way") => self.train.way.to_string(),
            ("train", "train_shot") => self.train.train_shot.to_string(),
            ("train", "test_shot") => self.train.test_shot.to_string(),
            ("train", "query_train") => self.train.query_train.to_string(),
            ("train", "query_test") => self.train.query_test.to_string(),
            ("train", "epochs") => self.train.epochs.to_string(),
            ("train", "batches_per_epoch") => self.train.batches_per_epoch.to_string(),
            ("train", "episodes_per_batch") => self.train.episodes_per_batch.to_string(),
            ("train", "lr_init") => self.train.schedule.lr_init.to_string(),
            ("train", "lr_milestones") => join(&self.train.schedule.milestones),
            ("train", "lr_factors") => join(&self.train.schedule.factors),
            ("train", "momentum") => self.train.sgd.momentum.to_string(),
            ("train", "weight_decay") => self.train.sgd.weight_decay.to_string(),
            ("train", "nesterov") => on_off(self.train.sgd.nesterov).to_string(),
            ("train", "val_shot") => self.train.val_shot.to_string(),
            ("train", "val_episodes") => self.train.val_episodes.to_string(),

            ("synth", "dim") => self.synth.dim.to_string(),
            ("synth", "class_center_scale") => self.synth.class_center_scale.to_string(),
            ("synth", "within_class_std") => self.synth.within_class_std.to_string(),
            ("synth", "support_noise_factor") => self.synth.support_noise_factor.to_string(),

            ("eval", "way") => self.eval.shape.way.to_string(),
            ("eval", "shot") => self.eval.shape.shot.to_string(),
            ("eval", "query") => self.eval.shape.query.to_string(),
            ("eval", "episodes") => self.eval.episodes.to_string(),

            ("bench", "episodes") => self.bench.episodes.to_string(),
            ("bench", "learners") => join(&self.bench.learners),
            ("bench", "way") => self.bench.shape.way.to_string(),
            ("bench", "shot") => self.bench.shape.shot.to_string(),
            ("bench", "query") => self.bench.shape.query.to_string(),
            ("bench", "dim") => self.bench.shape.dim.to_string(),

            ("viz", "way") => self.viz.way.to_string(),
            ("viz", "shot") => self.viz.shot.to_string(),
            ("viz", "query") => self.viz.query.to_string(),
            _ => return Err(Error::UnknownKey(format!("{section}.{key}"))),
        };
        Ok(s)
    }

    /// The full resolved document; parses back to an equal config.
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        for (i, (section, keys)) in SECTIONS.iter().enumerate() {
            if i > 0 {
                out.push('\n');
            }
            let _ = writeln!(out, "[{section}]");
            for key in *keys {
                let value = self.get(section, key).expect("every listed key has a getter");
                let _ = writeln!(out, "{key} = {value}");
            }
        }
        out
    }

    /// [`Self::to_text`] with every line prefixed by `prefix`, for embedding in other files.
    pub fn to_text_prefixed(&self, prefix: &str) -> String {
        self.to_text().lines().map(|l| format!("{prefix}{l}\n")).collect()
    }

    pub fn validate(&self) -> Result<()> {
        self.lssvm_config().validate()?;
        self.train_config().validate()?;
        self.synth_spec().validate()?;
        if !(self.ridge_lambda > 0.0) {
            return Err(Error::Config("ridge_lambda must be > 0".into()));
        }
        if !(0.0..1.0).contains(&self.iam_dropout) {
            return Err(Error::Config("iam_dropout must be in [0, 1)".into()));
        }
        if self.iam_r == Some(0) {
            return Err(Error::Config("iam_r must be >= 1".into()));
        }
        if self.backbone.len() == 1 || self.backbone.contains(&0) {
            return Err(Error::Config("backbone needs at least two positive widths (or none)".into()));
        }
        for (name, shape) in [("eval", &self.eval.shape), ("viz", &self.viz)] {
            if shape.way < 2 || shape.shot == 0 || shape.query == 0 {
                return Err(Error::Config(format!("{name}: way >= 2, shot >= 1 and query >= 1 required")));
            }
        }
        let b = &self.bench.shape;
        if b.way < 2 || b.shot == 0 || b.query == 0 || b.dim == 0 {
            return Err(Error::Config("bench: way >= 2, shot, query and dim >= 1 required".into()));
        }
        if self.bench.learners.is_empty() {
            return Err(Error::Config("bench.learners is empty".into()));
        }
        Ok(())
    }

    pub fn lssvm_config(&self) -> LssvmConfig {
        LssvmConfig {
            gamma: self.gamma,
            kernel: self.kernel,
            coding: self.coding,
            coding_seed: self.coding_seed,
            decode: self.decode,
            bias_stationarity_scale: self.bias_stationarity_scale,
        }
    }

    pub fn learner_spec_of(&self, kind: LearnerKind) -> BaseLearnerSpec {
        match kind {
            LearnerKind::PrototypeNn => BaseLearnerSpec::PrototypeNn,
            LearnerKind::Ridge => BaseLearnerSpec::Ridge { lambda: self.ridge_lambda },
            LearnerKind::Lssvm => BaseLearnerSpec::Lssvm(self.lssvm_config()),
        }
    }

    pub fn learner_spec(&self) -> BaseLearnerSpec {
        self.learner_spec_of(self.learner)
    }

    pub fn train_config(&self) -> TrainConfig {
        TrainConfig { seed: self.seed, ..self.train.clone() }
    }

    pub fn synth_spec(&self) -> SynthSpec {
        SynthSpec { seed: self.seed, ..self.synth }
    }

    pub fn sgd(&self) -> SgdConfig {
        self.train.sgd
    }

    pub fn schedule(&self) -> &LrSchedule {
        &self.train.schedule
    }

    /// The IAM bottleneck reduction for features of width `feature_dim`.
    pub fn iam_reduction(&self, feature_dim: usize) -> usize {
        self.iam_r.unwrap_or(if feature_dim <= LOW_DIM_LIMIT { 8 } else { 16 })
    }
}

/// Reads `path` (if any), applies `overrides` in order and validates.
pub fn parse_config(path: Option<&Path>, overrides: &[(String, String)]) -> Result<RunConfig> {
    let mut cfg = RunConfig::default();
    if let Some(p) = path {
        let text = std::fs::read_to_string(p)?;
        cfg.apply_text(&text)?;
    }
    for (k, v) in overrides {
        cfg.apply_override(k, v)?;
    }
    cfg.validate()?;
    Ok(cfg)
}
