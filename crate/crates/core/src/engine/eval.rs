use std::fmt::Write as _;
use std::time::Instant;

use rayon::prelude::*;

use super::{EpisodeSource, Pipeline};
use crate::baselines::{accuracy, learner_fit, learner_predict, BaseLearnerSpec, LearnerKind};
use crate::episode::{sample_synthetic_episode, Episode, Phase, Support, SynthSpec};
use crate::error::{Error, Result};
use crate::rng::SeedStream;
use crate::transduction::iam::IamMode;
use crate::transduction::psm::{psm_iterate, PsmConfig};

/// Normal-approximation half width multiplier.
pub const CI95_Z: f64 = 1.96;

/// Mean and `1.96·σ/√n` with the population standard deviation.
pub fn mean_ci95(values: &[f64]) -> (f64, f64) {
    if values.is_empty() {
        return (0.0, 0.0);
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
    (mean, CI95_Z * var.sqrt() / n.sqrt())
}

#[derive(Debug, Clone)]
pub struct EvalOptions {
    pub learner: BaseLearnerSpec,
    pub iam: bool,
    pub psm: PsmConfig,
    pub way: usize,
    pub shot: usize,
    pub query: usize,
    pub episodes: usize,
    pub phase: Phase,
    pub seed: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct TimeSummary {
    pub mean: f64,
    pub median: f64,
    pub min: f64,
    pub max: f64,
}

impl TimeSummary {
    pub fn of(values: &[f64]) -> Self {
        if values.is_empty() {
            return Self::default();
        }
        let mut sorted = values.to_vec();
        sorted.sort_by(f64::total_cmp);
        let n = sorted.len();
        let median = if n % 2 == 1 { sorted[n / 2] } else { 0.5 * (sorted[n / 2 - 1] + sorted[n / 2]) };
        TimeSummary { mean: sorted.iter().sum::<f64>() / n as f64, median, min: sorted[0], max: sorted[n - 1] }
    }
}

#[derive(Debug, Clone)]
pub struct EvalReport {
    pub learner: LearnerKind,
    pub iam: bool,
    pub psm_iterations: usize,
    pub episodes: usize,
    pub per_episode_acc: Vec<f64>,
    pub mean_acc: f64,
    pub ci95: f64,
    /// Mean accuracy after each pseudo-support iteration, index 0 being the plain learner.
    pub psm_trace_acc: Vec<f64>,
    pub wall_clock_total_s: f64,
    pub fit_time_us: TimeSummary,
}

impl EvalReport {
    /// `mean ± ci95` in percent.
    pub fn summary_line(&self) -> String {
        format!("{:.2} ± {:.2}", 100.0 * self.mean_acc, 100.0 * self.ci95)
    }

    /// `key = value` record; timing keys come last and only when asked for.
    pub fn render(&self, with_timings: bool) -> String {
        let mut s = String::new();
        let trace: Vec<String> = self.psm_trace_acc.iter().map(|a| format!("{a:.6}")).collect();
        let _ = writeln!(s, "learner = {}", self.learner);
        let _ = writeln!(s, "iam = {}", if self.iam { "on" } else { "off" });
        let _ = writeln!(s, "psm_iters = {}", self.psm_iterations);
        let _ = writeln!(s, "episodes = {}", self.episodes);
        let _ = writeln!(s, "mean_acc = {:.6}", self.mean_acc);
        let _ = writeln!(s, "ci95 = {:.6}", self.ci95);
        let _ = writeln!(s, "psm_trace_acc = {}", trace.join(","));
        if with_timings {
            let t = &self.fit_time_us;
            let _ = writeln!(s, "wall_clock_total_s = {:.6}", self.wall_clock_total_s);
            let _ = writeln!(s, "fit_time_us_mean = {:.3}", t.mean);
            let _ = writeln!(s, "fit_time_us_median = {:.3}", t.median);
            let _ = writeln!(s, "fit_time_us_min = {:.3}", t.min);
            let _ = writeln!(s, "fit_time_us_max = {:.3}", t.max);
        }
        s
    }

    pub fn per_episode_csv(&self) -> String {
        let mut s = String::from("episode,accuracy\n");
        for (i, a) in self.per_episode_acc.iter().enumerate() {
            let _ = writeln!(s, "{i},{a:.6}");
        }
        s
    }
}

/// Evaluates `opts.episodes` seeded episodes in parallel; episode `e` depends
/// only on `(opts.seed, e)`, so results do not depend on the thread count.
pub fn evaluate(pipeline: &Pipeline, source: &EpisodeSource, opts: &EvalOptions) -> Result<EvalReport> {
    if opts.episodes == 0 {
        return Err(Error::InvalidArgument("evaluation needs at least one episode".into()));
    }
    if opts.iam && pipeline.iam.is_none() {
        return Err(Error::Config("iam = on needs a model with IAM parameters".into()));
    }
    pipeline.validate(source.input_dim())?;
    let stream = SeedStream::new(opts.seed);
    let start = Instant::now();
    let per: Vec<Result<(f64, f64, Vec<f64>)>> = (0..opts.episodes as u64)
        .into_par_iter()
        .map(|e| {
            let mut rng = stream.stream(e);
            let ep = source.sample(opts.phase, opts.way, opts.shot, opts.query, &mut rng)?;
            let truth = ep.query_y.as_deref().ok_or_else(|| Error::InvalidArgument("evaluation needs query labels".into()))?;
            let (fs, fq) = pipeline.features(&ep, opts.iam, IamMode::Eval, &mut rng)?;
            let t0 = Instant::now();
            let out = psm_iterate(&opts.learner, Support::new(&fs, &ep.support_y, ep.way)?, &fq, &opts.psm)?;
            let us = t0.elapsed().as_secs_f64() * 1e6;
            let trace = out.trace.iter().map(|t| accuracy(t, truth)).collect();
            Ok((accuracy(&out.predictions, truth), us, trace))
        })
        .collect();
    let wall = start.elapsed().as_secs_f64();
    let per = per.into_iter().collect::<Result<Vec<_>>>()?;
    let accs: Vec<f64> = per.iter().map(|p| p.0).collect();
    let times: Vec<f64> = per.iter().map(|p| p.1).collect();
    let iters = opts.psm.iterations + 1;
    let psm_trace_acc = (0..iters)
        .map(|t| per.iter().map(|p| p.2[t]).sum::<f64>() / per.len() as f64)
        .collect();
    let (mean_acc, ci95) = mean_ci95(&accs);
    Ok(EvalReport {
        learner: opts.learner.kind(),
        iam: opts.iam,
        psm_iterations: opts.psm.iterations,
        episodes: opts.episodes,
        per_episode_acc: accs,
        mean_acc,
        ci95,
        psm_trace_acc,
        wall_clock_total_s: wall,
        fit_time_us: TimeSummary::of(&times),
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BenchShape {
    pub way: usize,
    pub shot: usize,
    pub query: usize,
    pub dim: usize,
}

impl Default for BenchShape {
    fn default() -> Self {
        BenchShape { way: 5, shot: 1, query: 15, dim: 64 }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BenchRow {
    pub learner: LearnerKind,
    pub acc: f64,
    pub ci95: f64,
    pub total_s: f64,
    pub per_episode_us: f64,
}

pub const MIN_BENCH_EPISODES: usize = 100;

/// Times fit + predict of each learner over the same pre-sampled episodes.
///
/// Episodes are sampled up front (in parallel); the timed loop runs on one
/// thread so the per-episode figures reflect a single core.
pub fn benchmark_timing(
    specs: &[BaseLearnerSpec],
    episodes: usize,
    shape: &BenchShape,
    synth: &SynthSpec,
    seed: u64,
) -> Result<Vec<BenchRow>> {
    if episodes < MIN_BENCH_EPISODES {
        return Err(Error::InvalidArgument(format!("benchmark needs >= {MIN_BENCH_EPISODES} episodes, got {episodes}")));
    }
    let spec = SynthSpec { dim: shape.dim, ..*synth };
    let stream = SeedStream::new(seed);
    let pool: Vec<Episode> = (0..episodes as u64)
        .into_par_iter()
        .map(|e| sample_synthetic_episode(&spec, shape.way, shape.shot, shape.query, &mut stream.stream(e)))
        .collect::<Result<_>>()?;
    let mut rows = Vec::with_capacity(specs.len());
    for learner in specs {
        let mut accs = Vec::with_capacity(episodes);
        let mut predictions = Vec::with_capacity(episodes);
        let start = Instant::now();
        for ep in &pool {
            let model = learner_fit(learner, ep.support())?;
            let (pred, _) = learner_predict(learner, &model, &ep.query_x)?;
            predictions.push(pred);
        }
        let total_s = start.elapsed().as_secs_f64();
        for (ep, pred) in pool.iter().zip(&predictions) {
            accs.push(accuracy(pred, ep.query_y.as_deref().unwrap_or_default()));
        }
        let (acc, ci95) = mean_ci95(&accs);
        rows.push(BenchRow { learner: learner.kind(), acc, ci95, total_s, per_episode_us: total_s / episodes as f64 * 1e6 });
    }
    Ok(rows)
}

pub fn bench_table_text(rows: &[BenchRow]) -> String {
    let mut s = format!("{:<8} {:>8} {:>8} {:>10} {:>15}\n", "learner", "acc", "ci95", "total_s", "per_episode_us");
    for r in rows {
        let _ = writeln!(
            s,
            "{:<8} {:>8.2} {:>8.2} {:>10.3} {:>15.2}",
            r.learner.name(),
            100.0 * r.acc,
            100.0 * r.ci95,
            r.total_s,
            r.per_episode_us
        );
    }
    s
}

pub fn bench_table_csv(rows: &[BenchRow]) -> String {
    let mut s = String::from("learner,acc,ci95,total_s,per_episode_us\n");
    for r in rows {
        let _ = writeln!(s, "{},{:.6},{:.6},{:.6},{:.3}", r.learner.name(), r.acc, r.ci95, r.total_s, r.per_episode_us);
    }
    s
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::engine::BackboneParams;
    use crate::lssvm::LssvmConfig;
    use crate::transduction::iam::iam_init_params;
    use crate::rng::RngState;

    fn opts(episodes: usize) -> EvalOptions {
        EvalOptions {
            learner: BaseLearnerSpec::Lssvm(LssvmConfig::default()),
            iam: false,
            psm: PsmConfig::off(),
            way: 5,
            shot: 1,
            query: 15,
            episodes,
            phase: Phase::Test,
            seed: 11,
        }
    }

    fn identity() -> Pipeline {
        Pipeline { backbone: BackboneParams::identity(), iam: None }
    }

    #[test]
    fn ci95_matches_direct_formula() {
        let v = [0.2, 0.6, 0.9, 0.4, 0.4];
        let (m, ci) = mean_ci95(&v);
        let mean = 2.5 / 5.0;
        let sd = (v.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / 5.0).sqrt();
        assert!((m - mean).abs() < 1e-15);
        assert!((ci - 1.96 * sd / 5f64.sqrt()).abs() < 1e-15);
        assert_eq!(mean_ci95(&[0.7]).1, 0.0);
    }

    #[test]
    fn separable_tasks_are_perfect() {
        let source = EpisodeSource::Synthetic(SynthSpec { within_class_std: 0.0, ..SynthSpec::default() });
        let r = evaluate(&identity(), &source, &opts(50)).unwrap();
        assert_eq!(r.mean_acc, 1.0);
        assert_eq!(r.ci95, 0.0);
        let one = evaluate(&identity(), &source, &opts(1)).unwrap();
        assert_eq!(one.ci95, 0.0);
        assert_eq!(one.summary_line(), "100.00 ± 0.00");
    }

    #[test]
    fn reports_are_deterministic() {
        let source = EpisodeSource::Synthetic(SynthSpec::default());
        let mut rng = RngState::from_seed(1);
        let p = Pipeline {
            backbone: BackboneParams::init(&[16, 16], &mut rng).unwrap(),
            iam: Some(iam_init_params(16, 16, 16, 8, &mut rng).unwrap()),
        };
        let o = EvalOptions { iam: true, psm: PsmConfig { iterations: 3, accumulate: true }, ..opts(60) };
        let a = evaluate(&p, &source, &o).unwrap();
        let b = evaluate(&p, &source, &o).unwrap();
        assert_eq!(a.render(false), b.render(false));
        assert_eq!(a.per_episode_csv(), b.per_episode_csv());
        assert_eq!(a.psm_trace_acc.len(), 4);
        assert_eq!(*a.psm_trace_acc.last().unwrap(), a.mean_acc);
        assert!(a.render(true).contains("fit_time_us_median"));
    }

    #[test]
    fn iam_without_params_is_config_error() {
        let source = EpisodeSource::Synthetic(SynthSpec::default());
        let o = EvalOptions { iam: true, ..opts(3) };
        assert!(matches!(evaluate(&identity(), &source, &o), Err(Error::Config(_))));
        assert!(evaluate(&identity(), &source, &opts(0)).is_err());
    }

    #[test]
    fn bench_table_shape() {
        let specs = [
            BaseLearnerSpec::PrototypeNn,
            BaseLearnerSpec::Ridge { lambda: 1.0 },
            BaseLearnerSpec::Lssvm(LssvmConfig::default()),
        ];
        let rows = benchmark_timing(&specs, 100, &BenchShape::default(), &SynthSpec::default(), 3).unwrap();
        assert_eq!(rows.len(), 3);
        let again = benchmark_timing(&specs, 100, &BenchShape::default(), &SynthSpec::default(), 3).unwrap();
        for (a, b) in rows.iter().zip(&again) {
            assert_eq!((a.learner, a.acc, a.ci95), (b.learner, b.acc, b.ci95));
        }
        assert_eq!(bench_table_csv(&rows).lines().count(), 4);
        assert_eq!(bench_table_text(&rows).lines().count(), 4);
        assert!(benchmark_timing(&specs, 99, &BenchShape::default(), &SynthSpec::default(), 3).is_err());
    }
}
