use std::io::Write;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use fsl_core::commands::{cmd_bench, cmd_eval, cmd_gen, cmd_train, cmd_viz, EvalArgs, EvalExtra, GenArgs};
use fsl_core::config::parse_config;
use fsl_core::Error;

#[derive(Parser, Debug)]
#[command(name = "fsl", version, about = "Few-shot classification with an LSSVM base learner")]
struct Cli {
    /// Run configuration (`key = value` lines with optional `[section]` headers).
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[arg(long, global = true)]
    seed: Option<u64>,
    #[arg(long, global = true)]
    out_dir: Option<PathBuf>,
    /// Worker threads (0 lets the pool decide).
    #[arg(long, global = true)]
    threads: Option<usize>,
    /// Extra config override, `key=value` or `section.key=value`; repeatable.
    #[arg(long = "set", global = true, value_name = "KEY=VALUE")]
    set: Vec<String>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Write a synthetic feature bank (FBK1).
    Gen {
        #[arg(long, default_value_t = 20)]
        classes: usize,
        #[arg(long, default_value_t = 16)]
        dim: usize,
        #[arg(long, default_value_t = 40)]
        per_class: usize,
        #[arg(long, default_value_t = 0.35)]
        std: f64,
        /// Output file (default: <out-dir>/bank.fbk).
        #[arg(long)]
        output: Option<PathBuf>,
    },
    /// Meta-train the configured backbone and IAM.
    Train {
        /// Not supported; present so that it fails loudly.
        #[arg(long)]
        resume: Option<PathBuf>,
    },
    /// Evaluate on seeded test episodes.
    Eval(EvalFlags),
    /// Time fit + predict of each learner on identical episodes.
    Bench {
        #[arg(long)]
        episodes: Option<String>,
        /// Comma-separated list of nn, rr, lssvm.
        #[arg(long)]
        learners: Option<String>,
        #[arg(long)]
        way: Option<String>,
        #[arg(long)]
        shot: Option<String>,
        #[arg(long)]
        query: Option<String>,
        #[arg(long)]
        dim: Option<String>,
    },
    /// PCA scatter of supports, IAM-adjusted supports and queries of one episode.
    Viz {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        way: Option<String>,
        #[arg(long)]
        shot: Option<String>,
        #[arg(long)]
        query: Option<String>,
    },
}

#[derive(Args, Debug)]
struct EvalFlags {
    #[arg(long)]
    checkpoint: Option<PathBuf>,
    /// nn, rr or lssvm.
    #[arg(long)]
    learner: Option<String>,
    /// on or off.
    #[arg(long)]
    iam: Option<String>,
    #[arg(long)]
    psm_iters: Option<String>,
    #[arg(long)]
    episodes: Option<String>,
    #[arg(long)]
    way: Option<String>,
    #[arg(long)]
    shot: Option<String>,
    #[arg(long)]
    query: Option<String>,
    /// Also run the IAM × PSM grid.
    #[arg(long, conflicts_with = "psm_sweep")]
    ablation: bool,
    /// Also print accuracy after every PSM iteration.
    #[arg(long)]
    psm_sweep: bool,
    /// Add timing keys to the report.
    #[arg(long)]
    timings: bool,
}

fn push(overrides: &mut Vec<(String, String)>, key: &str, value: &Option<String>) {
    if let Some(v) = value {
        overrides.push((key.to_string(), v.clone()));
    }
}

fn run(cli: Cli) -> Result<(), Error> {
    let mut overrides = Vec::new();
    for kv in &cli.set {
        let (k, v) = kv.split_once('=').ok_or_else(|| Error::BadFlag(format!("--set expects KEY=VALUE, got `{kv}`")))?;
        overrides.push((k.to_string(), v.to_string()));
    }
    push(&mut overrides, "run.seed", &cli.seed.map(|s| s.to_string()));
    push(&mut overrides, "run.out_dir", &cli.out_dir.as_ref().map(|p| p.display().to_string()));
    push(&mut overrides, "run.threads", &cli.threads.map(|t| t.to_string()));
    match &cli.command {
        Command::Eval(f) => {
            push(&mut overrides, "learner.learner", &f.learner);
            push(&mut overrides, "transduction.iam", &f.iam);
            push(&mut overrides, "transduction.psm_iters", &f.psm_iters);
            push(&mut overrides, "eval.episodes", &f.episodes);
            push(&mut overrides, "eval.way", &f.way);
            push(&mut overrides, "eval.shot", &f.shot);
            push(&mut overrides, "eval.query", &f.query);
        }
        Command::Bench { episodes, learners, way, shot, query, dim } => {
            push(&mut overrides, "bench.episodes", episodes);
            push(&mut overrides, "bench.learners", learners);
            push(&mut overrides, "bench.way", way);
            push(&mut overrides, "bench.shot", shot);
            push(&mut overrides, "bench.query", query);
            push(&mut overrides, "bench.dim", dim);
        }
        Command::Viz { way, shot, query, .. } => {
            push(&mut overrides, "viz.way", way);
            push(&mut overrides, "viz.shot", shot);
            push(&mut overrides, "viz.query", query);
        }
        Command::Gen { .. } | Command::Train { .. } => {}
    }
    let cfg = parse_config(cli.config.as_deref(), &overrides)?;
    if cfg.threads > 0 {
        rayon::ThreadPoolBuilder::new()
            .num_threads(cfg.threads)
            .build_global()
            .map_err(|e| Error::Config(format!("thread pool: {e}")))?;
    }

    let stdout = std::io::stdout();
    let mut out = stdout.lock();
    match cli.command {
        Command::Gen { classes, dim, per_class, std, output } => {
            cmd_gen(&cfg, &GenArgs { classes, dim, per_class, std, output }, &mut out)?;
        }
        Command::Train { resume } => {
            cmd_train(&cfg, resume.as_deref(), &mut out)?;
        }
        Command::Eval(f) => {
            let extra = if f.ablation {
                EvalExtra::Ablation
            } else if f.psm_sweep {
                EvalExtra::PsmSweep
            } else {
                EvalExtra::None
            };
            cmd_eval(&cfg, &EvalArgs { checkpoint: f.checkpoint, extra, timings: f.timings }, &mut out)?;
        }
        Command::Bench { .. } => {
            cmd_bench(&cfg, &mut out)?;
        }
        Command::Viz { checkpoint, .. } => {
            cmd_viz(&cfg, &checkpoint, &mut out)?;
        }
    }
    out.flush()?;
    Ok(())
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
