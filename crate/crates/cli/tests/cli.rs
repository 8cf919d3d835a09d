use std::path::Path;
use std::process::{Command, Output};

fn fsl(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_fsl"))
        .arg("--out-dir")
        .arg(dir)
        .args(args)
        .output()
        .expect("binary runs")
}

fn snapshot(dir: &Path, files: &[&str]) -> Vec<Vec<u8>> {
    files.iter().map(|f| std::fs::read(dir.join(f)).unwrap()).collect()
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

#[test]
fn gen_is_byte_identical() {
    let dir = tempfile::tempdir().unwrap();
    let flags = ["gen", "--classes", "20", "--dim", "16", "--per-class", "40", "--std", "0.35", "--seed", "1"];
    let files = ["bank.fbk", "bank.fbk.cfg"];
    let oa = fsl(dir.path(), &flags);
    assert!(oa.status.success(), "{}", String::from_utf8_lossy(&oa.stderr));
    assert!(stdout(&oa).starts_with("classes = 20 dim = 16 samples = 800"));
    let first = snapshot(dir.path(), &files);
    assert!(fsl(dir.path(), &flags).status.success());
    assert!(first == snapshot(dir.path(), &files), "gen output differs between runs");
}

#[test]
fn gen_zero_per_class_is_config_error() {
    let dir = tempfile::tempdir().unwrap();
    let o = fsl(dir.path(), &["gen", "--per-class", "0"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("--per-class"));
}

#[test]
fn unknown_config_key_is_config_error() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("bad.cfg");
    std::fs::write(&cfg, "gama = 0.1\n").unwrap();
    let o = fsl(dir.path(), &["--config", cfg.to_str().unwrap(), "eval", "--episodes", "2"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("gama"));
}

#[test]
fn resume_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let o = fsl(dir.path(), &["--set", "backbone=16,8", "train", "--resume", "x.fck"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("resume"));
}

#[test]
fn eval_is_deterministic() {
    let dir = tempfile::tempdir().unwrap();
    let args = ["eval", "--episodes", "50", "--seed", "3", "--psm-iters", "2"];
    let files = ["eval_report.txt", "eval_episodes.csv"];
    let oa = fsl(dir.path(), &args);
    assert!(oa.status.success(), "{}", String::from_utf8_lossy(&oa.stderr));
    let first = snapshot(dir.path(), &files);
    let ob = fsl(dir.path(), &args);
    assert!(oa.stdout == ob.stdout, "stdout differs between runs");
    assert!(first == snapshot(dir.path(), &files), "eval artifacts differ between runs");
    let report = std::fs::read_to_string(dir.path().join("eval_report.txt")).unwrap();
    assert!(report.contains("# [learner]"));
    assert!(report.contains("mean_acc = "));
}

#[test]
fn single_episode_ci_is_zero() {
    let dir = tempfile::tempdir().unwrap();
    let o = fsl(dir.path(), &["eval", "--episodes", "1"]);
    assert!(o.status.success());
    assert!(stdout(&o).lines().next().unwrap().ends_with("± 0.00"));
}

#[test]
fn iam_without_checkpoint_is_config_error() {
    let dir = tempfile::tempdir().unwrap();
    let o = fsl(dir.path(), &["eval", "--iam", "on", "--episodes", "2"]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn bench_default_learners_give_three_rows() {
    let dir = tempfile::tempdir().unwrap();
    let o = fsl(dir.path(), &["bench", "--episodes", "100"]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let text = stdout(&o);
    let rows: Vec<&str> = text.lines().skip(1).filter(|l| !l.trim().is_empty()).collect();
    assert_eq!(rows.len(), 3);
    let csv = std::fs::read_to_string(dir.path().join("bench.csv")).unwrap();
    assert!(csv.contains("learner,acc,ci95,total_s,per_episode_us"));
}

#[test]
fn train_eval_viz_pipeline() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("run.cfg");
    std::fs::write(
        &cfg,
        "[train]\nbackbone = 16,16\nepochs = 2\nbatches_per_epoch = 4\nepisodes_per_batch = 2\nval_episodes = 20\n\
         [transduction]\niam = on\n",
    )
    .unwrap();
    let c = cfg.to_str().unwrap();
    let t = fsl(dir.path(), &["--config", c, "train"]);
    assert!(t.status.success(), "{}", String::from_utf8_lossy(&t.stderr));
    let log = std::fs::read_to_string(dir.path().join("train.log")).unwrap();
    assert_eq!(log.lines().filter(|l| !l.starts_with('#')).count(), 8);
    let ck = dir.path().join("checkpoint.fck");
    let ck = ck.to_str().unwrap();
    let e = fsl(dir.path(), &["--config", c, "eval", "--checkpoint", ck, "--episodes", "20", "--ablation"]);
    assert!(e.status.success(), "{}", String::from_utf8_lossy(&e.stderr));
    let text = stdout(&e);
    for row in ["LSSVM ", "LSSVM+PSM", "LSSVM+IAM ", "LSSVM+IAM+PSM"] {
        assert!(text.contains(row), "{row} missing in\n{text}");
    }
    let v = fsl(dir.path(), &["--config", c, "viz", "--checkpoint", ck]);
    assert!(v.status.success(), "{}", String::from_utf8_lossy(&v.stderr));
    let csv = std::fs::read_to_string(dir.path().join("viz.csv")).unwrap();
    let data = csv.lines().filter(|l| !l.starts_with('#') && !l.starts_with("role")).count();
    assert_eq!(data, 5 + 5 + 75);
}
