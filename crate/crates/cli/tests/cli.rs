use std::path::Path;
use std::process::{Command, Output};

use quattro_core::transformer::{save_weights, TransformerConfig, TransformerWeights};
use sha2::{Digest, Sha256};

fn quattro(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_quattro"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn code(out: &Output) -> i32 {
    out.status.code().expect("exited normally")
}

fn stdout(out: &Output) -> String {
    String::from_utf8_lossy(&out.stdout).into_owned()
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

fn sha(path: &Path) -> Vec<u8> {
    Sha256::digest(std::fs::read(path).unwrap()).to_vec()
}

fn small_cartpole_dataset(dir: &Path) -> std::path::PathBuf {
    let out = dir.join("cp.qdta");
    let run = quattro(&[
        "gen-data",
        "--system",
        "cartpole",
        "--sampling",
        "lhs",
        "--count",
        "2",
        "--sim-seconds",
        "0.03",
        "--out",
        p(&out),
    ]);
    assert_eq!(code(&run), 0, "{}", String::from_utf8_lossy(&run.stderr));
    out
}

#[test]
fn gen_data_requires_an_output_path() {
    let out = quattro(&["gen-data", "--system", "cartpole"]);
    assert_eq!(code(&out), 2);
    assert!(String::from_utf8_lossy(&out.stderr).contains("--out"));
}

#[test]
fn quadrotor_lhs_generation_is_reproducible() {
    let dir = tempfile::tempdir().unwrap();
    let paths = [dir.path().join("a.qdta"), dir.path().join("b.qdta")];
    for path in &paths {
        let out = quattro(&[
            "gen-data",
            "--system",
            "quadrotor",
            "--sampling",
            "lhs",
            "--count",
            "2",
            "--seed",
            "5",
            "--sim-seconds",
            "0.4",
            "--out",
            p(path),
        ]);
        assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
        assert!(stdout(&out).contains("initial_states=2"));
    }
    assert_eq!(sha(&paths[0]), sha(&paths[1]));
}

#[test]
fn run_writes_one_row_per_step() {
    let dir = tempfile::tempdir().unwrap();
    let trace = dir.path().join("t.csv");
    let out = quattro(&[
        "run",
        "--system",
        "cartpole",
        "--qf-scale",
        "lqr",
        "--trace",
        p(&trace),
    ]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    assert!(stdout(&out).contains("steps=1500"));
    let text = std::fs::read_to_string(&trace).unwrap();
    assert_eq!(text.lines().count(), 1501);
    assert!(text.starts_with("time,x_0,x_1,x_2,x_3,u_0,cost,blend_w\n"));
}

#[test]
fn split_is_validated() {
    let ok = quattro(&[
        "run",
        "--system",
        "cartpole",
        "--split",
        "5:25",
        "--sim-seconds",
        "0.02",
    ]);
    assert_eq!(code(&ok), 0, "{}", String::from_utf8_lossy(&ok.stderr));
    for bad in ["0:30", "5:20", "5-25"] {
        let out = quattro(&[
            "run",
            "--system",
            "cartpole",
            "--split",
            bad,
            "--sim-seconds",
            "0.02",
        ]);
        assert_eq!(code(&out), 2, "split {bad}");
    }
}

#[test]
fn quattro_controller_needs_weights() {
    let out = quattro(&[
        "run",
        "--system",
        "cartpole",
        "--controller",
        "quattro",
        "--sim-seconds",
        "0.02",
    ]);
    assert_eq!(code(&out), 2);
}

#[test]
fn quattro_controller_runs_with_weight_file() {
    let dir = tempfile::tempdir().unwrap();
    let weights = dir.path().join("w.qtfw");
    save_weights(
        &weights,
        &TransformerWeights::<f32>::seeded(TransformerConfig::cartpole(), 1).unwrap(),
    )
    .unwrap();
    let out = quattro(&[
        "run",
        "--system",
        "cartpole",
        "--controller",
        "quattro",
        "--weights",
        p(&weights),
        "--sim-seconds",
        "0.05",
    ]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    assert!(stdout(&out).contains("steps=5"));

    // a quadrotor model does not fit a cart-pole problem
    let quad = dir.path().join("q.qtfw");
    save_weights(
        &quad,
        &TransformerWeights::<f32>::seeded(TransformerConfig::quadrotor(), 1).unwrap(),
    )
    .unwrap();
    let out = quattro(&[
        "run",
        "--system",
        "cartpole",
        "--controller",
        "quattro",
        "--weights",
        p(&quad),
    ]);
    assert_eq!(code(&out), 2);
}

#[test]
fn blended_weights_stay_in_unit_interval() {
    let dir = tempfile::tempdir().unwrap();
    let trace = dir.path().join("b.csv");
    let out = quattro(&[
        "run",
        "--system",
        "cartpole",
        "--qf-scale",
        "lqr",
        "--controller",
        "blended",
        "--blend-low",
        "0.05",
        "--blend-high",
        "0.5",
        "--sim-seconds",
        "2",
        "--trace",
        p(&trace),
    ]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    let text = std::fs::read_to_string(&trace).unwrap();
    let weights: Vec<f64> = text
        .lines()
        .skip(1)
        .map(|l| l.rsplit(',').next().unwrap().parse().unwrap())
        .collect();
    assert_eq!(weights.len(), 200);
    assert!(weights.iter().all(|w| (0.0..=1.0).contains(w)));
}

#[test]
fn oracle_eval_reports_zero_error() {
    let dir = tempfile::tempdir().unwrap();
    let data = small_cartpole_dataset(dir.path());
    let report = dir.path().join("r.csv");
    let out = quattro(&[
        "eval",
        "--oracle",
        "--data",
        p(&data),
        "--report",
        p(&report),
    ]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    let summary = stdout(&out);
    let field = |name: &str| -> f64 {
        summary
            .split_whitespace()
            .find_map(|kv| kv.strip_prefix(&format!("{name}=")))
            .unwrap()
            .parse()
            .unwrap()
    };
    let records = field("records") as usize;
    assert!(records > 0);
    assert!(field("min") <= field("median") && field("median") <= field("max"));
    assert_eq!(field("max"), 0.0);

    let text = std::fs::read_to_string(&report).unwrap();
    assert_eq!(text.lines().next(), Some("record,mpc_step,iter,mse"));
    assert_eq!(text.lines().count(), records + 1);
    assert!(text
        .lines()
        .skip(1)
        .all(|l| l.rsplit(',').next().unwrap().parse::<f64>().unwrap() == 0.0));
}

#[test]
fn eval_needs_a_predictor_source() {
    let dir = tempfile::tempdir().unwrap();
    let data = small_cartpole_dataset(dir.path());
    let out = quattro(&[
        "eval",
        "--data",
        p(&data),
        "--report",
        p(&dir.path().join("r.csv")),
    ]);
    assert_eq!(code(&out), 2);
}

#[test]
fn bench_reports_step_counts() {
    let out = quattro(&["bench", "--system", "quadrotor", "--repetitions", "3"]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    let csv = stdout(&out);
    let steps = |phase: &str| -> usize {
        csv.lines()
            .find(|l| l.starts_with(&format!("{phase},")))
            .and_then(|l| l.rsplit(',').next())
            .unwrap()
            .parse()
            .unwrap()
    };
    assert_eq!(steps("vanilla_backward"), 50);
    assert_eq!(steps("quattro_backward"), 1);

    let out = quattro(&["bench", "--system", "cartpole", "--repetitions", "0"]);
    assert_eq!(code(&out), 2);
}

#[test]
fn config_file_is_merged_and_checked() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("run.cfg");
    std::fs::write(&cfg, "# short run\nsystem = cartpole\nsim_seconds = 0.03\n").unwrap();
    let out = quattro(&["--config", p(&cfg), "run"]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    assert!(stdout(&out).contains("steps=3"));
    // flags override the file
    let out = quattro(&["--config", p(&cfg), "run", "--sim-seconds", "0.05"]);
    assert!(stdout(&out).contains("steps=5"));

    std::fs::write(&cfg, "system = cartpole\nhorizn = 30\n").unwrap();
    let out = quattro(&["--config", p(&cfg), "run"]);
    assert_eq!(code(&out), 2);
    assert!(String::from_utf8_lossy(&out.stderr).contains("unknown key"));
}
