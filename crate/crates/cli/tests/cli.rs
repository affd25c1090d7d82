use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use tempfile::TempDir;

fn stifflab(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_stifflab"))
        .args(args)
        .env("STIFFLAB_THREADS", "0")
        .output()
        .expect("spawn stifflab")
}

fn code(out: &Output) -> i32 {
    out.status.code().expect("exit code")
}

fn stderr(out: &Output) -> String {
    String::from_utf8_lossy(&out.stderr).into_owned()
}

fn stdout(out: &Output) -> String {
    String::from_utf8_lossy(&out.stdout).into_owned()
}

fn write_config(dir: &Path, name: &str, json: &str) -> String {
    let p = dir.join(name);
    fs::write(&p, json).unwrap();
    p.to_str().unwrap().to_owned()
}

const ONE_VELOCITY: &str = r#"{"velocities": [{"bpm": 45, "deg_per_s": 67.5}],
    "observer": {"family": "bernoulli", "p_correct": 0.83}}"#;

fn csv_column(path: &Path, col: usize) -> Vec<f64> {
    fs::read_to_string(path)
        .unwrap()
        .lines()
        .skip(1)
        .map(|l| l.split(',').nth(col).unwrap().parse().unwrap())
        .collect()
}

#[test]
fn help_and_usage_errors() {
    assert_eq!(code(&stifflab(&["--help"])), 0);
    for cmd in [
        "simulate",
        "validate-convergence",
        "trace",
        "emg-demo",
        "replay",
    ] {
        let out = stifflab(&[cmd, "--help"]);
        assert_eq!(code(&out), 0, "{cmd}");
        assert!(stdout(&out).contains("--seed"), "{cmd} must accept --seed");
    }
    let out = stifflab(&["simulate", "--out", "x", "--bogus"]);
    assert_eq!(code(&out), 2);
    assert!(stderr(&out).contains("Usage"), "{}", stderr(&out));
    assert_eq!(code(&stifflab(&["frobnicate"])), 2);
    assert_eq!(code(&stifflab(&[])), 2);
}

#[test]
fn simulate_single_session_single_velocity() {
    let dir = TempDir::new().unwrap();
    let cfg = write_config(dir.path(), "one.json", ONE_VELOCITY);
    let out_dir = dir.path().join("out");
    let out = stifflab(&[
        "simulate",
        "--config",
        &cfg,
        "--sessions",
        "1",
        "--seed",
        "3",
        "--out",
        out_dir.to_str().unwrap(),
    ]);
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    let mut names: Vec<_> = fs::read_dir(&out_dir)
        .unwrap()
        .map(|e| e.unwrap().file_name().into_string().unwrap())
        .collect();
    names.sort();
    assert_eq!(names, ["session_0000.jsonl", "summary.csv"]);
    let summary = fs::read_to_string(out_dir.join("summary.csv")).unwrap();
    let lines: Vec<_> = summary.lines().collect();
    assert_eq!(
        lines[0],
        "session_id,seed,velocity_deg_s,threshold_pct,trials,reversals,prop_correct_tail"
    );
    assert_eq!(lines.len(), 2);
    assert!(lines[1].starts_with("0,3,67.5,"));
}

#[test]
fn simulate_default_config_writes_row_per_run() {
    let dir = TempDir::new().unwrap();
    let out_dir = dir.path().join("out");
    let out = stifflab(&[
        "simulate",
        "--sessions",
        "1",
        "--seed",
        "3",
        "--out",
        out_dir.to_str().unwrap(),
    ]);
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    let summary = fs::read_to_string(out_dir.join("summary.csv")).unwrap();
    assert_eq!(summary.lines().count(), 3);
}

#[test]
fn simulate_500_sessions_is_reproducible() {
    let dir = TempDir::new().unwrap();
    let cfg = write_config(dir.path(), "one.json", ONE_VELOCITY);
    let a = dir.path().join("a");
    let b = dir.path().join("b");
    for d in [&a, &b] {
        let out = stifflab(&[
            "simulate",
            "--config",
            &cfg,
            "--sessions",
            "500",
            "--seed",
            "77",
            "--out",
            d.to_str().unwrap(),
        ]);
        assert_eq!(code(&out), 0, "{}", stderr(&out));
    }
    let summary = fs::read(a.join("summary.csv")).unwrap();
    assert_eq!(summary, fs::read(b.join("summary.csv")).unwrap());
    assert_eq!(String::from_utf8(summary).unwrap().lines().count(), 501);
    for i in [0, 137, 499] {
        let name = format!("session_{i:04}.jsonl");
        assert_eq!(
            fs::read(a.join(&name)).unwrap(),
            fs::read(b.join(&name)).unwrap()
        );
    }
}

#[test]
fn worker_count_does_not_change_output() {
    let dir = TempDir::new().unwrap();
    let cfg = write_config(dir.path(), "one.json", ONE_VELOCITY);
    let mut outputs = Vec::new();
    for threads in ["0", "1", "3"] {
        let d = dir.path().join(format!("t{threads}"));
        let out = Command::new(env!("CARGO_BIN_EXE_stifflab"))
            .args([
                "simulate",
                "--config",
                &cfg,
                "--sessions",
                "6",
                "--seed",
                "4",
                "--out",
                d.to_str().unwrap(),
            ])
            .env("STIFFLAB_THREADS", threads)
            .output()
            .unwrap();
        assert_eq!(code(&out), 0, "{}", stderr(&out));
        outputs.push((
            fs::read(d.join("summary.csv")).unwrap(),
            fs::read(d.join("session_0005.jsonl")).unwrap(),
        ));
    }
    assert!(outputs.windows(2).all(|w| w[0] == w[1]));
}

#[test]
fn malformed_config_names_the_key() {
    let dir = TempDir::new().unwrap();
    let out_dir = dir.path().join("out");
    let cfg = write_config(
        dir.path(),
        "bad.json",
        r#"{"limb": {"inertia": 0.004, "stifness": 2}}"#,
    );
    let out = stifflab(&[
        "simulate",
        "--config",
        &cfg,
        "--out",
        out_dir.to_str().unwrap(),
    ]);
    assert_eq!(code(&out), 2);
    assert!(stderr(&out).contains("stifness"), "{}", stderr(&out));

    let cfg = write_config(dir.path(), "neg.json", r#"{"catch_trial_rate": 1.5}"#);
    let out = stifflab(&[
        "simulate",
        "--config",
        &cfg,
        "--out",
        out_dir.to_str().unwrap(),
    ]);
    assert_eq!(code(&out), 2);
    assert!(
        stderr(&out).contains("catch_trial_rate"),
        "{}",
        stderr(&out)
    );
    assert!(!out_dir.exists());
}

#[test]
fn outputs_are_not_overwritten_without_force() {
    let dir = TempDir::new().unwrap();
    let cfg = write_config(dir.path(), "one.json", ONE_VELOCITY);
    let out_dir = dir.path().join("out");
    let args = [
        "simulate",
        "--config",
        &cfg,
        "--seed",
        "1",
        "--out",
        out_dir.to_str().unwrap(),
    ];
    assert_eq!(code(&stifflab(&args)), 0);
    let summary = out_dir.join("summary.csv");
    fs::write(&summary, "sentinel").unwrap();
    let out = stifflab(&args);
    assert_eq!(code(&out), 2);
    assert!(stderr(&out).contains("--force"));
    assert_eq!(fs::read_to_string(&summary).unwrap(), "sentinel");
    let mut forced = args.to_vec();
    forced.push("--force");
    assert_eq!(code(&stifflab(&forced)), 0);
    assert_ne!(fs::read_to_string(&summary).unwrap(), "sentinel");

    let trace = dir.path().join("t.csv");
    fs::write(&trace, "keep").unwrap();
    assert_eq!(
        code(&stifflab(&["trace", "--out", trace.to_str().unwrap()])),
        2
    );
    assert_eq!(fs::read_to_string(&trace).unwrap(), "keep");
}

#[test]
fn validate_convergence_reports_and_exits() {
    let out = stifflab(&["validate-convergence", "--runs", "1000", "--seed", "5"]);
    assert_eq!(code(&out), 0, "{}", stdout(&out));
    assert!(stdout(&out).contains("0.8315"));
    assert!(stdout(&out).contains("overall: PASS"));

    let out = stifflab(&["validate-convergence", "--runs", "50"]);
    assert_eq!(code(&out), 2);

    let out = stifflab(&[
        "validate-convergence",
        "--runs",
        "200",
        "--down-up-ratio",
        "1.0",
        "--down-rule",
        "3",
    ]);
    assert!(
        stdout(&out).contains("target proportion correct: 0.7937"),
        "{}",
        stdout(&out)
    );
}

#[test]
fn validate_convergence_json_report() {
    let dir = TempDir::new().unwrap();
    let path = dir.path().join("report.json");
    let out = stifflab(&[
        "validate-convergence",
        "--runs",
        "100",
        "--out",
        path.to_str().unwrap(),
    ]);
    assert_eq!(code(&out), 0);
    let v: serde_json::Value = serde_json::from_str(&fs::read_to_string(&path).unwrap()).unwrap();
    assert_eq!(v["runs"], 100);
    assert!((v["target"].as_f64().unwrap() - 0.8315247).abs() < 1e-6);
}

#[test]
fn trace_of_always_correct_responder() {
    let dir = TempDir::new().unwrap();
    let cfg = write_config(
        dir.path(),
        "p1.json",
        r#"{"observer": {"family": "bernoulli", "p_correct": 1.0}}"#,
    );
    let path = dir.path().join("trace.csv");
    let out = stifflab(&[
        "trace",
        "--config",
        &cfg,
        "--seed",
        "2",
        "--out",
        path.to_str().unwrap(),
    ]);
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    let text = fs::read_to_string(&path).unwrap();
    assert_eq!(
        text.lines().next().unwrap(),
        "trial,level_pct,response,reversal_flag"
    );
    let levels = csv_column(&path, 1);
    assert!(levels.windows(2).all(|w| w[1] <= w[0]), "{levels:?}");
    assert_eq!(csv_column(&path, 3).iter().sum::<f64>(), 10.0);
}

#[test]
fn trace_of_default_observer_has_ten_reversals() {
    let dir = TempDir::new().unwrap();
    let path = dir.path().join("trace.csv");
    let out = stifflab(&["trace", "--seed", "9", "--out", path.to_str().unwrap()]);
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    let flags = csv_column(&path, 3);
    assert_eq!(flags.iter().filter(|f| **f > 0.0).count(), 10);
    assert_eq!(flags.iter().sum::<f64>(), 10.0);
}

#[test]
fn emg_demo_files() {
    let dir = TempDir::new().unwrap();
    let a = dir.path().join("a");
    let b = dir.path().join("b");
    for d in [&a, &b] {
        let out = stifflab(&[
            "emg-demo",
            "--seed",
            "8",
            "--duration",
            "6",
            "--out",
            d.to_str().unwrap(),
        ]);
        assert_eq!(code(&out), 0, "{}", stderr(&out));
    }
    let names = [
        "pq_raw.csv",
        "pq_envelope.csv",
        "pt_raw.csv",
        "pt_envelope.csv",
    ];
    assert_eq!(fs::read_dir(&a).unwrap().count(), 4);
    for name in names {
        assert_eq!(
            fs::read(a.join(name)).unwrap(),
            fs::read(b.join(name)).unwrap(),
            "{name}"
        );
    }
    for name in ["pq_envelope.csv", "pt_envelope.csv"] {
        let env = csv_column(&a.join(name), 1);
        assert_eq!(env.len(), 12_000);
        let max = env.iter().cloned().fold(f64::MIN, f64::max);
        let min = env.iter().cloned().fold(f64::MAX, f64::min);
        assert!(min >= -0.05 * max, "{name}: min {min}, max {max}");
    }
    let rms = |name: &str| {
        let x = csv_column(&a.join(name), 1);
        (x.iter().map(|v| v * v).sum::<f64>() / x.len() as f64).sqrt()
    };
    assert!(rms("pq_raw.csv") > rms("pt_raw.csv"));

    assert_eq!(
        code(&stifflab(&[
            "emg-demo",
            "--duration",
            "0",
            "--out",
            dir.path().join("c").to_str().unwrap()
        ])),
        2
    );
}

#[test]
fn replay_checks_logs() {
    let dir = TempDir::new().unwrap();
    let out_dir = dir.path().join("out");
    let out = stifflab(&[
        "simulate",
        "--seed",
        "12",
        "--out",
        out_dir.to_str().unwrap(),
    ]);
    assert_eq!(code(&out), 0);
    let log = out_dir.join("session_0000.jsonl");
    let out = stifflab(&["replay", log.to_str().unwrap()]);
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    assert!(stdout(&out).contains("replay OK"));
    assert_eq!(
        code(&stifflab(&[
            "replay",
            log.to_str().unwrap(),
            "--seed",
            "13"
        ])),
        1
    );

    let text = fs::read_to_string(&log).unwrap();
    let truncated: String = text.lines().take(40).map(|l| format!("{l}\n")).collect();
    let cut = dir.path().join("cut.jsonl");
    fs::write(&cut, truncated).unwrap();
    let out = stifflab(&["replay", cut.to_str().unwrap()]);
    assert_eq!(code(&out), 1);
    assert!(
        stderr(&out).contains("corrupt log at seq 40"),
        "{}",
        stderr(&out)
    );

    assert_eq!(
        code(&stifflab(&[
            "replay",
            dir.path().join("missing.jsonl").to_str().unwrap()
        ])),
        2
    );
}
