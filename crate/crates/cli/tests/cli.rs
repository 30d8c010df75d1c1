//! End-to-end checks of the command-line contract: exit codes, manifest
//! idempotence, and seed determinism.

use std::fs;
use std::path::PathBuf;
use std::process::Command;

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_stacknash"))
}

fn scratch(name: &str) -> PathBuf {
    let dir = std::env::temp_dir().join(format!("stacknash-cli-{name}-{}", std::process::id()));
    let _ = fs::remove_dir_all(&dir);
    fs::create_dir_all(&dir).unwrap();
    dir
}

const GOOD: &str = r#"
horizon = 1.0
x0 = 1.0
steps = 60

[a]
i0 = 0.1
i1 = 0.1
i2 = 0.05
i3 = 0.1
[b]
i0 = 0.8
i1 = 0.15
i2 = 0.1
i3 = 0.1
[c]
i0 = 0.7
i1 = 0.1
i2 = 0.15
i3 = 0.05
[d]
i0 = 0.5
i1 = 0.1
i2 = 0.05
i3 = 0.1
[e]
i0 = 0.4
i1 = 0.05
i2 = 0.1
i3 = 0.05

[cost.player1]
Q = 0.4
R = 1.0
G = 0.3
[cost.player2]
Q = 0.5
R = 1.1
G = 0.25
[cost.player3]
Q = 0.3
R = 1.2
G = 0.2
[cost.player4]
Q = 0.35
R = 0.9
G = 0.15
"#;

#[test]
fn solve_writes_artifacts_and_manifest_is_idempotent() {
    let dir = scratch("solve");
    let cfg = dir.join("model.toml");
    fs::write(&cfg, GOOD).unwrap();
    let out1 = dir.join("run1");
    let out2 = dir.join("run2");
    for out in [&out1, &out2] {
        let status = bin()
            .args(["solve", "--config"])
            .arg(&cfg)
            .arg("--out")
            .arg(out)
            .status()
            .unwrap();
        assert!(status.success());
    }
    let m1 = fs::read_to_string(out1.join("manifest.txt")).unwrap();
    let m2 = fs::read_to_string(out2.join("manifest.txt")).unwrap();
    assert_eq!(m1, m2, "reruns must produce hash-identical artifacts");
    for f in [
        "coefficients.csv",
        "follower_riccati.csv",
        "leader_riccati.csv",
        "gains.csv",
        "decoupling.csv",
    ] {
        assert!(out1.join(f).exists(), "{f} missing");
    }
}

#[test]
fn missing_key_exits_one() {
    let dir = scratch("parse");
    let cfg = dir.join("broken.toml");
    fs::write(&cfg, GOOD.replace("x0 = 1.0\n", "")).unwrap();
    let output = bin()
        .args(["solve", "--config"])
        .arg(&cfg)
        .arg("--out")
        .arg(dir.join("out"))
        .output()
        .unwrap();
    assert_eq!(output.status.code(), Some(1));
    let err = String::from_utf8_lossy(&output.stderr);
    assert!(err.contains("parse"), "stderr: {err}");
}

#[test]
fn a1_violation_exits_one_and_names_assumption() {
    let dir = scratch("a1");
    let cfg = dir.join("bad.toml");
    fs::write(
        &cfg,
        GOOD.replace("[cost.player1]\nQ = 0.4", "[cost.player1]\nQ = -1.0"),
    )
    .unwrap();
    let output = bin()
        .args(["solve", "--config"])
        .arg(&cfg)
        .arg("--out")
        .arg(dir.join("out"))
        .output()
        .unwrap();
    assert_eq!(output.status.code(), Some(1));
    let err = String::from_utf8_lossy(&output.stderr);
    assert!(err.contains("Assumption A1 violated"), "stderr: {err}");
}

#[test]
fn singular_gain_system_exits_two_naming_a2() {
    // Zero follower control weights with parallel diffusion loadings make
    // the 2x2 gain system singular at the terminal node.
    let dir = scratch("a2");
    let cfg = dir.join("singular.toml");
    let text = GOOD
        .replace("[cost.player1]\nQ = 0.4\nR = 1.0", "[cost.player1]\nQ = 0.4\nR = 0.0")
        .replace("[cost.player2]\nQ = 0.5\nR = 1.1", "[cost.player2]\nQ = 0.5\nR = 0.0")
        .replace(
            "[c]\ni0 = 0.7\ni1 = 0.1\ni2 = 0.15\ni3 = 0.05",
            "[c]\ni0 = 0.8\ni1 = 0.15\ni2 = 0.1\ni3 = 0.1",
        );
    fs::write(&cfg, text).unwrap();
    let output = bin()
        .args(["solve", "--config"])
        .arg(&cfg)
        .arg("--out")
        .arg(dir.join("out"))
        .output()
        .unwrap();
    assert_eq!(output.status.code(), Some(2));
    let err = String::from_utf8_lossy(&output.stderr);
    assert!(err.contains("Assumption A2"), "stderr: {err}");
}

#[test]
fn simulate_is_seed_deterministic_and_rejects_zero_paths() {
    let dir = scratch("simulate");
    let cfg = dir.join("model.toml");
    fs::write(&cfg, GOOD).unwrap();
    let out1 = dir.join("s1");
    let out2 = dir.join("s2");
    for out in [&out1, &out2] {
        let status = bin()
            .args(["simulate", "--seed", "9", "--paths", "64", "--config"])
            .arg(&cfg)
            .arg("--out")
            .arg(out)
            .status()
            .unwrap();
        assert!(status.success());
    }
    let t1 = fs::read(out1.join("trajectory.csv")).unwrap();
    let t2 = fs::read(out2.join("trajectory.csv")).unwrap();
    assert_eq!(t1, t2, "same seed must give byte-identical trajectories");
    assert_eq!(
        fs::read_to_string(out1.join("costs.txt")).unwrap(),
        fs::read_to_string(out2.join("costs.txt")).unwrap()
    );

    let output = bin()
        .args(["simulate", "--paths", "0", "--config"])
        .arg(&cfg)
        .arg("--out")
        .arg(dir.join("s0"))
        .output()
        .unwrap();
    assert_eq!(output.status.code(), Some(1));
}

#[test]
fn verify_fast_suites_pass_and_corrupt_fails() {
    let dir = scratch("verify");
    let cfg = dir.join("model.toml");
    fs::write(&cfg, GOOD).unwrap();
    let ok = bin()
        .args(["verify", "--suite", "decoupling", "--config"])
        .arg(&cfg)
        .arg("--out")
        .arg(dir.join("v1"))
        .status()
        .unwrap();
    assert!(ok.success());
    let bad = bin()
        .args(["verify", "--suite", "decoupling", "--corrupt", "--config"])
        .arg(&cfg)
        .arg("--out")
        .arg(dir.join("v2"))
        .output()
        .unwrap();
    assert_eq!(bad.status.code(), Some(3));
}

#[test]
fn lemma_suite_reports_skip_without_a3() {
    let dir = scratch("lemma");
    let cfg = dir.join("model.toml");
    fs::write(&cfg, GOOD).unwrap();
    let output = bin()
        .args(["verify", "--suite", "lemma", "--config"])
        .arg(&cfg)
        .arg("--out")
        .arg(dir.join("v"))
        .output()
        .unwrap();
    assert!(output.status.success());
    let text = String::from_utf8_lossy(&output.stdout);
    assert!(text.contains("skipped"), "stdout: {text}");
}

#[test]
fn report_prints_manifest_or_exits_one() {
    let dir = scratch("report");
    let cfg = dir.join("model.toml");
    fs::write(&cfg, GOOD).unwrap();
    let out = dir.join("run");
    assert!(bin()
        .args(["solve", "--config"])
        .arg(&cfg)
        .arg("--out")
        .arg(&out)
        .status()
        .unwrap()
        .success());
    let output = bin().args(["report", "--out"]).arg(&out).output().unwrap();
    assert!(output.status.success());
    assert!(String::from_utf8_lossy(&output.stdout).contains("fnv64"));

    let missing = bin()
        .args(["report", "--out"])
        .arg(dir.join("nowhere"))
        .output()
        .unwrap();
    assert_eq!(missing.status.code(), Some(1));
}
