use std::path::PathBuf;
use std::process::{Command, Output};

fn scenarios() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../scenarios")
}

fn run(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_datamarket")).args(args).output().expect("binary runs")
}

fn scenario(name: &str) -> String {
    scenarios().join(name).display().to_string()
}

#[test]
fn solve_prints_json_report() {
    let out = run(&["solve", &scenario("example1.toml")]);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let report: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(report["outcome"]["profile"], "11");
    // The resolved scenario goes to stderr.
    assert!(String::from_utf8_lossy(&out.stderr).contains("[covariance]"));
}

#[test]
fn validation_errors_exit_with_one() {
    assert_eq!(run(&["solve", "/nonexistent/scenario.toml"]).status.code(), Some(1));
    assert_eq!(run(&["example", "4"]).status.code(), Some(1));
    assert_eq!(run(&["solve", &scenario("uniform_pair.toml")]).status.code(), Some(1));
}

#[test]
fn failing_suite_exits_with_two() {
    let ok = run(&["check", &scenario("uniform_pair.toml"), "--suite", "mechanism"]);
    assert_eq!(ok.status.code(), Some(0), "{}", String::from_utf8_lossy(&ok.stdout));
    let bad = run(&["check", &scenario("uniform_pair.toml"), "--suite", "mechanism", "--corrupt-payment"]);
    assert_eq!(bad.status.code(), Some(2));
}

#[test]
fn sweep_output_is_reproducible() {
    let dir = tempfile::tempdir().unwrap();
    let spec = dir.path().join("spec.toml");
    std::fs::write(
        &spec,
        format!(
            r#"
scenario_file = {:?}

[[axis]]
path = "distributions.0.hi"
min = 1.5
max = 3.0
step = 1.0
"#,
            scenario("uniform_pair.toml")
        ),
    )
    .unwrap();
    let mut files = Vec::new();
    for k in 0..2 {
        let path = dir.path().join(format!("run{k}.csv"));
        let out = run(&["sweep", spec.to_str().unwrap(), "--samples", "2000", "--out", path.to_str().unwrap()]);
        assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
        files.push(std::fs::read(path).unwrap());
    }
    assert_eq!(files[0], files[1]);
    assert_eq!(String::from_utf8_lossy(&files[0]).lines().count(), 3);
}
