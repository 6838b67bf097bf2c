use std::process::Command;

fn oklab() -> Command {
    let mut c = Command::new(env!("CARGO_BIN_EXE_oklab"));
    c.env_remove("OKLAB_SEED");
    c
}

#[test]
fn writes_metrics_and_exits_zero() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("m.csv");
    let status = oklab()
        .args([
            "--algorithm",
            "oktopk",
            "--workers",
            "4",
            "--n",
            "200",
            "--density",
            "0.05",
        ])
        .args([
            "--steps",
            "5",
            "--problem",
            "least-squares",
            "--instrument-xi",
            "--out",
        ])
        .arg(&out)
        .output()
        .unwrap();
    assert_eq!(
        status.status.code(),
        Some(0),
        "{}",
        String::from_utf8_lossy(&status.stdout)
    );
    let text = std::fs::read_to_string(&out).unwrap();
    assert_eq!(text.lines().count(), 1 + 5 * 6 * 4);
}

#[test]
fn env_seed_overrides_flag() {
    let dir = tempfile::tempdir().unwrap();
    let run = |name: &str, flag: &str, env: Option<&str>| {
        let path = dir.path().join(name);
        let mut c = oklab();
        c.args(["--steps", "3", "--seed", flag, "--out"]).arg(&path);
        if let Some(s) = env {
            c.env("OKLAB_SEED", s);
        }
        assert!(c.status().unwrap().success());
        std::fs::read(path).unwrap()
    };
    let a = run("a", "1", None);
    let b = run("b", "2", Some("1"));
    let c = run("c", "2", None);
    assert_eq!(a, b);
    assert_ne!(a, c);
}

#[test]
fn bad_configuration_exits_two() {
    for args in [
        vec!["--workers", "3"],
        vec!["--density", "1.5"],
        vec!["--algorithm", "ring"],
        vec!["--format", "xml"],
    ] {
        let out = oklab().args(&args).output().unwrap();
        assert_eq!(out.status.code(), Some(2), "{args:?}");
    }
}
