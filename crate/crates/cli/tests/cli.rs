use std::path::Path;
use std::process::{Command, Output};

fn hypomix(dir: &Path, args: &[&str], workers: Option<&str>) -> Output {
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_hypomix"));
    cmd.current_dir(dir).args(args).env_remove("HYPOMIX_WORKERS");
    if let Some(w) = workers {
        cmd.env("HYPOMIX_WORKERS", w);
    }
    cmd.output().unwrap()
}

fn write(dir: &Path, name: &str, body: &str) {
    std::fs::write(dir.join(name), body).unwrap();
}

fn code(o: &Output) -> i32 {
    o.status.code().unwrap()
}

const TRIAD: &str = "epsilons = [0.1]\n[model]\nbuiltin = \"triad\"\n";

#[test]
fn passing_run_exits_zero_and_writes_manifest() {
    let dir = tempfile::tempdir().unwrap();
    write(
        dir.path(),
        "s.toml",
        "epsilons = [0.1]\n[model]\nbuiltin = \"lorenz96\"\nn = 5\n",
    );
    let o = hypomix(
        dir.path(),
        &["structure", "--config", "s.toml", "--out", "res", "--tag", "ci"],
        None,
    );
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let stdout = String::from_utf8_lossy(&o.stdout);
    assert!(stdout.contains("pass structure"), "{stdout}");
    let run = dir.path().join("res/structure");
    let model = std::fs::read_dir(&run).unwrap().next().unwrap().unwrap().path();
    assert!(model.join("ci/manifest.json").exists());
    assert!(model.join("latest").exists());
}

#[test]
fn verdict_failure_exits_one() {
    let dir = tempfile::tempdir().unwrap();
    write(dir.path(), "h.toml", &format!("{TRIAD}[hormander]\nmax_depth = 1\n"));
    let o = hypomix(dir.path(), &["hormander", "--config", "h.toml", "--tag", "t"], None);
    assert_eq!(code(&o), 1, "{}", String::from_utf8_lossy(&o.stdout));
    assert!(String::from_utf8_lossy(&o.stdout).contains("FAIL spanning"));
}

#[test]
fn override_can_repair_a_config() {
    let dir = tempfile::tempdir().unwrap();
    write(dir.path(), "h.toml", &format!("{TRIAD}[hormander]\nmax_depth = 1\n"));
    let o = hypomix(
        dir.path(),
        &[
            "hormander",
            "--config",
            "h.toml",
            "--override",
            "hormander.max_depth=4",
            "--tag",
            "t",
        ],
        None,
    );
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stdout));
}

#[test]
fn usage_and_validation_errors_exit_two() {
    let dir = tempfile::tempdir().unwrap();
    write(dir.path(), "t.toml", TRIAD);
    let cases: [&[&str]; 4] = [
        &["structure"],
        &["nonsense", "--config", "t.toml"],
        &["structure", "--config", "missing.toml"],
        &["relax-scaling", "--config", "t.toml"],
    ];
    for args in cases {
        let o = hypomix(dir.path(), args, None);
        assert_eq!(code(&o), 2, "{args:?}: {}", String::from_utf8_lossy(&o.stderr));
    }
    let o = hypomix(dir.path(), &["relax-scaling", "--config", "t.toml"], None);
    let err = String::from_utf8_lossy(&o.stderr);
    assert!(
        err.contains("need ≥ 3 ε values") && err.contains("[sim] block required"),
        "{err}"
    );
    let o = hypomix(dir.path(), &["structure", "--config", "t.toml"], Some("zero"));
    assert_eq!(code(&o), 2);
}

#[test]
fn runtime_error_exits_three() {
    let dir = tempfile::tempdir().unwrap();
    write(
        dir.path(),
        "m.toml",
        "epsilons = [0.1]\n[model]\nfile = \"absent.model\"\n",
    );
    let o = hypomix(dir.path(), &["structure", "--config", "m.toml", "--tag", "t"], None);
    assert_eq!(code(&o), 3);
}

#[test]
fn worker_count_does_not_change_csv_bytes() {
    let dir = tempfile::tempdir().unwrap();
    write(
        dir.path(),
        "e.toml",
        "epsilons = [0.1, 0.05]\n[model]\nbuiltin = \"triad\"\n[sim]\ntrajectories = 300\ndt_physical = 0.02\n\
         t_final_rescaled = 3\nburn_in_rescaled = 1\nrecord_every_rescaled = 0.5\n",
    );
    for (w, tag) in [("1", "w1"), ("8", "w8")] {
        let o = hypomix(
            dir.path(),
            &["equilibrium", "--config", "e.toml", "--out", "r", "--tag", tag],
            Some(w),
        );
        assert!(code(&o) <= 1, "{}", String::from_utf8_lossy(&o.stderr));
    }
    let base = dir.path().join("r/equilibrium/triad");
    let mut compared = 0;
    for entry in std::fs::read_dir(base.join("w1")).unwrap() {
        let name = entry.unwrap().file_name();
        if name.to_string_lossy().ends_with(".csv") {
            let a = std::fs::read(base.join("w1").join(&name)).unwrap();
            let b = std::fs::read(base.join("w8").join(&name)).unwrap();
            assert_eq!(a, b, "{name:?}");
            compared += 1;
        }
    }
    assert_eq!(compared, 3);
}
