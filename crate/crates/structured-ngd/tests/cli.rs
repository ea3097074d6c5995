use std::path::PathBuf;
use std::process::{Command, Output};

use structured_ngd::cli::{ProblemKind, RunManifest};

fn sngd(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_sngd")).args(args).output().expect("binary runs")
}

fn scratch(name: &str) -> PathBuf {
    let dir = PathBuf::from(env!("CARGO_TARGET_TMPDIR")).join(name);
    let _ = std::fs::remove_dir_all(&dir);
    dir
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

#[test]
fn verify_passes_and_is_repeatable() {
    let a = sngd(&["verify"]);
    assert_eq!(a.status.code(), Some(0), "{}", stdout(&a));
    assert!(!stdout(&a).contains("FAIL"));
    let b = sngd(&["verify"]);
    assert_eq!(a.stdout, b.stdout);
}

#[test]
fn injected_mask_fault_fails_the_natgrad_row_only() {
    let o = sngd(&["verify", "--inject-fault", "c-mask"]);
    assert_eq!(o.status.code(), Some(1));
    let failed: Vec<String> = stdout(&o).lines().filter(|l| l.contains(" FAIL ")).map(String::from).collect();
    assert_eq!(failed.len(), 1, "{failed:?}");
    assert!(failed[0].starts_with("dense natgrad equivalence"));
}

#[test]
fn rosenbrock_run_writes_csv_per_optimizer() {
    let out = scratch("rosenbrock");
    let o = sngd(&[
        "run", "rosenbrock", "--p", "100", "--structure", "hs-low", "--k1", "10", "--k2", "10", "--estimator", "mean",
        "--gamma", "1", "--iters", "50", "--out", out.to_str().unwrap(),
    ]);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    for name in ["ngd.csv", "adam.csv"] {
        let csv = std::fs::read_to_string(out.join(name)).unwrap();
        let mut lines = csv.lines();
        assert_eq!(lines.next(), Some("iter,loss,grad_norm,wall_ms"));
        assert_eq!(lines.count(), 51);
        assert!(!csv.contains('\r'));
    }
    let manifest = RunManifest::from_json(&std::fs::read_to_string(out.join("manifest.json")).unwrap()).unwrap();
    assert_eq!((manifest.problem, manifest.p, manifest.ngd.iters), (ProblemKind::Rosenbrock, 100, 50));
}

#[test]
fn identical_manifests_give_identical_bytes() {
    let (a, b) = (scratch("rerun-a"), scratch("rerun-b"));
    let args = ["run", "mixture-vi", "--p", "4", "--K", "2", "--C", "2", "--structure", "tri-up", "--k", "2", "--samples", "3", "--iters", "40"];
    for dir in [&a, &b] {
        let mut v = args.to_vec();
        v.extend(["--out", dir.to_str().unwrap()]);
        assert_eq!(sngd(&v).status.code(), Some(0));
    }
    assert_eq!(std::fs::read(a.join("ngd.csv")).unwrap(), std::fs::read(b.join("ngd.csv")).unwrap());
}

#[test]
fn config_file_round_trips_and_flags_override() {
    let dir = scratch("config");
    std::fs::create_dir_all(&dir).unwrap();
    let mut m = RunManifest::defaults(ProblemKind::MetricNearness);
    m.p = 4;
    m.n = 50;
    m.ngd.iters = 20;
    m.out = dir.join("first");
    let path = dir.join("manifest.json");
    std::fs::write(&path, m.to_json().unwrap()).unwrap();
    let o = sngd(&["run", "--config", path.to_str().unwrap(), "--iters", "7"]);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    let written = RunManifest::from_json(&std::fs::read_to_string(m.out.join("manifest.json")).unwrap()).unwrap();
    assert_eq!(written.ngd.iters, 7);
    assert_eq!(RunManifest { ngd: m.ngd.clone(), ..written.clone() }, m);
    let csv = std::fs::read_to_string(m.out.join("ngd.csv")).unwrap();
    assert_eq!(csv.lines().count(), 9);
}

#[test]
fn usage_errors_exit_with_two() {
    for args in [
        vec!["run"],
        vec!["run", "rosenbrock", "--structure", "kron"],
        vec!["run", "rosenbrock", "--p", "6", "--structure", "tri-up", "--k", "9"],
        vec!["run", "metric-nearness", "--structure", "diag"],
        vec!["run", "metric-nearness", "--estimator", "stein"],
        vec!["run", "rosenbrock", "--estimator", "magic"],
        vec!["run", "logistic-1d", "--p", "3"],
        vec!["run", "--config", "/nonexistent/manifest.json"],
        vec!["frobnicate"],
    ] {
        let o = sngd(&args);
        assert_eq!(o.status.code(), Some(2), "{args:?}: {}", String::from_utf8_lossy(&o.stderr));
    }
}

#[test]
fn numerical_failure_exits_with_one_and_names_the_iteration() {
    let out = scratch("diverge");
    let o = sngd(&["run", "rosenbrock", "--p", "20", "--k1", "3", "--k2", "3", "--iters", "200", "--out", out.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(1));
    let err = String::from_utf8_lossy(&o.stderr);
    assert!(err.contains("iteration"), "{err}");
}
