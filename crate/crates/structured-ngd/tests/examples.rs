//! Runs every example through its `run_example` entry point.

#[path = "../examples/group_algebra.rs"]
#[allow(dead_code)]
mod group_algebra;
#[path = "../examples/fisher_oracles.rs"]
#[allow(dead_code)]
mod fisher_oracles;
#[path = "../examples/newton_quadratic.rs"]
#[allow(dead_code)]
mod newton_quadratic;
#[path = "../examples/structured_rosenbrock.rs"]
#[allow(dead_code)]
mod structured_rosenbrock;
#[path = "../examples/search_cov_reinforce.rs"]
#[allow(dead_code)]
mod search_cov_reinforce;
#[path = "../examples/wishart_metric_nearness.rs"]
#[allow(dead_code)]
mod wishart_metric_nearness;
#[path = "../examples/mixture_vi.rs"]
#[allow(dead_code)]
mod mixture_vi;
#[path = "../examples/matrix_gaussian.rs"]
#[allow(dead_code)]
mod matrix_gaussian;
#[path = "../examples/univariate_ef.rs"]
#[allow(dead_code)]
mod univariate_ef;
#[path = "../examples/hvp_kappa.rs"]
#[allow(dead_code)]
mod hvp_kappa;
#[path = "../examples/invariance_logistic.rs"]
#[allow(dead_code)]
mod invariance_logistic;

#[test]
fn group_algebra_inverses() {
    assert!(group_algebra::run_example().unwrap() < 1e-12);
}

#[test]
fn fisher_oracles_values() {
    let (diag, det) = fisher_oracles::run_example().unwrap();
    assert!(diag.iter().all(|v| [1.0, 2.0, 4.0].iter().any(|w| (v - w).abs() < 1e-4)));
    assert!(det.abs() < 1e-12);
}

#[test]
fn newton_quadratic_converges() {
    let (dm, ds) = newton_quadratic::run_example().unwrap();
    assert!(dm < 1e-8 && ds < 1e-8, "{dm} {ds}");
}

#[test]
fn structured_rosenbrock_beats_adam() {
    let (ngd, adam) = structured_rosenbrock::run_example().unwrap();
    assert!(ngd * 10.0 < adam);
}

#[test]
fn search_cov_reinforce_improves() {
    let (before, after) = search_cov_reinforce::run_example().unwrap();
    assert!(after < 0.05 * before);
}

#[test]
fn wishart_metric_nearness_fits() {
    assert!(wishart_metric_nearness::run_example().unwrap() < 1e-2);
}

#[test]
fn mixture_vi_improves() {
    let (first, last) = mixture_vi::run_example().unwrap();
    assert!(last < 0.5 * first);
}

#[test]
fn matrix_gaussian_fits() {
    let (before, after) = matrix_gaussian::run_example().unwrap();
    assert!(after < 0.5 * before);
}

#[test]
fn univariate_ef_recovers_target() {
    let (_, after) = univariate_ef::run_example().unwrap();
    assert!(after < 1e-10);
}

#[test]
fn hvp_kappa_matches_dense() {
    assert!(hvp_kappa::run_example().unwrap() < 1e-10);
}

#[test]
fn invariance_logistic_gaps() {
    let (ngd, gd) = invariance_logistic::run_example().unwrap();
    assert!(ngd < 1e-10 && gd > 1e-3);
}
