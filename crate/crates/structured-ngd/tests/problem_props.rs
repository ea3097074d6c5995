mod common;

use common::{randn_mat, randn_vec};
use nalgebra::DMatrix;
use structured_ngd::distributions::seeded_rng;
use structured_ngd::estimators::{MatrixObjective, Objective};
use structured_ngd::oracles::finite_diff_check;
use structured_ngd::problems::{
    dixon_price, logistic_1d, matrix_regression, metric_nearness, rosenbrock, rosenbrock_variant, student_t_mixture,
    Quadratic, RosenbrockVariant,
};

#[test]
fn vector_problems_pass_finite_differences() {
    let p = 7;
    let objs: Vec<(&str, Box<dyn Objective>)> = vec![
        ("quadratic", Box::new(Quadratic::random(p, 0.5, 3.0, 1).unwrap())),
        ("rosenbrock", Box::new(rosenbrock(p).unwrap())),
        ("rosenbrock-difference", Box::new(rosenbrock_variant(p, RosenbrockVariant::Difference).unwrap())),
        ("dixon-price", Box::new(dixon_price(p).unwrap())),
        ("student-t mixture", Box::new(student_t_mixture(p, 3, 2.0, 2.0, 4).unwrap())),
        ("logistic-1d", Box::new(logistic_1d(40, 5).unwrap())),
    ];
    let mut rng = seeded_rng(51);
    for (name, obj) in &objs {
        let dim = obj.dim();
        for point in 0..5 {
            let w = randn_vec(&mut rng, dim);
            let v = randn_vec(&mut rng, dim);
            let r = finite_diff_check(obj.as_ref(), &w, &v).unwrap();
            assert!(r.grad_rel_err < 1e-5, "{name} point {point}: gradient error {}", r.grad_rel_err);
            if let Some(e) = r.hvp_rel_err {
                assert!(e < 1e-5, "{name} point {point}: hvp error {e}");
            }
            if obj.capabilities().hess_diag {
                let diag = obj.hess_diag(&w).unwrap();
                let dense = obj.hessian(&w).unwrap().diagonal();
                assert!((diag - dense).amax() < 1e-8, "{name}: Hessian diagonal");
            }
        }
    }
}

fn matrix_fd(obj: &dyn MatrixObjective, w: &DMatrix<f64>, v: &DMatrix<f64>) -> f64 {
    let h = 1e-6;
    let fd = (obj.loss(&(w + v * h)) - obj.loss(&(w - v * h))) / (2.0 * h);
    let an = (obj.grad(w).transpose() * v).trace();
    (fd - an).abs() / an.abs().max(1e-8)
}

fn sym(m: DMatrix<f64>) -> DMatrix<f64> {
    (&m + m.transpose()) * 0.5
}

#[test]
fn matrix_problems_pass_finite_differences() {
    let mut rng = seeded_rng(52);
    let mn = metric_nearness(5, 60, 20, 3).unwrap();
    let mr = matrix_regression(3, 4, 30, 0.1, 3).unwrap();
    for _ in 0..5 {
        // the metric-nearness gradient is symmetrised, so probe along symmetric directions
        let (w, v) = (sym(randn_mat(&mut rng, 5, 5)), sym(randn_mat(&mut rng, 5, 5)));
        assert!(matrix_fd(&mn, &w, &v) < 1e-5);
        let (w, v) = (randn_mat(&mut rng, 3, 4), randn_mat(&mut rng, 3, 4));
        assert!(matrix_fd(&mr, &w, &v) < 1e-5);
    }
}

#[test]
fn minibatch_gradients_average_to_full_batch() {
    let n = 60;
    let obj = metric_nearness(4, n, 10, 8).unwrap();
    let mut rng = seeded_rng(53);
    let w = sym(randn_mat(&mut rng, 4, 4));
    let mut perm: Vec<usize> = (0..n).collect();
    use rand::seq::SliceRandom;
    perm.shuffle(&mut rng);
    let batch = 12;
    let avg = perm.chunks(batch).fold(DMatrix::zeros(4, 4), |acc, idx| acc + obj.batch_grad(&w, idx)) / (n / batch) as f64;
    assert!((avg - obj.grad(&w)).amax() < 1e-12);
    let avg_loss: f64 = perm.chunks(batch).map(|idx| obj.batch_loss(&w, idx)).sum::<f64>() / (n / batch) as f64;
    assert!((avg_loss - obj.loss(&w)).abs() < 1e-12);
}
