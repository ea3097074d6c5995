//! Parameterization invariance on one-dimensional Bayesian logistic regression: the
//! precision-form and covariance-form natural-gradient iterates coincide, while plain
//! gradient descent in log-variance and in log-standard-deviation drift apart.

use nalgebra::DVector;
use structured_ngd::distributions::{seeded_rng, GaussianSqrtCov, GaussianSqrtPrec};
use structured_ngd::estimators::{entropy_correct, entropy_correct_cov, stein_gauss_cov, stein_gauss_prec, SigmaForm};
use structured_ngd::matgroup::{GroupElement, StructureSpec};
use structured_ngd::optimizer::{step_gauss_cov, step_gauss_prec, MapKind};
use structured_ngd::problems::logistic_1d;
use structured_ngd::Result;

/// Largest gap between the two natural-gradient runs and between the two gradient-descent runs.
pub fn run_example() -> Result<(f64, f64)> {
    let obj = logistic_1d(50, 6)?;
    let (beta, gamma) = (0.1, 1.0);
    let one = StructureSpec::Full(1);
    let mut prec = GaussianSqrtPrec::new(DVector::zeros(1), GroupElement::identity(&one)?)?;
    let mut cov = GaussianSqrtCov::new(DVector::zeros(1), GroupElement::identity(&one)?)?;
    let (mut m1, mut log_var) = (0.0_f64, 0.0_f64);
    let (mut m2, mut log_sd) = (0.0_f64, 0.0_f64);
    let (mut ngd_gap, mut gd_gap) = (0.0_f64, 0.0_f64);
    let mut rng = seeded_rng(0);
    for _ in 0..100 {
        let gp = entropy_correct(&stein_gauss_prec(&prec, &obj, &mut rng, 1, true, SigmaForm::Dense)?, &prec, gamma)?;
        let gc = entropy_correct_cov(&stein_gauss_cov(&cov, &obj, &mut rng, 1, true)?, &cov, gamma)?;
        prec = step_gauss_prec(&prec, &gp, beta, MapKind::Exp)?;
        cov = step_gauss_cov(&cov, &gc, beta, MapKind::Exp)?;
        let var_p = prec.covariance()?[(0, 0)];
        ngd_gap = ngd_gap.max((prec.mean[0] - cov.mean[0]).abs()).max((var_p - cov.covariance()[(0, 0)]).abs());

        // gradient descent with the same at-mean gradients in two coordinate systems
        let v1 = log_var.exp();
        let g_var = 0.5 * obj.curvature(m1) - 0.5 * gamma / v1;
        m1 -= beta * obj.slope(m1);
        log_var -= beta * v1 * g_var;
        let v2 = (2.0 * log_sd).exp();
        let g_var = 0.5 * obj.curvature(m2) - 0.5 * gamma / v2;
        m2 -= beta * obj.slope(m2);
        log_sd -= beta * 2.0 * v2 * g_var;
        gd_gap = gd_gap.max((m1 - m2).abs()).max((log_var.exp() - (2.0 * log_sd).exp()).abs());
    }
    println!("natural gradient: mean {:.4}, variance {:.4}", prec.mean[0], prec.covariance()?[(0, 0)]);
    println!("max gap between parameterizations: NGD {ngd_gap:.1e}, GD {gd_gap:.1e}");
    Ok((ngd_gap, gd_gap))
}

fn main() -> Result<()> {
    run_example()?;
    Ok(())
}
