//! With gradients at the mean, unit step and unit entropy weight, the precision-form
//! update is a Newton iteration: the precision converges to the Hessian and the mean
//! to the optimum of a quadratic.

use structured_ngd::distributions::GaussianSqrtPrec;
use structured_ngd::estimators::EstimatorKind;
use structured_ngd::matgroup::StructureSpec;
use structured_ngd::optimizer::{run_gauss_prec, NgdConfig};
use structured_ngd::problems::Quadratic;
use structured_ngd::Result;

/// Distance of the final mean from the optimum and of the precision from the Hessian.
pub fn run_example() -> Result<(f64, f64)> {
    let p = 8;
    let obj = Quadratic::random(p, 0.5, 4.0, 3)?;
    let cfg = NgdConfig { beta: 1.0, gamma: 1.0, iters: 30, estimator: EstimatorKind::Mean, ..NgdConfig::default() };
    let (q, trace) = run_gauss_prec(&obj, GaussianSqrtPrec::standard(&StructureSpec::Full(p))?, &cfg)?;
    for row in trace.rows.iter().step_by(5) {
        println!("iter {} objective {:.6}", row.iter, row.loss);
    }
    let dm = (&q.mean - &obj.optimum).norm();
    let ds = (q.precision() - &obj.hessian).norm();
    println!("|mu - w*| = {dm:.1e}, |S - H| = {ds:.1e}");
    Ok((dm, ds))
}

fn main() -> Result<()> {
    run_example()?;
    Ok(())
}
