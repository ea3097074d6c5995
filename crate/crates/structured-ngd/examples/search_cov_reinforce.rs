//! Gradient-free search: the covariance-form update driven by score-function
//! estimates that only evaluate the loss.

use nalgebra::DVector;
use structured_ngd::distributions::GaussianSqrtCov;
use structured_ngd::estimators::{EstimatorKind, Objective};
use structured_ngd::matgroup::{GroupElement, StructureSpec};
use structured_ngd::optimizer::{run_gauss_cov, MapKind, NgdConfig};
use structured_ngd::problems::Quadratic;
use structured_ngd::Result;

/// Loss at the initial and at the final mean.
pub fn run_example() -> Result<(f64, f64)> {
    let p = 4;
    let obj = Quadratic::random(p, 0.5, 2.0, 4)?;
    let init = GaussianSqrtCov::new(DVector::zeros(p), GroupElement::identity(&StructureSpec::Full(p))?)?;
    let before = obj.loss(&init.mean);
    let cfg = NgdConfig {
        beta: 0.05,
        gamma: 0.0,
        iters: 400,
        estimator: EstimatorKind::Reinforce,
        mc_samples: 20,
        seed: 4,
        map: MapKind::Exp,
        ..NgdConfig::default()
    };
    let (q, _) = run_gauss_cov(&obj, init, &cfg)?;
    let after = obj.loss(&q.mean);
    println!("loss at mean {before:.3} -> {after:.3e}; final covariance trace {:.3e}", q.covariance().trace());
    Ok((before, after))
}

fn main() -> Result<()> {
    run_example()?;
    Ok(())
}
