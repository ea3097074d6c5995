//! Second-order optimization of a chained valley with a lower Heisenberg precision
//! factor, using only Hessian-vector products, against Adam.

use nalgebra::DVector;
use structured_ngd::distributions::GaussianSqrtPrec;
use structured_ngd::estimators::{EstimatorKind, Objective};
use structured_ngd::matgroup::{GroupElement, StructureSpec};
use structured_ngd::optimizer::{run_baseline, run_gauss_prec, Baseline, NgdConfig};
use structured_ngd::problems::rosenbrock;
use structured_ngd::Result;

/// Final objective values `(structured NGD, Adam)`.
pub fn run_example() -> Result<(f64, f64)> {
    let p = 100;
    let obj = rosenbrock(p)?;
    let start = DVector::from_element(p, -1.5);
    let spec = StructureSpec::HeisenbergLower(p, 10, 10);
    let cfg = NgdConfig { beta: 0.3, gamma: 1.0, iters: 1000, estimator: EstimatorKind::Mean, ..NgdConfig::default() };
    let (q, _) = run_gauss_prec(&obj, GaussianSqrtPrec::new(start.clone(), GroupElement::identity(&spec)?)?, &cfg)?;
    let (w, _) = run_baseline(&obj, start, Baseline::Adam { lr: 0.1 }, cfg.iters)?;
    let (ngd, adam) = (obj.loss(&q.mean), obj.loss(&w));
    println!("after {} iterations: structured NGD {ngd:.3e}, Adam {adam:.3e}", cfg.iters);
    Ok((ngd, adam))
}

fn main() -> Result<()> {
    run_example()?;
    Ok(())
}
