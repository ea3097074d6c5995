//! Natural-gradient steps for a univariate exponential family through a link:
//! fitting a Gamma distribution to another by minimizing the KL divergence.

use nalgebra::DVector;
use structured_ngd::distributions::{EfFamily, UnivariateEf};
use structured_ngd::optimizer::step_univariate_ef;
use structured_ngd::Result;

/// KL divergence to the target before and after fitting.
pub fn run_example() -> Result<(f64, f64)> {
    let target = UnivariateEf::from_natural(EfFamily::Gamma, &DVector::from_vec(vec![3.0, 2.0]))?;
    let mut q = UnivariateEf::from_natural(EfFamily::Gamma, &DVector::from_vec(vec![1.0, 1.0]))?;
    let before = q.kl_divergence(&target)?;
    for t in 0..200 {
        // the gradient of KL(q || target) in expectation parameters is tau_q - tau_target
        let g = q.natural() - target.natural();
        q = step_univariate_ef(&q, &g, 0.2)?;
        if t % 50 == 0 {
            println!("step {t:>3}: natural parameters {:.4?}", q.natural().as_slice());
        }
    }
    let after = q.kl_divergence(&target)?;
    println!("KL {before:.3e} -> {after:.3e}");
    Ok((before, after))
}

fn main() -> Result<()> {
    run_example()?;
    Ok(())
}
