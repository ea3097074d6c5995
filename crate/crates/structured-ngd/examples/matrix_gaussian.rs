//! Matrix-Gaussian posterior for multi-output regression with Kronecker-structured
//! precision: a Heisenberg column factor, a full row factor and momentum.

use nalgebra::DMatrix;
use structured_ngd::distributions::MatrixGaussianKron;
use structured_ngd::matgroup::{GroupElement, StructureSpec};
use structured_ngd::estimators::MatrixObjective;
use structured_ngd::optimizer::{run_matgauss, Momentum, NgdConfig};
use structured_ngd::problems::matrix_regression;
use structured_ngd::Result;

/// Data loss at the initial and final posterior mean.
pub fn run_example() -> Result<(f64, f64)> {
    let (d, p) = (2, 5);
    let obj = matrix_regression(d, p, 60, 0.1, 8)?;
    let init = MatrixGaussianKron::new(
        DMatrix::zeros(d, p),
        GroupElement::identity(&StructureSpec::HeisenbergLower(p, 1, 1))?,
        GroupElement::identity(&StructureSpec::Full(d))?,
    )?;
    let before = obj.loss(&init.mean);
    let cfg = NgdConfig { beta: 0.1, gamma: 1.0, iters: 300, mc_samples: 3, seed: 8, momentum: Some(Momentum::default()), ..NgdConfig::default() };
    let (state, _) = run_matgauss(&obj, init, &cfg, 0.5)?;
    let after = obj.loss(&state.dist.mean);
    let (col, row) = state.dist.precisions();
    println!("data loss {before:.3} -> {after:.3}");
    println!("column precision diagonal {:.2?}", col.diagonal().as_slice());
    println!("row precision diagonal {:.2?}", row.diagonal().as_slice());
    Ok((before, after))
}

fn main() -> Result<()> {
    run_example()?;
    Ok(())
}
