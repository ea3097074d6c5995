//! Metric nearness with a Wishart search distribution on the square-root precision,
//! trained with one pathwise sample per step.

use nalgebra::DMatrix;
use structured_ngd::distributions::WishartSqrtPrec;
use structured_ngd::estimators::EstimatorKind;
use structured_ngd::optimizer::{run_wishart, NgdConfig};
use structured_ngd::problems::metric_nearness;
use structured_ngd::Result;

/// Test loss of the final mean relative to the identity.
pub fn run_example() -> Result<f64> {
    let p = 6;
    let obj = metric_nearness(p, 300, 100, 6)?;
    let base = obj.test_loss(&DMatrix::identity(p, p));
    let init = WishartSqrtPrec::with_mean(&DMatrix::identity(p, p), (p + 10) as f64)?;
    let cfg = NgdConfig {
        beta: 0.5,
        gamma: 0.0,
        iters: 1000,
        estimator: EstimatorKind::Reparam,
        mc_samples: 1,
        seed: 6,
        ..NgdConfig::default()
    };
    let (q, trace) = run_wishart(&obj, init, &cfg)?;
    let ratio = obj.test_loss(&q.mean()?) / base;
    println!("first/last training loss {:.3e} / {:.3e}", trace.rows[0].loss, trace.final_loss().unwrap_or(f64::NAN));
    println!("test loss relative to the identity: {ratio:.2e}");
    Ok(ratio)
}

fn main() -> Result<()> {
    run_example()?;
    Ok(())
}
