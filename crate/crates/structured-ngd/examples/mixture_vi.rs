//! Variational inference with a Gaussian mixture whose components carry block
//! upper-triangular precision factors; the target is a Student-t mixture.

use structured_ngd::distributions::{seeded_rng, GaussianSqrtPrec, MixtureGaussSqrtPrec};
use structured_ngd::matgroup::{GroupElement, StructureSpec};
use structured_ngd::optimizer::{run_mixture, NgdConfig};
use structured_ngd::problems::student_t_mixture;
use structured_ngd::Result;
use rand::Rng;
use nalgebra::DVector;

/// Average of the first and of the last ten recorded objective values.
pub fn run_example() -> Result<(f64, f64)> {
    let (p, k) = (4, 3);
    let target = student_t_mixture(p, 2, 2.0, 3.0, 10)?;
    let spec = StructureSpec::BlockTriUpper(p, 2);
    let mut rng = seeded_rng(7);
    let comps = (0..k)
        .map(|_| GaussianSqrtPrec::new(DVector::from_fn(p, |_, _| rng.random_range(-3.0..3.0)), GroupElement::identity(&spec)?))
        .collect::<Result<Vec<_>>>()?;
    let cfg = NgdConfig { beta: 0.02, gamma: 1.0, iters: 400, mc_samples: 10, seed: 7, ..NgdConfig::default() };
    let (q, trace) = run_mixture(&target, MixtureGaussSqrtPrec::new(comps)?, &cfg)?;
    let avg = |rows: &[structured_ngd::optimizer::TraceRow]| rows.iter().map(|r| r.loss).sum::<f64>() / rows.len() as f64;
    let n = trace.rows.len();
    let (first, last) = (avg(&trace.rows[..10]), avg(&trace.rows[n - 10..]));
    for (i, c) in q.components.iter().enumerate() {
        println!("component {i}: mean {:.2?}", c.mean.as_slice());
    }
    println!("objective estimate {first:.3} -> {last:.3}");
    Ok((first, last))
}

fn main() -> Result<()> {
    run_example()?;
    Ok(())
}
