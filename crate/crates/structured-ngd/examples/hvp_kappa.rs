//! The projected curvature term of the structured update from a handful of
//! Hessian-vector products, compared with the dense computation.

use nalgebra::DVector;
use structured_ngd::distributions::seeded_rng;
use structured_ngd::estimators::{Counting, Objective};
use structured_ngd::matgroup::{kappa_congruence_hvp, kappa_project, GroupElement, StructureSpec};
use structured_ngd::problems::student_t_mixture;
use structured_ngd::Result;

/// Largest deviation from the dense projection across the structures tried.
pub fn run_example() -> Result<f64> {
    let p = 30;
    let obj = student_t_mixture(p, 3, 2.0, 1.0, 9)?;
    let w = DVector::from_fn(p, |i, _| (i as f64 * 0.37).sin());
    let h = obj.hessian(&w)?;
    let mut rng = seeded_rng(9);
    let mut worst: f64 = 0.0;
    for spec in [StructureSpec::BlockTriUpper(p, 4), StructureSpec::HeisenbergLower(p, 2, 3), StructureSpec::Diagonal(p)] {
        let b = GroupElement::random(&spec, &mut rng, 0.3)?;
        let counting = Counting::new(&obj);
        let fast = kappa_congruence_hvp(&b, &obj.hess_diag(&w)?, |v| counting.hvp(&w, v))?;
        let dense = kappa_project(&b.congruence_inv(&h)?, &spec)?;
        let dev = fast.sub(&dense)?.max_abs();
        worst = worst.max(dev);
        println!("{:<24} {} Hessian-vector products, deviation {dev:.1e}", spec.label(), counting.hvp_calls());
    }
    Ok(worst)
}

fn main() -> Result<()> {
    run_example()?;
    Ok(())
}
