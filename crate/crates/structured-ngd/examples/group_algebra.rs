//! Structured matrix groups: closure under products and inverses, the `h` retraction,
//! and the `kappa` projection onto the local space.

use nalgebra::DMatrix;
use structured_ngd::distributions::seeded_rng;
use structured_ngd::matgroup::{h_map, kappa_project, GroupElement, LocalDirection, StructureSpec};
use structured_ngd::Result;

/// Largest deviation of `A A^{-1}` from the identity over every structure tried.
pub fn run_example() -> Result<f64> {
    let mut rng = seeded_rng(1);
    let p = 7;
    let mut worst: f64 = 0.0;
    for spec in [
        StructureSpec::Full(p),
        StructureSpec::Diagonal(p),
        StructureSpec::BlockTriUpper(p, 2),
        StructureSpec::BlockTriLower(p, 2),
        StructureSpec::HeisenbergUpper(p, 2, 2),
        StructureSpec::HeisenbergLower(p, 1, 3),
    ] {
        let a = GroupElement::random(&spec, &mut rng, 0.5)?;
        let b = GroupElement::random(&spec, &mut rng, 0.5)?;
        let ab = a.mul(&b)?;
        ab.validate()?;
        let dev = (a.mul(&a.inverse()?)?.dense() - DMatrix::identity(p, p)).amax();
        worst = worst.max(dev);

        // a symmetric matrix projected to the local space, then mapped into the group
        let x = DMatrix::from_fn(p, p, |i, j| ((i + 2 * j) as f64).cos());
        let m: LocalDirection = kappa_project(&(&x + x.transpose()), &spec)?.scale(0.1);
        let g = h_map(&m)?;
        g.validate()?;
        println!("{:<28} product ok, |A A^-1 - I| = {dev:.1e}, |h(M)| = {:.3}", spec.label(), g.dense().norm());
    }
    Ok(worst)
}

fn main() -> Result<()> {
    let worst = run_example()?;
    println!("worst inverse error {worst:.2e}");
    Ok(())
}
