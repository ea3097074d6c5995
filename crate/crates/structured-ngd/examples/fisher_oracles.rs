//! Fisher matrices of the local parameterization computed by brute force from the
//! curvature of the KL divergence, including a parameterization whose Fisher is singular.

use nalgebra::DVector;
use structured_ngd::distributions::{seeded_rng, GaussianSqrtPrec};
use structured_ngd::matgroup::{GroupElement, StructureSpec, SymBasis};
use structured_ngd::oracles::{fim_via_kl, singular_fim_demo, FamilyState};
use structured_ngd::Result;

/// Returns the Fisher diagonal for a block-triangular precision factor and the
/// determinant of the singular example.
pub fn run_example() -> Result<(DVector<f64>, f64)> {
    let mut rng = seeded_rng(2);
    let spec = StructureSpec::BlockTriUpper(4, 2);
    let q = GaussianSqrtPrec::new(DVector::from_element(4, 0.5), GroupElement::random(&spec, &mut rng, 0.3)?)?;
    let f = fim_via_kl(&FamilyState::GaussPrec(q), SymBasis::Unit, 1e-3)?;
    for (name, range) in &f.blocks {
        println!("{name:>6}: {:?}", f.matrix.diagonal().rows(range.start, range.len()).iter().map(|v| (v * 1e4).round() / 1e4).collect::<Vec<_>>());
    }
    let off = (&f.matrix - nalgebra::DMatrix::from_diagonal(&f.matrix.diagonal())).amax();
    println!("largest off-diagonal entry {off:.1e}");

    let (singular, det) = singular_fim_demo()?;
    println!("unconstrained 3-dim parameterization:\n{:.2}det = {det:.1e}", singular.matrix);
    Ok((f.matrix.diagonal(), det))
}

fn main() -> Result<()> {
    run_example()?;
    Ok(())
}
