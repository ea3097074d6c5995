mod common;

use common::{randn_vec, structure};
use proptest::prelude::*;
use structured_ngd::distributions::{seeded_rng, GaussianSqrtCov, GaussianSqrtPrec};
use structured_ngd::matgroup::{GroupElement, StructureSpec, SymBasis};
use structured_ngd::oracles::{fim_via_kl, fim_via_score_mc, FamilyState};

proptest! {
    #![proptest_config(ProptestConfig::with_cases(16))]

    #[test]
    fn mean_and_factor_blocks_decouple(spec in structure(5), seed in any::<u64>()) {
        let mut rng = seeded_rng(seed);
        let p = spec.dim();
        let q = GaussianSqrtPrec::new(randn_vec(&mut rng, p), GroupElement::random(&spec, &mut rng, 0.3).unwrap()).unwrap();
        let f = fim_via_kl(&FamilyState::GaussPrec(q), SymBasis::Unit, 1e-3).unwrap();
        prop_assert!((&f.matrix - f.matrix.transpose()).amax() < 1e-8);
        if spec.local_dim() > 0 {
            prop_assert!(f.cross("mean", "local").unwrap().amax() < 1e-4);
        }
    }

    #[test]
    fn covariance_form_is_half_identity(p in 1usize..5, diag in any::<bool>(), seed in any::<u64>()) {
        let spec = if diag { StructureSpec::Diagonal(p) } else { StructureSpec::Full(p) };
        let mut rng = seeded_rng(seed);
        let q = GaussianSqrtCov::new(randn_vec(&mut rng, p), GroupElement::random(&spec, &mut rng, 0.3).unwrap()).unwrap();
        let f = fim_via_kl(&FamilyState::GaussCov(q), SymBasis::Orthonormal, 1e-3).unwrap();
        let local = f.block("local").unwrap();
        let n = local.nrows();
        prop_assert!((local - nalgebra::DMatrix::identity(n, n) * 0.5).amax() < 1e-4);
        prop_assert!(f.cross("mean", "local").unwrap().amax() < 1e-4);
    }
}

#[test]
fn score_estimate_agrees_with_kl_curvature() {
    let mut rng = seeded_rng(61);
    let spec = StructureSpec::BlockTriLower(3, 1);
    let q = GaussianSqrtPrec::new(randn_vec(&mut rng, 3), GroupElement::random(&spec, &mut rng, 0.3).unwrap()).unwrap();
    let state = FamilyState::GaussPrec(q);
    let kl = fim_via_kl(&state, SymBasis::Unit, 1e-3).unwrap();
    let mc = fim_via_score_mc(&state, SymBasis::Unit, 7, 200_000).unwrap();
    let dev = (&kl.matrix - &mc.matrix).amax();
    assert!(dev < 0.1, "deviation {dev}");
}
