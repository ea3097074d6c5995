mod common;

use common::{rand_sym, structure};
use nalgebra::{DMatrix, DVector};
use proptest::prelude::*;
use structured_ngd::distributions::seeded_rng;
use structured_ngd::matgroup::{
    covariance_lowrank, exp_map, h_map, kappa_congruence_hvp, kappa_project, precision_dense, GroupElement,
    StructureSpec,
};

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn products_stay_in_the_group(spec in structure(9), seed in any::<u64>()) {
        let mut rng = seeded_rng(seed);
        let a = GroupElement::random(&spec, &mut rng, 0.5).unwrap();
        let b = GroupElement::random(&spec, &mut rng, 0.5).unwrap();
        let ab = a.mul(&b).unwrap();
        prop_assert!(ab.validate().is_ok());
        prop_assert_eq!(ab.structure(), &spec);
        prop_assert!((ab.dense() - a.dense() * b.dense()).amax() < 1e-10);
    }

    #[test]
    fn inverses_stay_in_the_group(spec in structure(9), seed in any::<u64>()) {
        let mut rng = seeded_rng(seed);
        let a = GroupElement::random(&spec, &mut rng, 0.5).unwrap();
        let inv = a.inverse().unwrap();
        prop_assert!(inv.validate().is_ok());
        let p = spec.dim();
        prop_assert!((a.dense() * inv.dense() - DMatrix::identity(p, p)).amax() < 1e-9);
    }

    #[test]
    fn h_map_lands_in_the_group(spec in structure(9), seed in any::<u64>(), scale in 0.01f64..2.0) {
        let mut rng = seeded_rng(seed);
        let p = spec.dim();
        let m = kappa_project(&rand_sym(&mut rng, p), &spec).unwrap().scale(scale);
        let g = h_map(&m).unwrap();
        prop_assert!(g.validate().is_ok());
        prop_assert!(g.dense().determinant() > 0.0);
    }

    #[test]
    fn local_space_is_a_vector_space(spec in structure(9), seed in any::<u64>(), alpha in -3.0f64..3.0) {
        let mut rng = seeded_rng(seed);
        let p = spec.dim();
        let m1 = kappa_project(&rand_sym(&mut rng, p), &spec).unwrap();
        let m2 = kappa_project(&rand_sym(&mut rng, p), &spec).unwrap();
        let combo = m1.scale(alpha).add(&m2).unwrap();
        prop_assert_eq!(combo.structure(), &spec);
        prop_assert!((combo.dense() - (m1.dense() * alpha + m2.dense())).amax() < 1e-12);
        prop_assert!(h_map(&combo.scale(0.1)).unwrap().validate().is_ok());
    }

    #[test]
    fn exp_and_h_agree_to_third_order(p in 2usize..7, diag in any::<bool>(), seed in any::<u64>()) {
        let spec = if diag { StructureSpec::Diagonal(p) } else { StructureSpec::Full(p) };
        let mut rng = seeded_rng(seed);
        let m = kappa_project(&rand_sym(&mut rng, p), &spec).unwrap();
        let ratios: Vec<f64> = [1e-1, 5e-2, 2.5e-2]
            .iter()
            .map(|&t| {
                let mt = m.scale(t);
                (exp_map(&mt).unwrap().dense() - h_map(&mt).unwrap().dense()).norm() / t.powi(3)
            })
            .collect();
        // bounded: the ratio tends to |M^3| / 6 and never grows as t shrinks
        let bound = m.dense().pow(3).norm() / 6.0 * 1.5 + 1e-9;
        prop_assert!(ratios.iter().all(|r| *r <= bound), "{ratios:?} vs {bound}");
    }

    #[test]
    fn low_rank_covariance_matches_dense_inverse(p in 2usize..=16, k in 0usize..=16, seed in any::<u64>()) {
        let spec = StructureSpec::BlockTriUpper(p, k.min(p));
        let mut rng = seeded_rng(seed);
        let b = GroupElement::random(&spec, &mut rng, 0.4).unwrap();
        let cov = covariance_lowrank(&b).unwrap().dense();
        let want = precision_dense(&b).try_inverse().unwrap();
        prop_assert!((cov - &want).amax() < 1e-8 * want.amax().max(1.0));
    }

    #[test]
    fn hvp_projection_matches_dense(spec in structure(16), seed in any::<u64>()) {
        let mut rng = seeded_rng(seed);
        let p = spec.dim();
        let b = GroupElement::random(&spec, &mut rng, 0.3).unwrap();
        let h = rand_sym(&mut rng, p);
        let fast = kappa_congruence_hvp(&b, &h.diagonal(), |v: &DVector<f64>| Ok(&h * v)).unwrap();
        let dense = kappa_project(&b.congruence_inv(&h).unwrap(), &spec).unwrap();
        let scale = dense.max_abs().max(1.0);
        prop_assert!(fast.sub(&dense).unwrap().max_abs() < 1e-9 * scale);
    }
}

#[test]
fn group_products_scale_linearly() {
    // O(k^2 p) products: time per dimension stays flat at fixed k
    let k = 4;
    let mut per_p = Vec::new();
    for p in [256, 512, 1024] {
        let spec = StructureSpec::BlockTriUpper(p, k);
        let mut rng = seeded_rng(p as u64);
        let a = GroupElement::random(&spec, &mut rng, 0.3).unwrap();
        let b = GroupElement::random(&spec, &mut rng, 0.3).unwrap();
        let best = (0..7)
            .map(|_| {
                let t = std::time::Instant::now();
                for _ in 0..50 {
                    std::hint::black_box(a.mul(&b).unwrap());
                }
                t.elapsed().as_secs_f64()
            })
            .fold(f64::INFINITY, f64::min);
        per_p.push(best / p as f64);
    }
    let (lo, hi) = per_p.iter().fold((f64::INFINITY, 0.0_f64), |(l, h), v| (l.min(*v), h.max(*v)));
    assert!(hi / lo < 2.0, "time per dimension {per_p:?}");
}
