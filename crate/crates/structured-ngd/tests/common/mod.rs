#![allow(dead_code)]

use nalgebra::{DMatrix, DVector};
use proptest::prelude::*;
use rand::Rng;
use rand_distr::StandardNormal;
use structured_ngd::matgroup::StructureSpec;

/// Every non-Kronecker structure with `2 <= p <= max_p` and valid block sizes.
pub fn structure(max_p: usize) -> impl Strategy<Value = StructureSpec> {
    (2..=max_p, 0usize..6, any::<u32>()).prop_map(|(p, kind, bits)| {
        let k = bits as usize % (p + 1);
        let k1 = (bits as usize >> 8) % (p + 1);
        let k2 = (bits as usize >> 16) % (p - k1 + 1);
        match kind {
            0 => StructureSpec::Full(p),
            1 => StructureSpec::Diagonal(p),
            2 => StructureSpec::BlockTriUpper(p, k),
            3 => StructureSpec::BlockTriLower(p, k),
            4 => StructureSpec::HeisenbergUpper(p, k1, k2),
            _ => StructureSpec::HeisenbergLower(p, k1, k2),
        }
    })
}

pub fn randn_vec<R: Rng>(rng: &mut R, n: usize) -> DVector<f64> {
    DVector::from_fn(n, |_, _| rng.sample(StandardNormal))
}

pub fn randn_mat<R: Rng>(rng: &mut R, r: usize, c: usize) -> DMatrix<f64> {
    DMatrix::from_fn(r, c, |_, _| rng.sample(StandardNormal))
}

pub fn rand_sym<R: Rng>(rng: &mut R, n: usize) -> DMatrix<f64> {
    let a = randn_mat(rng, n, n);
    (&a + a.transpose()) * 0.5
}
