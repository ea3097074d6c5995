mod common;

use common::randn_vec;
use nalgebra::{DMatrix, DVector};
use structured_ngd::distributions::{seeded_rng, GaussianSqrtPrec};
use structured_ngd::estimators::{
    reinforce_gauss_prec, reparam_gauss_prec, stein_gauss_prec, GradBundle, SigmaForm, SigmaGrad,
};
use structured_ngd::matgroup::{GroupElement, StructureSpec};
use structured_ngd::problems::Quadratic;

fn error(g: &GradBundle, mean: &DVector<f64>, sigma: &DMatrix<f64>) -> f64 {
    let SigmaGrad::Dense(s) = &g.sigma else { panic!("dense form requested") };
    ((&g.mean_grad - mean).norm_squared() + (s - sigma).norm_squared()).sqrt()
}

#[test]
fn estimators_agree_and_converge_at_root_n() {
    let p = 3;
    let obj = Quadratic::random(p, 0.5, 2.0, 41).unwrap();
    let mut rng = seeded_rng(42);
    let q = GaussianSqrtPrec::new(randn_vec(&mut rng, p), GroupElement::random(&StructureSpec::Full(p), &mut rng, 0.3).unwrap())
        .unwrap();
    // exact gradients of E[loss] for a quadratic
    let mean = &obj.hessian * (&q.mean - &obj.optimum);
    let sigma = &obj.hessian * 0.5;
    let sizes = [1_000usize, 10_000, 100_000];
    let reps = 8;
    type Est = fn(&GaussianSqrtPrec, &Quadratic, &mut rand_chacha::ChaCha8Rng, usize) -> GradBundle;
    let estimators: [(&str, Est); 3] = [
        ("reinforce", |q, o, r, n| reinforce_gauss_prec(q, o, r, n, SigmaForm::Dense).unwrap()),
        ("reparam", |q, o, r, n| reparam_gauss_prec(q, o, r, n, SigmaForm::Dense).unwrap()),
        ("stein", |q, o, r, n| stein_gauss_prec(q, o, r, n, false, SigmaForm::Dense).unwrap()),
    ];
    for (name, est) in estimators {
        let rms: Vec<f64> = sizes
            .iter()
            .map(|&n| {
                let sq: f64 = (0..reps)
                    .map(|s| error(&est(&q, &obj, &mut seeded_rng(1000 + s), n), &mean, &sigma).powi(2))
                    .sum();
                (sq / reps as f64).sqrt()
            })
            .collect();
        let slope = (rms[2] / rms[0]).ln() / (sizes[2] as f64 / sizes[0] as f64).ln();
        assert!((-0.7..=-0.3).contains(&slope), "{name}: errors {rms:?}, slope {slope}");
        // unbiased: with 1e5 samples every estimator sits near the exact value
        assert!(rms[2] < 0.1 * (mean.norm() + sigma.norm()), "{name}: {rms:?}");
    }
}
