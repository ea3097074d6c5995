//! Acceptance suite. Runs every criterion, prints one line each, and exits
//! non-zero if any fails.

use std::process::ExitCode;
use std::time::Instant;

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::StandardNormal;

use structured_ngd::distributions::{
    seeded_rng, GaussianSqrtCov, GaussianSqrtPrec, MatrixGaussianKron, MixtureGaussSqrtPrec, WishartSqrtPrec,
};
use structured_ngd::estimators::{
    entropy_correct, entropy_correct_cov, matgauss_gauss_newton, mean_wishart, stein_gauss_cov, stein_gauss_prec,
    Counting, GradBundle, MatrixObjective, Objective, SigmaForm, SigmaGrad,
};
use structured_ngd::matgroup::{
    kappa_congruence_hvp, kappa_project, local_basis, GroupElement, LocalDirection, StructureSpec, SymBasis,
};
use structured_ngd::optimizer::{
    run_baseline, run_gauss_prec, run_mixture, run_wishart, step_gauss_cov, step_gauss_prec, step_matgauss,
    step_wishart, Baseline, DistState, MapKind, NgdConfig,
};
use structured_ngd::estimators::EstimatorKind;
use structured_ngd::oracles::{
    dense_step_gauss_prec, dense_step_matgauss, fim_via_kl, matgauss_dense_grads, singular_fim_demo, FamilyState,
};
use structured_ngd::problems::{
    dixon_price, logistic_1d, matrix_regression, metric_nearness, rosenbrock, student_t_mixture, Quadratic,
};
use structured_ngd::special::{mv_trigamma, sigmoid};

type Outcome = Result<String, String>;

fn check(ok: bool, detail: String) -> Outcome {
    if ok {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn err<E: std::fmt::Display>(e: E) -> String {
    e.to_string()
}

fn randn_vec<R: Rng>(rng: &mut R, n: usize) -> DVector<f64> {
    DVector::from_fn(n, |_, _| rng.sample(StandardNormal))
}

fn randn_mat<R: Rng>(rng: &mut R, n: usize, m: usize) -> DMatrix<f64> {
    DMatrix::from_fn(n, m, |_, _| rng.sample(StandardNormal))
}

fn rand_sym<R: Rng>(rng: &mut R, n: usize) -> DMatrix<f64> {
    let x = randn_mat(rng, n, n);
    (&x + x.transpose()) * 0.5
}

fn slope(betas: &[f64], errs: &[f64]) -> f64 {
    let xs: Vec<f64> = betas.iter().map(|b| b.ln()).collect();
    let ys: Vec<f64> = errs.iter().map(|e| e.ln()).collect();
    let n = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let num: f64 = xs.iter().zip(&ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let den: f64 = xs.iter().map(|x| (x - mx).powi(2)).sum();
    num / den
}

// ---------------------------------------------------------------- 1

fn expected_prec_local(spec: &StructureSpec) -> Result<Vec<f64>, String> {
    Ok(local_basis(spec, SymBasis::Unit)
        .map_err(err)?
        .iter()
        .map(|b| {
            let d = b.dense();
            let nnz = d.iter().filter(|v| **v != 0.0).count();
            if d == d.transpose() {
                if nnz == 1 {
                    2.0
                } else {
                    4.0
                }
            } else {
                1.0
            }
        })
        .collect())
}

fn fim_values() -> Outcome {
    let start = Instant::now();
    let mut rng = seeded_rng(11);
    let mut worst: f64 = 0.0;
    let track = |name: &str, got: &DMatrix<f64>, want: &DMatrix<f64>, worst: &mut f64| -> Result<(), String> {
        if got.shape() != want.shape() {
            return Err(format!("{name}: shape mismatch"));
        }
        *worst = worst.max((got - want).amax());
        Ok(())
    };

    for spec in [
        StructureSpec::Full(4),
        StructureSpec::Diagonal(4),
        StructureSpec::BlockTriLower(5, 2),
        StructureSpec::HeisenbergUpper(6, 2, 1),
    ] {
        let p = spec.dim();
        let q = GaussianSqrtPrec::new(randn_vec(&mut rng, p), GroupElement::random(&spec, &mut rng, 0.3).map_err(err)?)
            .map_err(err)?;
        let f = fim_via_kl(&FamilyState::GaussPrec(q), SymBasis::Unit, 1e-3).map_err(err)?;
        let mut diag = vec![1.0; p];
        diag.extend(expected_prec_local(&spec)?);
        track(&spec.label(), &f.matrix, &DMatrix::from_diagonal(&DVector::from_vec(diag)), &mut worst)?;
    }

    for spec in [StructureSpec::Full(4), StructureSpec::Diagonal(3)] {
        let p = spec.dim();
        let q = GaussianSqrtCov::new(randn_vec(&mut rng, p), GroupElement::random(&spec, &mut rng, 0.3).map_err(err)?)
            .map_err(err)?;
        let f = fim_via_kl(&FamilyState::GaussCov(q), SymBasis::Orthonormal, 1e-3).map_err(err)?;
        let l = spec.local_dim();
        let mut diag = vec![1.0; p];
        diag.extend(vec![0.5; l]);
        track("cov", &f.matrix, &DMatrix::from_diagonal(&DVector::from_vec(diag)), &mut worst)?;
    }

    {
        let (d, p) = (2, 3);
        let a = GroupElement::random(&StructureSpec::Full(p), &mut rng, 0.3).map_err(err)?;
        let b = GroupElement::random(&StructureSpec::Full(d), &mut rng, 0.3).map_err(err)?;
        let q = MatrixGaussianKron::new(randn_mat(&mut rng, d, p), a, b).map_err(err)?;
        let f = fim_via_kl(&FamilyState::MatGauss(q), SymBasis::Orthonormal, 1e-3).map_err(err)?;
        // col/row cross terms are not zero (A c, B / c give the same law); the
        // stepper uses the block-diagonal Fisher, so only the blocks are checked
        let (lc, lr) = (p * (p + 1) / 2, d * (d + 1) / 2);
        let blocks = [("mean", d * p, 1.0), ("col", lc, 2.0 * d as f64), ("row", lr, 2.0 * p as f64)];
        for (name, n, v) in blocks {
            track(name, &f.block(name).ok_or("missing block")?, &(DMatrix::identity(n, n) * v), &mut worst)?;
        }
        for other in ["col", "row"] {
            let c = f.cross("mean", other).ok_or("missing block")?;
            track("mean cross", &c, &DMatrix::zeros(c.nrows(), c.ncols()), &mut worst)?;
        }
    }

    {
        let p = 3;
        let shape = 0.7;
        let q = WishartSqrtPrec::new(shape, GroupElement::random(&StructureSpec::Full(p), &mut rng, 0.3).map_err(err)?)
            .map_err(err)?;
        let n = q.dof();
        let f = fim_via_kl(&FamilyState::Wishart(q), SymBasis::Orthonormal, 1e-3).map_err(err)?;
        let dof_want = sigmoid(shape).powi(2) * (mv_trigamma(p, n / 2.0) - 2.0 * p as f64 / n);
        let dof_got = f.block("dof").ok_or("missing dof block")?;
        worst = worst.max((dof_got[(0, 0)] - dof_want).abs());
        let m = f.block("local").ok_or("missing local block")?;
        let l = m.nrows();
        track("wishart", &m, &(DMatrix::identity(l, l) * (2.0 * n)), &mut worst)?;
    }

    let secs = start.elapsed().as_secs_f64();
    check(worst < 1e-4 && secs < 30.0, format!("max abs deviation {worst:.2e}, {secs:.1} s"))
}

// ---------------------------------------------------------------- 2

fn singular_fim() -> Outcome {
    #[rustfmt::skip]
    let printed = DMatrix::from_row_slice(6, 6, &[
        0.5, 0.0, 0.0, 0.5, 0.0, 0.0,
        0.0, 2.0, 0.0, 0.0, 0.0, 0.0,
        0.0, 0.0, 2.0, 0.0, 0.0, 0.0,
        0.5, 0.0, 0.0, 0.5, 0.0, 0.0,
        0.0, 0.0, 0.0, 0.0, 0.5, 0.0,
        0.0, 0.0, 0.0, 0.0, 0.0, 0.5,
    ]);
    let (f, det) = singular_fim_demo().map_err(err)?;
    let dev = (&f.matrix - printed).amax();
    check(dev <= 1e-12 && det.abs() < 1e-10, format!("entry deviation {dev:.1e}, |det| {:.1e}", det.abs()))
}

// ---------------------------------------------------------------- 3

fn dense_bundle<R: Rng>(rng: &mut R, p: usize) -> GradBundle {
    GradBundle { mean_grad: randn_vec(rng, p), sigma: SigmaGrad::Dense(rand_sym(rng, p)), loss: 0.0 }
}

fn structured_equals_dense() -> Outcome {
    let p = 8;
    let beta = 0.1;
    let mut rng = seeded_rng(3);
    let mut worst: f64 = 0.0;
    let specs = [
        StructureSpec::Full(p),
        StructureSpec::Diagonal(p),
        StructureSpec::BlockTriUpper(p, 3),
        StructureSpec::BlockTriLower(p, 3),
        StructureSpec::HeisenbergUpper(p, 2, 3),
        StructureSpec::HeisenbergLower(p, 2, 3),
    ];
    for spec in &specs {
        let q = GaussianSqrtPrec::new(randn_vec(&mut rng, p), GroupElement::random(spec, &mut rng, 0.3).map_err(err)?)
            .map_err(err)?;
        let gb = dense_bundle(&mut rng, p);
        let SigmaGrad::Dense(gs) = &gb.sigma else { unreachable!() };
        let fast = step_gauss_prec(&q, &gb, beta, MapKind::H).map_err(err)?;
        let (mean, factor) = dense_step_gauss_prec(&q, &gb.mean_grad, gs, beta).map_err(err)?;
        worst = worst.max((&fast.mean - mean).amax()).max((fast.factor.dense() - factor).amax());
    }

    // full group against the plain dense symmetric update
    let full = GroupElement::random(&StructureSpec::Full(p), &mut rng, 0.3).map_err(err)?;
    let q = GaussianSqrtPrec::new(randn_vec(&mut rng, p), full.clone()).map_err(err)?;
    let gb = dense_bundle(&mut rng, p);
    let SigmaGrad::Dense(gs) = &gb.sigma else { unreachable!() };
    let b = full.dense();
    let b_inv = b.clone().try_inverse().ok_or("singular")?;
    let m = &b_inv * gs * b_inv.transpose() * beta;
    let want_factor = &b * (DMatrix::identity(p, p) + &m + &m * &m * 0.5);
    let want_mean = &q.mean - (&b * b.transpose()).try_inverse().ok_or("singular")? * &gb.mean_grad * beta;
    let got = step_gauss_prec(&q, &gb, beta, MapKind::H).map_err(err)?;
    worst = worst.max((got.factor.dense() - want_factor).amax()).max((&got.mean - want_mean).amax());

    let tri_full = GroupElement::from_dense(&StructureSpec::BlockTriUpper(p, p), &b).map_err(err)?;
    let got_tri = step_gauss_prec(&GaussianSqrtPrec::new(q.mean.clone(), tri_full).map_err(err)?, &gb, beta, MapKind::H)
        .map_err(err)?;
    worst = worst.max((got_tri.factor.dense() - got.factor.dense()).amax());

    let tri = GroupElement::random(&StructureSpec::BlockTriUpper(p, 3), &mut rng, 0.3).map_err(err)?;
    let hs = GroupElement::from_dense(&StructureSpec::HeisenbergUpper(p, 3, 0), &tri.dense()).map_err(err)?;
    let a = step_gauss_prec(&GaussianSqrtPrec::new(q.mean.clone(), tri).map_err(err)?, &gb, beta, MapKind::H).map_err(err)?;
    let c = step_gauss_prec(&GaussianSqrtPrec::new(q.mean.clone(), hs).map_err(err)?, &gb, beta, MapKind::H).map_err(err)?;
    worst = worst.max((a.factor.dense() - c.factor.dense()).amax()).max((&a.mean - &c.mean).amax());

    check(worst <= 1e-10, format!("{} structures plus reductions, max abs deviation {worst:.1e}", specs.len()))
}

// ---------------------------------------------------------------- 4

fn order_of_accuracy() -> Outcome {
    let p = 5;
    let mut rng = seeded_rng(4);
    let q = GaussianSqrtPrec::new(
        DVector::zeros(p),
        GroupElement::random(&StructureSpec::Full(p), &mut rng, 0.3).map_err(err)?,
    )
    .map_err(err)?;
    let gb = dense_bundle(&mut rng, p);
    let SigmaGrad::Dense(gs) = &gb.sigma else { unreachable!() };
    let s = q.precision();
    let s_inv = s.clone().try_inverse().ok_or("singular")?;
    let g = gs * 2.0;
    let betas = [1e-1, 5e-2, 2.5e-2];
    let mut slopes = Vec::new();
    for map in [MapKind::H, MapKind::Exp] {
        let mut errs = Vec::new();
        for &beta in &betas {
            let next = step_gauss_prec(&q, &gb, beta, map).map_err(err)?.precision();
            let want = &s + &g * beta + &g * &s_inv * &g * (beta * beta / 2.0);
            errs.push((next - want).norm());
        }
        slopes.push(slope(&betas, &errs));
    }
    check(slopes.iter().all(|s| *s >= 2.9), format!("log-log slope h-map {:.3}, exp-map {:.3}", slopes[0], slopes[1]))
}

// ---------------------------------------------------------------- 5

fn rgd_errors(obj: &dyn MatrixObjective, init: &WishartSqrtPrec, beta1: f64, steps: usize) -> Result<(f64, f64), String> {
    let mut q = init.clone();
    let n = q.dof();
    let beta = 0.5 * beta1 * n;
    let mut u = q.factor.dense() * q.factor.dense().transpose();
    let mut worst_u: f64 = 0.0;
    let mut worst_b: f64 = 0.0;
    for _ in 0..steps {
        let z = u.clone().try_inverse().ok_or("singular")?;
        let g = obj.grad(&z);
        let u_next = &u + &g * beta1 + &g * &z * &g * (beta1 * beta1 / 2.0);
        let grad = mean_wishart(&q, obj).map_err(err)?;
        let next = step_wishart(&q, &grad, beta).map_err(err)?;
        worst_b = worst_b.max((next.shape_param - q.shape_param).abs());
        q = next;
        u = u_next;
        let ours = q.factor.dense() * q.factor.dense().transpose();
        worst_u = worst_u.max((ours - &u).norm());
    }
    Ok((worst_u, worst_b))
}

fn wishart_rgd() -> Outcome {
    let p = 5;
    let obj = metric_nearness(p, 200, 50, 5).map_err(err)?;
    let init = WishartSqrtPrec::with_mean(&DMatrix::identity(p, p), (p + 5) as f64).map_err(err)?;
    let betas = [WISHART_BETA1, WISHART_BETA1 / 2.0, WISHART_BETA1 / 4.0];
    let mut errs = Vec::new();
    let mut worst_b: f64 = 0.0;
    for &b in &betas {
        let (eu, eb) = rgd_errors(&obj, &init, b, 20)?;
        errs.push(eu);
        worst_b = worst_b.max(eb);
    }
    let s = slope(&betas, &errs);
    check(worst_b <= 1e-12 && s >= 2.9, format!("max |b_t+1 - b_t| {worst_b:.1e}, trajectory error slope {s:.3}"))
}

const WISHART_BETA1: f64 = 0.2;

// ---------------------------------------------------------------- 6

fn invariance() -> Outcome {
    let obj = logistic_1d(50, 6).map_err(err)?;
    let beta = 0.1;
    let gamma = 1.0;
    let mut prec = GaussianSqrtPrec::new(DVector::from_element(1, 0.0), GroupElement::identity(&StructureSpec::Full(1)).map_err(err)?)
        .map_err(err)?;
    let mut cov = GaussianSqrtCov::new(DVector::from_element(1, 0.0), GroupElement::identity(&StructureSpec::Full(1)).map_err(err)?)
        .map_err(err)?;
    // gradient descent in (mu, ln sigma^2) and in (mu, ln sigma)
    let (mut m1, mut lv1) = (0.0_f64, 0.0_f64);
    let (mut m2, mut ls2) = (0.0_f64, 0.0_f64);
    let mut ngd_gap: f64 = 0.0;
    let mut gd_gap: f64 = 0.0;
    let mut rng = seeded_rng(0);
    for _ in 0..100 {
        let gp = entropy_correct(
            &stein_gauss_prec(&prec, &obj, &mut rng, 1, true, SigmaForm::Dense).map_err(err)?,
            &prec,
            gamma,
        )
        .map_err(err)?;
        let gc = entropy_correct_cov(&stein_gauss_cov(&cov, &obj, &mut rng, 1, true).map_err(err)?, &cov, gamma).map_err(err)?;
        prec = step_gauss_prec(&prec, &gp, beta, MapKind::Exp).map_err(err)?;
        cov = step_gauss_cov(&cov, &gc, beta, MapKind::Exp).map_err(err)?;
        let var_p = prec.covariance().map_err(err)?[(0, 0)];
        let var_c = cov.covariance()[(0, 0)];
        ngd_gap = ngd_gap.max((prec.mean[0] - cov.mean[0]).abs()).max((var_p - var_c).abs());

        // at-mean gradients: g_mu = l'(mu), g_var = l''(mu)/2 - gamma / (2 var)
        let v1 = lv1.exp();
        let (gm, gv) = (obj.slope(m1), 0.5 * obj.curvature(m1) - 0.5 * gamma / v1);
        m1 -= beta * gm;
        lv1 -= beta * v1 * gv;
        let v2 = (2.0 * ls2).exp();
        let (gm, gv) = (obj.slope(m2), 0.5 * obj.curvature(m2) - 0.5 * gamma / v2);
        m2 -= beta * gm;
        ls2 -= beta * 2.0 * v2 * gv;
        gd_gap = gd_gap.max((m1 - m2).abs()).max((lv1.exp() - (2.0 * ls2).exp()).abs());
    }
    check(ngd_gap <= 1e-10 && gd_gap > 1e-3, format!("NGD max gap {ngd_gap:.1e}, GD max gap {gd_gap:.2e}"))
}

// ---------------------------------------------------------------- 7

fn newton_fixed_point() -> Outcome {
    let p = 10;
    let obj = Quadratic::random(p, 0.5, 3.0, 7).map_err(err)?;
    let cfg = NgdConfig { beta: 1.0, gamma: 1.0, iters: 50, estimator: EstimatorKind::Mean, ..NgdConfig::default() };
    let init = GaussianSqrtPrec::standard(&StructureSpec::Full(p)).map_err(err)?;
    let (q, _) = run_gauss_prec(&obj, init, &cfg).map_err(err)?;
    let dm = (&q.mean - &obj.optimum).norm();
    let ds = (q.precision() - &obj.hessian).norm();
    check(dm < 1e-8 && ds < 1e-6, format!("|mu - w*| {dm:.1e}, |S - H|_F {ds:.1e} after 50 iterations"))
}

// ---------------------------------------------------------------- 8

const VALLEY_BETA: f64 = 0.3;
const VALLEY_ITERS: usize = 2000;

fn valley_case(obj: &dyn Objective, name: &str, init: DVector<f64>) -> Result<(f64, f64, String), String> {
    let p = obj.dim();
    let spec = StructureSpec::HeisenbergLower(p, 10, 10);
    let cfg = NgdConfig { beta: VALLEY_BETA, gamma: 1.0, iters: VALLEY_ITERS, estimator: EstimatorKind::Mean, ..NgdConfig::default() };
    let start = GaussianSqrtPrec::new(init.clone(), GroupElement::identity(&spec).map_err(err)?).map_err(err)?;
    let (q, _) = run_gauss_prec(obj, start, &cfg).map_err(err)?;
    let ngd = obj.loss(&q.mean);
    let mut best = f64::INFINITY;
    let mut best_lr = 0.0;
    for lr in [1e-3, 3e-3, 1e-2, 3e-2, 1e-1, 3e-1] {
        if let Ok((w, _)) = run_baseline(obj, init.clone(), Baseline::Adam { lr }, VALLEY_ITERS) {
            let l = obj.loss(&w);
            if l < best {
                best = l;
                best_lr = lr;
            }
        }
    }
    Ok((ngd, best, format!("{name}: ngd {ngd:.2e} vs adam(lr={best_lr}) {best:.2e}")))
}

fn structured_second_order() -> Outcome {
    let start = Instant::now();
    let p = 200;
    let rb = rosenbrock(p).map_err(err)?;
    let dp = dixon_price(p).map_err(err)?;
    let init = DVector::from_element(p, -1.5);
    let (n1, a1, d1) = valley_case(&rb, "rosenbrock", init.clone())?;
    let (n2, a2, d2) = valley_case(&dp, "dixon-price", init)?;
    let secs = start.elapsed().as_secs_f64();
    check(
        n1 * 10.0 <= a1 && n2 * 10.0 <= a2 && secs < 120.0,
        format!("{d1}; {d2}; {secs:.1} s"),
    )
}

// ---------------------------------------------------------------- 9

const MN_REP_BETA: f64 = 0.5;
const MN_REP_ITERS: usize = 2000;
// the two recursions differ at third order, so a 1e-6 gap needs a small step
const MN_RGD_BETA1: f64 = 0.001;

fn metric_nearness_check() -> Outcome {
    let p = 10;
    let obj = metric_nearness(p, 500, 200, 9).map_err(err)?;
    let base = obj.test_loss(&DMatrix::identity(p, p));
    let init = WishartSqrtPrec::with_mean(&DMatrix::identity(p, p), (p + 10) as f64).map_err(err)?;
    let cfg = NgdConfig {
        beta: MN_REP_BETA,
        gamma: 0.0,
        iters: MN_REP_ITERS,
        estimator: EstimatorKind::Reparam,
        mc_samples: 1,
        seed: 9,
        ..NgdConfig::default()
    };
    let (q, _) = run_wishart(&obj, init.clone(), &cfg).map_err(err)?;
    let rep = obj.test_loss(&q.mean().map_err(err)?);
    let (rgd_gap, _) = rgd_errors(&obj, &init, MN_RGD_BETA1, 10)?;
    check(
        rep < 1e-2 * base && rgd_gap <= 1e-6,
        format!("rep test loss {rep:.2e} (threshold {:.2e}), at-mean vs RGD max gap {rgd_gap:.1e}", 1e-2 * base),
    )
}

// ---------------------------------------------------------------- 10

fn neg_elbo(q: &MixtureGaussSqrtPrec, obj: &dyn Objective, seed: u64, n: usize) -> Result<f64, String> {
    let mut rng = seeded_rng(seed);
    let xs = q.sample(&mut rng, n).map_err(err)?;
    let mut total = 0.0;
    for x in &xs {
        total += obj.loss(x) + q.log_density(x).map_err(err)?;
    }
    Ok(total / n as f64)
}

const MIX_BETA: f64 = 0.02;

fn mixture_vi() -> Outcome {
    let (p, k, c) = (4, 3, 2);
    let target = student_t_mixture(p, c, 2.0, 3.0, 10).map_err(err)?;
    let spec = StructureSpec::BlockTriUpper(p, 2);
    let mut rng = seeded_rng(100);
    let comps = (0..k)
        .map(|_| GaussianSqrtPrec::new(randn_vec(&mut rng, p), GroupElement::identity(&spec)?))
        .collect::<structured_ngd::Result<Vec<_>>>()
        .map_err(err)?;
    let init = MixtureGaussSqrtPrec::new(comps).map_err(err)?;
    let before = neg_elbo(&init, &target, 1, 20000)?;
    let cfg = NgdConfig { beta: MIX_BETA, gamma: 1.0, iters: 500, mc_samples: 10, seed: 10, ..NgdConfig::default() };
    let (q, _) = run_mixture(&target, init, &cfg).map_err(err)?;
    let spd = q.components.iter().all(|c| c.precision().cholesky().is_some());
    let after = neg_elbo(&q, &target, 1, 20000)?;
    check(
        spd && after <= 0.5 * before,
        format!("gap {before:.3} -> {after:.3} ({:.0}% reduction)", 100.0 * (1.0 - after / before)),
    )
}

// ---------------------------------------------------------------- 11

fn kron_matrix_gaussian() -> Outcome {
    let (d, p) = (2, 3);
    let obj = matrix_regression(d, p, 40, 0.1, 11).map_err(err)?;
    let (alpha, gamma, beta) = (0.5, 1.0, 0.2);
    let col = StructureSpec::HeisenbergLower(p, 1, 1);
    let row = StructureSpec::Full(d);
    let mut rng = seeded_rng(12);
    let init = MatrixGaussianKron::new(
        randn_mat(&mut rng, d, p),
        GroupElement::random(&col, &mut rng, 0.2).map_err(err)?,
        GroupElement::random(&row, &mut rng, 0.2).map_err(err)?,
    )
    .map_err(err)?;
    let mut state = DistState::new(init);
    let mut worst: f64 = 0.0;
    for t in 0..20 {
        let mut r1 = seeded_rng(1000 + t);
        let mut r2 = r1.clone();
        let g = matgauss_gauss_newton(&state.dist, &obj, &mut r1, 3, alpha, gamma).map_err(err)?;
        let (gm, gs) = matgauss_dense_grads(&state.dist, &obj, &mut r2, 3, alpha, gamma).map_err(err)?;
        let (mean, a, b) = dense_step_matgauss(&state.dist, &gm, &gs, beta).map_err(err)?;
        state = step_matgauss(&state, &g, beta, None, MapKind::H).map_err(err)?;
        worst = worst
            .max((&state.dist.mean - mean).amax())
            .max((state.dist.col_factor.dense() - a).amax())
            .max((state.dist.row_factor.dense() - b).amax());
    }
    check(worst <= 1e-10, format!("20 steps, max abs deviation {worst:.1e}"))
}

// ---------------------------------------------------------------- 12

fn hvp_kernel() -> Outcome {
    let p = 16;
    let obj = student_t_mixture(p, 3, 2.0, 1.0, 12).map_err(err)?;
    let mut rng = seeded_rng(13);
    let mut worst: f64 = 0.0;
    let mut calls_ok = true;
    let mut counts = Vec::new();
    for k in [1, 3, 5] {
        for spec in [StructureSpec::BlockTriUpper(p, k), StructureSpec::BlockTriLower(p, k)] {
            let factor = GroupElement::random(&spec, &mut rng, 0.3).map_err(err)?;
            let w = randn_vec(&mut rng, p);
            let h = obj.dense_hessian(&w);
            let dense = kappa_project(&factor.congruence_inv(&h).map_err(err)?, &spec).map_err(err)?;
            let diag = obj.hess_diag(&w).map_err(err)?;
            let fast = kappa_congruence_hvp(&factor, &diag, |v| obj.hvp(&w, v)).map_err(err)?;
            worst = worst.max(fast.sub(&dense).map_err(err)?.max_abs());

            let n = 4;
            let counting = Counting::new(&obj);
            let q = GaussianSqrtPrec::new(w.clone(), factor).map_err(err)?;
            stein_gauss_prec(&q, &counting, &mut rng, n, false, SigmaForm::Projected).map_err(err)?;
            calls_ok &= counting.hvp_calls() == k * n;
            counts.push(counting.hvp_calls() / n);
        }
    }
    check(worst <= 1e-9 && calls_ok, format!("max abs deviation {worst:.1e}, HVPs per sample {counts:?}"))
}

// ---------------------------------------------------------------- 13

fn complexity() -> Outcome {
    let k = 4;
    let mut per_p = Vec::new();
    for p in [256usize, 512, 1024] {
        let spec = StructureSpec::BlockTriUpper(p, k);
        let mut rng = seeded_rng(p as u64);
        let q = GaussianSqrtPrec::new(randn_vec(&mut rng, p), GroupElement::random(&spec, &mut rng, 0.1).map_err(err)?)
            .map_err(err)?;
        let dir = LocalDirection::identity_projection(&spec).map_err(err)?.scale(0.01);
        let gb = GradBundle { mean_grad: randn_vec(&mut rng, p), sigma: SigmaGrad::Projected(dir), loss: 0.0 };
        let mut best = f64::INFINITY;
        for _ in 0..5 {
            let t = Instant::now();
            for _ in 0..20 {
                std::hint::black_box(step_gauss_prec(&q, &gb, 0.1, MapKind::H).map_err(err)?);
            }
            best = best.min(t.elapsed().as_secs_f64() / 20.0);
        }
        per_p.push((p, best));
    }
    let ratios: Vec<f64> = per_p.iter().map(|(p, t)| t / *p as f64).collect();
    let spread = ratios.iter().cloned().fold(f64::MIN, f64::max) / ratios.iter().cloned().fold(f64::MAX, f64::min);
    let times: Vec<String> = per_p.iter().map(|(p, t)| format!("p={p}: {:.1} us", t * 1e6)).collect();
    check(spread <= 2.0, format!("{}; time/p spread {spread:.2}", times.join(", ")))
}

fn main() -> ExitCode {
    let criteria: [(&str, fn() -> Outcome); 13] = [
        ("fisher values from KL curvature", fim_values),
        ("singular Fisher regression", singular_fim),
        ("structured step equals dense natural gradient", structured_equals_dense),
        ("third-order agreement with the Newton-type update", order_of_accuracy),
        ("Wishart at-mean reduces to RGD", wishart_rgd),
        ("parameterization invariance on 1-D logistic", invariance),
        ("Newton fixed point on a quadratic", newton_fixed_point),
        ("structured second-order vs tuned Adam", structured_second_order),
        ("metric nearness", metric_nearness_check),
        ("mixture VI gap reduction", mixture_vi),
        ("Kronecker matrix Gaussian vs dense oracle", kron_matrix_gaussian),
        ("HVP kernel equals dense projection", hvp_kernel),
        ("linear-time precision step", complexity),
    ];
    let filter: Vec<String> = std::env::args().skip(1).filter(|a| !a.starts_with('-')).collect();
    let mut failed = 0;
    for (i, (name, f)) in criteria.iter().enumerate() {
        let id = format!("{:02}", i + 1);
        if !filter.is_empty() && !filter.iter().any(|x| *x == id) {
            continue;
        }
        let t = Instant::now();
        let outcome = f();
        let secs = t.elapsed().as_secs_f64();
        match outcome {
            Ok(d) => println!("acceptance {id} PASS  {name}: {d} [{secs:.2}s]"),
            Err(d) => {
                failed += 1;
                println!("acceptance {id} FAIL  {name}: {d} [{secs:.2}s]");
            }
        }
    }
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        println!("{failed} acceptance criteria failed");
        ExitCode::FAILURE
    }
}
