//! Dense, structure-agnostic reference computations.
//!
//! Nothing here uses the block kernels for the quantity under test: Fisher matrices
//! come from finite differences of closed-form KL divergences or from score
//! outer products, and natural gradients from explicit Jacobians and a dense solve.

use std::ops::Range;

use nalgebra::{DMatrix, DVector};
use rand::Rng;

use crate::distributions::{
    seeded_rng, GaussianSqrtCov, GaussianSqrtPrec, MatrixGaussianKron, UnivariateEf, WishartSqrtPrec,
};
use crate::error::{Error, Result};
use crate::estimators::{MatrixObjective, Objective};
use crate::matgroup::{h_map, local_basis, GroupElement, LocalDirection, StructureSpec, SymBasis};

/// A distribution whose Fisher matrix can be probed.
#[derive(Clone, Debug, PartialEq)]
pub enum FamilyState {
    GaussPrec(GaussianSqrtPrec),
    GaussCov(GaussianSqrtCov),
    Wishart(WishartSqrtPrec),
    MatGauss(MatrixGaussianKron),
    Ef(UnivariateEf),
}

/// Fisher matrix with named coordinate blocks.
#[derive(Clone, Debug, PartialEq)]
pub struct FimMatrix {
    pub matrix: DMatrix<f64>,
    pub blocks: Vec<(String, Range<usize>)>,
}

impl FimMatrix {
    pub fn block(&self, name: &str) -> Option<DMatrix<f64>> {
        let (_, r) = self.blocks.iter().find(|(n, _)| n == name)?;
        Some(self.matrix.view((r.start, r.start), (r.len(), r.len())).into_owned())
    }

    pub fn cross(&self, a: &str, b: &str) -> Option<DMatrix<f64>> {
        let (_, ra) = self.blocks.iter().find(|(n, _)| n == a)?;
        let (_, rb) = self.blocks.iter().find(|(n, _)| n == b)?;
        Some(self.matrix.view((ra.start, rb.start), (ra.len(), rb.len())).into_owned())
    }
}

fn combine(basis: &[LocalDirection], coef: &[f64]) -> Result<LocalDirection> {
    let mut acc = basis[0].scale(coef[0]);
    for (b, c) in basis.iter().zip(coef).skip(1) {
        acc = acc.add(&b.scale(*c))?;
    }
    Ok(acc)
}

fn perturb_factor(g: &GroupElement, basis: &[LocalDirection], coef: &[f64], scale: f64) -> Result<GroupElement> {
    if basis.is_empty() {
        return Ok(g.clone());
    }
    g.mul(&h_map(&combine(basis, coef)?.scale(scale))?)
}

impl FamilyState {
    /// Coordinate blocks of the local chart.
    pub fn chart(&self) -> Result<Vec<(String, usize)>> {
        Ok(match self {
            FamilyState::GaussPrec(q) => vec![("mean".into(), q.dim()), ("local".into(), q.factor.structure().local_dim())],
            FamilyState::GaussCov(q) => vec![("mean".into(), q.dim()), ("local".into(), q.factor.structure().local_dim())],
            FamilyState::Wishart(q) => vec![("dof".into(), 1), ("local".into(), q.factor.structure().local_dim())],
            FamilyState::MatGauss(q) => {
                let (d, p) = q.shape();
                vec![
                    ("mean".into(), d * p),
                    ("col".into(), q.col_factor.structure().local_dim()),
                    ("row".into(), q.row_factor.structure().local_dim()),
                ]
            }
            FamilyState::Ef(q) => vec![("params".into(), q.params.len())],
        })
    }

    pub fn chart_dim(&self) -> Result<usize> {
        Ok(self.chart()?.iter().map(|(_, n)| n).sum())
    }

    /// The distribution at local coordinates `eta` (zero gives `self`).
    pub fn perturb(&self, eta: &DVector<f64>, basis: SymBasis) -> Result<FamilyState> {
        if eta.len() != self.chart_dim()? {
            return Err(Error::contract("coordinate vector has the wrong length"));
        }
        let e = eta.as_slice();
        Ok(match self {
            FamilyState::GaussPrec(q) => {
                let p = q.dim();
                let lb = local_basis(q.factor.structure(), basis)?;
                let mean = &q.mean + q.factor.solve_transpose(&DVector::from_column_slice(&e[..p]))?;
                FamilyState::GaussPrec(GaussianSqrtPrec::new(mean, perturb_factor(&q.factor, &lb, &e[p..], 1.0)?)?)
            }
            FamilyState::GaussCov(q) => {
                let p = q.dim();
                let lb = local_basis(q.factor.structure(), basis)?;
                let mean = &q.mean + q.factor.apply(&DVector::from_column_slice(&e[..p]))?;
                FamilyState::GaussCov(GaussianSqrtCov::new(mean, perturb_factor(&q.factor, &lb, &e[p..], 0.5)?)?)
            }
            FamilyState::Wishart(q) => {
                let lb = local_basis(q.factor.structure(), basis)?;
                FamilyState::Wishart(WishartSqrtPrec::new(q.shape_param + e[0], perturb_factor(&q.factor, &lb, &e[1..], 1.0)?)?)
            }
            FamilyState::MatGauss(q) => {
                let (d, p) = q.shape();
                let cb = local_basis(q.col_factor.structure(), basis)?;
                let rb = local_basis(q.row_factor.structure(), basis)?;
                let delta = DMatrix::from_column_slice(d, p, &e[..d * p]);
                let shifted = q.transform(&delta)?;
                let (c0, c1) = (d * p, d * p + cb.len());
                FamilyState::MatGauss(MatrixGaussianKron::new(
                    shifted,
                    perturb_factor(&q.col_factor, &cb, &e[c0..c1], 1.0)?,
                    perturb_factor(&q.row_factor, &rb, &e[c1..], 1.0)?,
                )?)
            }
            FamilyState::Ef(q) => FamilyState::Ef(UnivariateEf::new(&q.params + eta, q.family, q.link)?),
        })
    }

    pub fn kl(&self, other: &FamilyState) -> Result<f64> {
        match (self, other) {
            (FamilyState::GaussPrec(a), FamilyState::GaussPrec(b)) => a.kl_divergence(b),
            (FamilyState::GaussCov(a), FamilyState::GaussCov(b)) => a.kl_divergence(b),
            (FamilyState::Wishart(a), FamilyState::Wishart(b)) => a.kl_divergence(b),
            (FamilyState::MatGauss(a), FamilyState::MatGauss(b)) => a.kl_divergence(b),
            (FamilyState::Ef(a), FamilyState::Ef(b)) => a.kl_divergence(b),
            _ => Err(Error::contract("KL between different families")),
        }
    }

    fn blocks(&self) -> Result<Vec<(String, Range<usize>)>> {
        let mut start = 0;
        Ok(self
            .chart()?
            .into_iter()
            .map(|(name, n)| {
                let r = start..start + n;
                start += n;
                (name, r)
            })
            .collect())
    }
}

fn fd_fisher(state: &FamilyState, basis: SymBasis, h: f64) -> Result<DMatrix<f64>> {
    let n = state.chart_dim()?;
    let kl_at = |eta: DVector<f64>| -> Result<f64> { state.kl(&state.perturb(&eta, basis)?) };
    let unit = |i: usize| {
        let mut e = DVector::zeros(n);
        e[i] = 1.0;
        e
    };
    let mut f = DMatrix::zeros(n, n);
    for i in 0..n {
        let ei = unit(i);
        f[(i, i)] = (kl_at(&ei * h)? + kl_at(&ei * -h)?) / (h * h);
        for j in 0..i {
            let ej = unit(j);
            let v = (kl_at((&ei + &ej) * h)? - kl_at((&ei - &ej) * h)? - kl_at((&ej - &ei) * h)? + kl_at((&ei + &ej) * -h)?)
                / (4.0 * h * h);
            f[(i, j)] = v;
            f[(j, i)] = v;
        }
    }
    Ok(f)
}

/// Fisher matrix as the Hessian of `eta -> KL(q_0 || q_eta)` at zero, by central
/// differences with one Richardson extrapolation step.
pub fn fim_via_kl(state: &FamilyState, basis: SymBasis, h: f64) -> Result<FimMatrix> {
    let coarse = fd_fisher(state, basis, h)?;
    let fine = fd_fisher(state, basis, h / 2.0)?;
    Ok(FimMatrix { matrix: (fine * 4.0 - coarse) / 3.0, blocks: state.blocks()? })
}

enum Draw {
    Vector(DVector<f64>),
    Matrix(DMatrix<f64>),
    Scalar(f64),
}

fn draw<R: Rng + ?Sized>(state: &FamilyState, rng: &mut R) -> Result<Draw> {
    Ok(match state {
        FamilyState::GaussPrec(q) => Draw::Vector(q.sample(rng, 1)?.remove(0)),
        FamilyState::GaussCov(q) => Draw::Vector(q.sample(rng, 1)?.remove(0)),
        FamilyState::Wishart(q) => Draw::Matrix(q.sample(rng, 1)?.remove(0)),
        FamilyState::MatGauss(q) => Draw::Matrix(q.sample(rng, 1)?.remove(0)),
        FamilyState::Ef(q) => Draw::Scalar(q.sample(rng, 1)?[0]),
    })
}

fn log_density(state: &FamilyState, x: &Draw) -> Result<f64> {
    match (state, x) {
        (FamilyState::GaussPrec(q), Draw::Vector(w)) => q.log_density(w),
        (FamilyState::GaussCov(q), Draw::Vector(w)) => q.log_density(w),
        (FamilyState::Wishart(q), Draw::Matrix(w)) => q.log_density(w),
        (FamilyState::MatGauss(q), Draw::Matrix(w)) => q.log_density(w),
        (FamilyState::Ef(q), Draw::Scalar(w)) => q.log_density(*w),
        _ => Err(Error::contract("sample type does not match the family")),
    }
}

/// Fisher matrix as the Monte-Carlo mean of score outer products; scores come from
/// central differences of the log density in local coordinates.
pub fn fim_via_score_mc(state: &FamilyState, basis: SymBasis, seed: u64, n: usize) -> Result<FimMatrix> {
    if n == 0 {
        return Err(Error::contract("need at least one sample"));
    }
    let dim = state.chart_dim()?;
    let h = 1e-5;
    let mut shifted = Vec::with_capacity(dim);
    for i in 0..dim {
        let mut e = DVector::zeros(dim);
        e[i] = h;
        shifted.push((state.perturb(&e, basis)?, state.perturb(&-e, basis)?));
    }
    let mut rng = seeded_rng(seed);
    let mut f = DMatrix::zeros(dim, dim);
    for _ in 0..n {
        let x = draw(state, &mut rng)?;
        let mut score = DVector::zeros(dim);
        for (i, (plus, minus)) in shifted.iter().enumerate() {
            score[i] = (log_density(plus, &x)? - log_density(minus, &x)?) / (2.0 * h);
        }
        f += &score * score.transpose();
    }
    Ok(FimMatrix { matrix: f / n as f64, blocks: state.blocks()? })
}

/// `J_mean^T S J_mean + 1/2 tr(Sigma dS_i Sigma dS_j)` for a Gaussian in precision terms.
pub fn gaussian_fisher(precision: &DMatrix<f64>, d_mean: &[DVector<f64>], d_prec: &[DMatrix<f64>]) -> Result<DMatrix<f64>> {
    let cov = precision.clone().try_inverse().ok_or_else(|| Error::singular("precision"))?;
    let nm = d_mean.len();
    let n = nm + d_prec.len();
    let mut f = DMatrix::zeros(n, n);
    for i in 0..nm {
        for j in 0..nm {
            f[(i, j)] = d_mean[i].dot(&(precision * &d_mean[j]));
        }
    }
    let whitened: Vec<DMatrix<f64>> = d_prec.iter().map(|d| &cov * d).collect();
    for i in 0..d_prec.len() {
        for j in 0..=i {
            let v = 0.5 * (&whitened[i] * &whitened[j]).trace();
            f[(nm + i, nm + j)] = v;
            f[(nm + j, nm + i)] = v;
        }
    }
    Ok(f)
}

/// Local space the dense oracle enumerates.
#[derive(Clone, Debug, PartialEq)]
pub enum LocalSpace {
    /// The structured local space of the factor.
    Structured,
    /// Every entry of a `p x p` matrix, without symmetry constraints.
    Unconstrained,
}

fn solve_fisher(f: &DMatrix<f64>, g: &DVector<f64>) -> Result<DVector<f64>> {
    let svd = f.clone().svd(true, true);
    let max = svd.singular_values.max();
    let min = svd.singular_values.min();
    if !(min > 1e-12 * max) {
        return Err(Error::singular(format!("Fisher matrix is rank deficient (sigma_min / sigma_max = {:e})", min / max)));
    }
    svd.solve(g, 0.0).map_err(|e| Error::singular(e.to_string()))
}

fn dense_basis(spec: &StructureSpec, space: &LocalSpace) -> Result<Vec<DMatrix<f64>>> {
    match space {
        LocalSpace::Structured => Ok(local_basis(spec, SymBasis::Unit)?.iter().map(|b| b.dense()).collect()),
        LocalSpace::Unconstrained => {
            let p = spec.dim();
            Ok((0..p * p)
                .map(|k| {
                    let mut m = DMatrix::zeros(p, p);
                    m[(k / p, k % p)] = 1.0;
                    m
                })
                .collect())
        }
    }
}

/// Natural gradient in local coordinates: a mean direction and a dense local matrix.
#[derive(Clone, Debug, PartialEq)]
pub struct DenseNatGrad {
    pub mean: DVector<f64>,
    pub local: DMatrix<f64>,
}

/// Solves the full local Fisher system for a precision-form Gaussian given the
/// Euclidean gradients with respect to the mean and the covariance.
pub fn dense_natgrad(
    dist: &GaussianSqrtPrec,
    mean_grad: &DVector<f64>,
    sigma_grad: &DMatrix<f64>,
    space: &LocalSpace,
) -> Result<DenseNatGrad> {
    let p = dist.dim();
    let b = dist.factor.dense();
    let b_inv = b.clone().try_inverse().ok_or_else(|| Error::singular("factor"))?;
    let s = &b * b.transpose();
    let cov = s.clone().try_inverse().ok_or_else(|| Error::singular("precision"))?;
    let basis = dense_basis(dist.factor.structure(), space)?;
    let d_mean: Vec<DVector<f64>> = (0..p).map(|i| b_inv.row(i).transpose()).collect();
    let d_prec: Vec<DMatrix<f64>> = basis.iter().map(|e| &b * (e + e.transpose()) * b.transpose()).collect();
    let fisher = gaussian_fisher(&s, &d_mean, &d_prec)?;
    let mut g = DVector::zeros(p + basis.len());
    for i in 0..p {
        g[i] = mean_grad.dot(&d_mean[i]);
    }
    let g_sym = (sigma_grad + sigma_grad.transpose()) * 0.5;
    for (j, ds) in d_prec.iter().enumerate() {
        let d_cov = -(&cov * ds * &cov);
        g[p + j] = (&g_sym * d_cov).trace();
    }
    let x = solve_fisher(&fisher, &g)?;
    let local = basis.iter().enumerate().fold(DMatrix::zeros(p, p), |acc, (j, e)| acc + e * x[p + j]);
    Ok(DenseNatGrad { mean: x.rows(0, p).into_owned(), local })
}

fn dense_retraction(m: &DMatrix<f64>) -> DMatrix<f64> {
    let n = m.nrows();
    DMatrix::identity(n, n) + m + m * m * 0.5
}

/// Dense reference step: `mean - beta B^{-T} x_mean`, `B (I + M + M^2/2)` with `M = -beta x_local`.
pub fn dense_step_gauss_prec(
    dist: &GaussianSqrtPrec,
    mean_grad: &DVector<f64>,
    sigma_grad: &DMatrix<f64>,
    beta: f64,
) -> Result<(DVector<f64>, DMatrix<f64>)> {
    let ng = dense_natgrad(dist, mean_grad, sigma_grad, &LocalSpace::Structured)?;
    let b = dist.factor.dense();
    let b_inv_t = b.clone().try_inverse().ok_or_else(|| Error::singular("factor"))?.transpose();
    let mean = &dist.mean - b_inv_t * ng.mean * beta;
    Ok((mean, b * dense_retraction(&(ng.local * -beta))))
}

/// Dense Gauss-Newton gradients for a matrix Gaussian from `n` draws of `rng`:
/// `g_mean = alpha vec(E) + mean vec(G)` and `g_sigma = (alpha I + mean g g^T - gamma S) / 2`.
pub fn matgauss_dense_grads<R: Rng + ?Sized>(
    dist: &MatrixGaussianKron,
    obj: &dyn MatrixObjective,
    rng: &mut R,
    n: usize,
    alpha: f64,
    gamma: f64,
) -> Result<(DVector<f64>, DMatrix<f64>)> {
    let (d, p) = dist.shape();
    let dp = d * p;
    let mut g_mean = DVector::from_column_slice(dist.mean.as_slice()) * alpha;
    let mut outer = DMatrix::zeros(dp, dp);
    for _ in 0..n {
        let w = dist.sample(rng, 1)?.remove(0);
        let g = DVector::from_column_slice(obj.grad(&w).as_slice());
        g_mean += &g / n as f64;
        outer += &g * g.transpose() / n as f64;
    }
    let s = dist.vec_precision();
    Ok((g_mean, (DMatrix::identity(dp, dp) * alpha + outer - s * gamma) * 0.5))
}

/// Dense reference step for a matrix Gaussian using the block-diagonal Fisher
/// (mean, column-factor and row-factor blocks, cross terms dropped).
/// Returns `(mean, A, B)` as dense matrices.
pub fn dense_step_matgauss(
    dist: &MatrixGaussianKron,
    mean_grad: &DVector<f64>,
    sigma_grad: &DMatrix<f64>,
    beta: f64,
) -> Result<(DMatrix<f64>, DMatrix<f64>, DMatrix<f64>)> {
    let (d, p) = dist.shape();
    let a = dist.col_factor.dense();
    let b = dist.row_factor.dense();
    let inv = |m: &DMatrix<f64>| m.clone().try_inverse().ok_or_else(|| Error::singular("factor"));
    let (a_inv, b_inv) = (inv(&a)?, inv(&b)?);
    let (sv, su) = (&a * a.transpose(), &b * b.transpose());
    let s = sv.kronecker(&su);
    let cov = inv(&s)?;
    let g_sym = (sigma_grad + sigma_grad.transpose()) * 0.5;

    let j_mean = a_inv.transpose().kronecker(&b_inv.transpose());
    let d_mean: Vec<DVector<f64>> = (0..d * p).map(|k| j_mean.column(k).into_owned()).collect();
    let f_mean = gaussian_fisher(&s, &d_mean, &[])?;
    let g_m = DVector::from_fn(d * p, |k, _| mean_grad.dot(&d_mean[k]));
    let x_mean = solve_fisher(&f_mean, &g_m)?;

    let factor_block = |basis: Vec<DMatrix<f64>>, d_prec: Vec<DMatrix<f64>>| -> Result<DMatrix<f64>> {
        let f = gaussian_fisher(&s, &[], &d_prec)?;
        let g = DVector::from_fn(d_prec.len(), |j, _| (&g_sym * -(&cov * &d_prec[j] * &cov)).trace());
        let x = solve_fisher(&f, &g)?;
        let n = basis[0].nrows();
        Ok(basis.iter().enumerate().fold(DMatrix::zeros(n, n), |acc, (j, e)| acc + e * x[j]))
    };
    let col_basis = dense_basis(dist.col_factor.structure(), &LocalSpace::Structured)?;
    let col_prec = col_basis.iter().map(|e| (&a * (e + e.transpose()) * a.transpose()).kronecker(&su)).collect();
    let m_col = factor_block(col_basis, col_prec)?;
    let row_basis = dense_basis(dist.row_factor.structure(), &LocalSpace::Structured)?;
    let row_prec = row_basis.iter().map(|e| sv.kronecker(&(&b * (e + e.transpose()) * b.transpose()))).collect();
    let m_row = factor_block(row_basis, row_prec)?;

    let shift = DMatrix::from_column_slice(d, p, (j_mean * x_mean).as_slice());
    Ok((
        &dist.mean - shift * beta,
        a * dense_retraction(&(m_col * -beta)),
        b * dense_retraction(&(m_row * -beta)),
    ))
}

/// Fisher matrix of a zero-mean Gaussian with `Sigma = v v^T + diag(d^2)` in the
/// coordinates `(d, v)` at `v = e_1`, `d = 1`. Two coordinates move `Sigma`
/// identically, so the matrix is singular. Returns the matrix and its determinant.
pub fn singular_fim_demo() -> Result<(FimMatrix, f64)> {
    let p = 3;
    let v = DVector::from_vec(vec![1.0, 0.0, 0.0]);
    let d = DVector::from_element(p, 1.0);
    let sigma = &v * v.transpose() + DMatrix::from_diagonal(&d.map(|x| x * x));
    let prec = sigma.clone().try_inverse().ok_or_else(|| Error::singular("covariance"))?;
    let mut d_cov = Vec::new();
    for k in 0..p {
        let mut m = DMatrix::zeros(p, p);
        m[(k, k)] = 2.0 * d[k];
        d_cov.push(m);
    }
    for k in 0..p {
        let mut e = DVector::zeros(p);
        e[k] = 1.0;
        d_cov.push(&e * v.transpose() + &v * e.transpose());
    }
    // d(precision) = -S dSigma S
    let d_prec: Vec<DMatrix<f64>> = d_cov.iter().map(|dc| -(&prec * dc * &prec)).collect();
    let f = gaussian_fisher(&prec, &[], &d_prec)?;
    let det = f.clone().lu().determinant();
    Ok((FimMatrix { matrix: f, blocks: vec![("diag".into(), 0..p), ("vec".into(), p..2 * p)] }, det))
}

/// Result of comparing analytic derivatives against central differences.
#[derive(Clone, Debug, PartialEq)]
pub struct FdReport {
    pub grad_rel_err: f64,
    pub hvp_rel_err: Option<f64>,
}

/// Checks `grad` (and `hvp` when available) against central differences at `w` along `v`.
pub fn finite_diff_check(obj: &dyn Objective, w: &DVector<f64>, v: &DVector<f64>) -> Result<FdReport> {
    let h = 1e-6;
    let g = obj.grad(w)?;
    let fd = (obj.loss(&(w + v * h)) - obj.loss(&(w - v * h))) / (2.0 * h);
    let an = g.dot(v);
    let grad_rel_err = (fd - an).abs() / an.abs().max(1e-8);
    let hvp_rel_err = if obj.capabilities().hvp {
        let hv = obj.hvp(w, v)?;
        let fd_hv = (obj.grad(&(w + v * h))? - obj.grad(&(w - v * h))?) / (2.0 * h);
        Some((fd_hv - &hv).norm() / hv.norm().max(1e-8))
    } else {
        None
    };
    Ok(FdReport { grad_rel_err, hvp_rel_err })
}
