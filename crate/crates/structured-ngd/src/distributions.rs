//! Parametric families, each stored through a structured square-root factor.

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Gamma, StandardNormal};
use statrs::function::gamma::{digamma, ln_gamma};

use crate::error::{Error, Result};
use crate::matgroup::{precision_dense, GroupElement, StructureSpec};
use crate::special::{mv_digamma, mv_ln_gamma, sigmoid, softplus, softplus_deriv, trigamma};

const LN_2PI: f64 = 1.837_877_066_409_345_3;

/// Deterministic generator for a seed.
pub fn seeded_rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub(crate) fn std_normal_vec<R: Rng + ?Sized>(rng: &mut R, n: usize) -> DVector<f64> {
    DVector::from_fn(n, |_, _| rng.sample(StandardNormal))
}

fn dense_log_det_spd(m: &DMatrix<f64>) -> Result<f64> {
    let chol = m.clone().cholesky().ok_or_else(|| Error::domain("matrix is not positive definite"))?;
    Ok(2.0 * chol.l().diagonal().iter().map(|v| v.ln()).sum::<f64>())
}

fn spd_inverse(m: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    m.clone()
        .cholesky()
        .map(|c| c.inverse())
        .ok_or_else(|| Error::domain("matrix is not positive definite"))
}

/// Gaussian `N(mean, S^{-1})` with precision `S = B B^T`.
#[derive(Clone, Debug, PartialEq)]
pub struct GaussianSqrtPrec {
    pub mean: DVector<f64>,
    pub factor: GroupElement,
}

impl GaussianSqrtPrec {
    pub fn new(mean: DVector<f64>, factor: GroupElement) -> Result<Self> {
        if factor.structure().is_kronecker() {
            return Err(Error::contract("vector Gaussians need a non-Kronecker factor"));
        }
        if mean.len() != factor.dim() {
            return Err(Error::contract("mean and factor dimensions differ"));
        }
        factor.validate()?;
        Ok(GaussianSqrtPrec { mean, factor })
    }

    /// Zero mean, identity factor.
    pub fn standard(spec: &StructureSpec) -> Result<Self> {
        Self::new(DVector::zeros(spec.dim()), GroupElement::identity(spec)?)
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    pub fn precision(&self) -> DMatrix<f64> {
        precision_dense(&self.factor)
    }

    pub fn covariance(&self) -> Result<DMatrix<f64>> {
        spd_inverse(&self.precision())
    }

    /// `mean + B^{-T} eps`.
    pub fn transform(&self, eps: &DVector<f64>) -> Result<DVector<f64>> {
        Ok(&self.mean + self.factor.solve_transpose(eps)?)
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R, n: usize) -> Result<Vec<DVector<f64>>> {
        (0..n).map(|_| self.transform(&std_normal_vec(rng, self.dim()))).collect()
    }

    pub fn log_density(&self, w: &DVector<f64>) -> Result<f64> {
        let z = self.factor.apply_transpose(&(w - &self.mean))?;
        Ok(-0.5 * z.norm_squared() + self.factor.log_abs_det() - 0.5 * self.dim() as f64 * LN_2PI)
    }

    pub fn entropy(&self) -> f64 {
        0.5 * self.dim() as f64 * (LN_2PI + 1.0) - self.factor.log_abs_det()
    }

    /// `KL(self || other)` in closed form.
    pub fn kl_divergence(&self, other: &GaussianSqrtPrec) -> Result<f64> {
        let p = self.dim();
        if other.dim() != p {
            return Err(Error::contract("dimension mismatch in KL"));
        }
        // tr(S2 Sigma1) = || B2^T B1^{-T} ||_F^2
        let mut trace = 0.0;
        for j in 0..p {
            let mut e = DVector::zeros(p);
            e[j] = 1.0;
            let col = other.factor.apply_transpose(&self.factor.solve_transpose(&e)?)?;
            trace += col.norm_squared();
        }
        let diff = other.factor.apply_transpose(&(&other.mean - &self.mean))?;
        let log_ratio = 2.0 * (self.factor.log_abs_det() - other.factor.log_abs_det());
        Ok(0.5 * (trace + diff.norm_squared() - p as f64 + log_ratio))
    }
}

/// Gaussian `N(mean, A A^T)` stored through a covariance square root.
#[derive(Clone, Debug, PartialEq)]
pub struct GaussianSqrtCov {
    pub mean: DVector<f64>,
    pub factor: GroupElement,
}

impl GaussianSqrtCov {
    pub fn new(mean: DVector<f64>, factor: GroupElement) -> Result<Self> {
        if factor.structure().is_kronecker() || mean.len() != factor.dim() {
            return Err(Error::contract("covariance factor must be a square factor matching the mean"));
        }
        factor.validate()?;
        Ok(GaussianSqrtCov { mean, factor })
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    pub fn covariance(&self) -> DMatrix<f64> {
        precision_dense(&self.factor)
    }

    pub fn precision(&self) -> Result<DMatrix<f64>> {
        spd_inverse(&self.covariance())
    }

    /// `mean + A eps`.
    pub fn transform(&self, eps: &DVector<f64>) -> Result<DVector<f64>> {
        Ok(&self.mean + self.factor.apply(eps)?)
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R, n: usize) -> Result<Vec<DVector<f64>>> {
        (0..n).map(|_| self.transform(&std_normal_vec(rng, self.dim()))).collect()
    }

    pub fn log_density(&self, w: &DVector<f64>) -> Result<f64> {
        let z = self.factor.solve(&(w - &self.mean))?;
        Ok(-0.5 * z.norm_squared() - self.factor.log_abs_det() - 0.5 * self.dim() as f64 * LN_2PI)
    }

    pub fn entropy(&self) -> f64 {
        0.5 * self.dim() as f64 * (LN_2PI + 1.0) + self.factor.log_abs_det()
    }

    /// Same distribution in precision form with a dense factor.
    pub fn to_precision_form(&self) -> Result<GaussianSqrtPrec> {
        let a_inv_t = self.factor.dense().try_inverse().ok_or_else(|| Error::singular("covariance factor"))?.transpose();
        let p = self.dim();
        GaussianSqrtPrec::new(self.mean.clone(), GroupElement::from_dense(&StructureSpec::Full(p), &a_inv_t)?)
    }

    pub fn kl_divergence(&self, other: &GaussianSqrtCov) -> Result<f64> {
        self.to_precision_form()?.kl_divergence(&other.to_precision_form()?)
    }
}

/// One Bartlett draw: the lower-triangular noise `Omega` and the underlying
/// unit-rate gamma variates of its squared diagonal.
#[derive(Clone, Debug)]
pub struct BartlettDraw {
    pub lower: DMatrix<f64>,
    pub gamma: DVector<f64>,
}

/// Wishart `W(V, n)` with `n = 2 softplus(shape_param) + p - 1` and `V^{-1} = n B B^T`.
#[derive(Clone, Debug, PartialEq)]
pub struct WishartSqrtPrec {
    pub shape_param: f64,
    pub factor: GroupElement,
}

impl WishartSqrtPrec {
    pub fn new(shape_param: f64, factor: GroupElement) -> Result<Self> {
        if !matches!(factor.structure(), StructureSpec::Full(_)) {
            return Err(Error::contract("Wishart factor must be full"));
        }
        if !shape_param.is_finite() {
            return Err(Error::domain("shape parameter must be finite"));
        }
        factor.validate()?;
        Ok(WishartSqrtPrec { shape_param, factor })
    }

    /// Parameters chosen so the mean `n V` equals `mean`.
    pub fn with_mean(mean: &DMatrix<f64>, dof: f64) -> Result<Self> {
        let p = mean.nrows();
        if dof <= (p as f64 - 1.0) {
            return Err(Error::domain("degrees of freedom must exceed p - 1"));
        }
        let shape_param = crate::special::softplus_inv((dof - p as f64 + 1.0) / 2.0);
        // mean = (B B^T)^{-1}  =>  B = chol(mean^{-1})
        let prec = spd_inverse(mean)?;
        let l = prec.cholesky().ok_or_else(|| Error::domain("mean is not SPD"))?.l();
        Self::new(shape_param, GroupElement::from_dense(&StructureSpec::Full(p), &l)?)
    }

    pub fn dim(&self) -> usize {
        self.factor.dim()
    }

    pub fn dof(&self) -> f64 {
        2.0 * softplus(self.shape_param) + (self.dim() as f64 - 1.0)
    }

    /// `V^{-1} = n B B^T`.
    pub fn scale_inv(&self) -> DMatrix<f64> {
        precision_dense(&self.factor) * self.dof()
    }

    pub fn scale(&self) -> Result<DMatrix<f64>> {
        spd_inverse(&self.scale_inv())
    }

    /// `E[W] = n V = (B B^T)^{-1}`.
    pub fn mean(&self) -> Result<DMatrix<f64>> {
        spd_inverse(&precision_dense(&self.factor))
    }

    pub fn draw_noise<R: Rng + ?Sized>(&self, rng: &mut R) -> Result<BartlettDraw> {
        let p = self.dim();
        let n = self.dof();
        let mut lower = DMatrix::zeros(p, p);
        let mut gamma = DVector::zeros(p);
        for i in 0..p {
            let shape = (n - i as f64) / 2.0;
            let g = Gamma::new(shape, 1.0).map_err(|e| Error::domain(format!("gamma shape {shape}: {e}")))?;
            let y: f64 = g.sample(rng);
            gamma[i] = y;
            lower[(i, i)] = (2.0 * y).sqrt();
            for j in 0..i {
                lower[(i, j)] = rng.sample(StandardNormal);
            }
        }
        Ok(BartlettDraw { lower, gamma })
    }

    /// `L Omega Omega^T L^T` with `L = chol(V)`.
    pub fn transform(&self, draw: &BartlettDraw) -> Result<DMatrix<f64>> {
        let l = self.scale()?.cholesky().ok_or_else(|| Error::domain("scale not SPD"))?.l();
        let lo = &l * &draw.lower;
        Ok(&lo * lo.transpose())
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R, n: usize) -> Result<Vec<DMatrix<f64>>> {
        (0..n).map(|_| self.draw_noise(rng).and_then(|d| self.transform(&d))).collect()
    }

    pub fn log_density(&self, w: &DMatrix<f64>) -> Result<f64> {
        let p = self.dim() as f64;
        let n = self.dof();
        let s = self.scale_inv();
        let log_det_w = dense_log_det_spd(w)?;
        let log_det_s = dense_log_det_spd(&s)?;
        Ok(0.5 * (n - p - 1.0) * log_det_w - 0.5 * (&s * w).trace() - 0.5 * n * p * 2f64.ln() + 0.5 * n * log_det_s
            - mv_ln_gamma(self.dim(), n / 2.0))
    }

    pub fn entropy(&self) -> Result<f64> {
        let p = self.dim() as f64;
        let n = self.dof();
        let log_det_v = -dense_log_det_spd(&self.scale_inv())?;
        Ok(0.5 * (p + 1.0) * log_det_v + 0.5 * p * (p + 1.0) * 2f64.ln() + mv_ln_gamma(self.dim(), n / 2.0)
            - 0.5 * (n - p - 1.0) * mv_digamma(self.dim(), n / 2.0)
            + 0.5 * n * p)
    }

    /// `KL(self || other)` in closed form.
    pub fn kl_divergence(&self, other: &WishartSqrtPrec) -> Result<f64> {
        let p = self.dim();
        let (n1, n2) = (self.dof(), other.dof());
        let v1 = self.scale()?;
        let m = other.scale_inv() * &v1; // V2^{-1} V1
        let log_det_m = dense_log_det_spd(&other.scale_inv())? - dense_log_det_spd(&self.scale_inv())?;
        Ok(0.5 * (n1 - n2) * mv_digamma(p, n1 / 2.0) + 0.5 * n1 * (m.trace() - p as f64) - 0.5 * n2 * log_det_m
            + mv_ln_gamma(p, n2 / 2.0)
            - mv_ln_gamma(p, n1 / 2.0))
    }
}

/// Matrix Gaussian over `d x p` matrices, `W = mean + B^{-T} Z A^{-1}` with `Z` standard.
/// Under column-major `vec`, the precision is `(A A^T) (x) (B B^T)`.
#[derive(Clone, Debug, PartialEq)]
pub struct MatrixGaussianKron {
    pub mean: DMatrix<f64>,
    /// Column-side factor `A` (`p x p`).
    pub col_factor: GroupElement,
    /// Row-side factor `B` (`d x d`).
    pub row_factor: GroupElement,
}

impl MatrixGaussianKron {
    pub fn new(mean: DMatrix<f64>, col_factor: GroupElement, row_factor: GroupElement) -> Result<Self> {
        if col_factor.structure().is_kronecker() || row_factor.structure().is_kronecker() {
            return Err(Error::contract("matrix-Gaussian factors must not be Kronecker themselves"));
        }
        if mean.nrows() != row_factor.dim() || mean.ncols() != col_factor.dim() {
            return Err(Error::contract("mean shape must be rows(row_factor) x rows(col_factor)"));
        }
        col_factor.validate()?;
        row_factor.validate()?;
        Ok(MatrixGaussianKron { mean, col_factor, row_factor })
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.mean.nrows(), self.mean.ncols())
    }

    pub fn structure(&self) -> StructureSpec {
        StructureSpec::Kronecker(Box::new(self.col_factor.structure().clone()), Box::new(self.row_factor.structure().clone()))
    }

    /// `S_V = A A^T` (column side) and `S_U = B B^T` (row side).
    pub fn precisions(&self) -> (DMatrix<f64>, DMatrix<f64>) {
        (precision_dense(&self.col_factor), precision_dense(&self.row_factor))
    }

    /// Dense precision of `vec(W)`.
    pub fn vec_precision(&self) -> DMatrix<f64> {
        let (sv, su) = self.precisions();
        sv.kronecker(&su)
    }

    /// `mean + B^{-T} Z A^{-1}`.
    pub fn transform(&self, z: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        let (d, p) = self.shape();
        let mut left = DMatrix::zeros(d, p);
        for j in 0..p {
            left.set_column(j, &self.row_factor.solve_transpose(&z.column(j).into_owned())?);
        }
        let mut out = DMatrix::zeros(d, p);
        for i in 0..d {
            // row_i A^{-1} = (A^{-T} row_i^T)^T
            out.set_row(i, &self.col_factor.solve_transpose(&left.row(i).transpose())?.transpose());
        }
        Ok(out + &self.mean)
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R, n: usize) -> Result<Vec<DMatrix<f64>>> {
        let (d, p) = self.shape();
        (0..n).map(|_| self.transform(&DMatrix::from_fn(d, p, |_, _| rng.sample(StandardNormal)))).collect()
    }

    pub fn log_density(&self, w: &DMatrix<f64>) -> Result<f64> {
        let (d, p) = self.shape();
        let (sv, su) = self.precisions();
        let r = w - &self.mean;
        let quad = (r.transpose() * &su * &r * &sv).trace();
        Ok(-0.5 * quad + d as f64 * self.col_factor.log_abs_det() + p as f64 * self.row_factor.log_abs_det()
            - 0.5 * (d * p) as f64 * LN_2PI)
    }

    pub fn kl_divergence(&self, other: &MatrixGaussianKron) -> Result<f64> {
        let (d, p) = self.shape();
        let (sv1, su1) = self.precisions();
        let (sv2, su2) = other.precisions();
        let trace = (&sv2 * spd_inverse(&sv1)?).trace() * (&su2 * spd_inverse(&su1)?).trace();
        let diff = &other.mean - &self.mean;
        let quad = (diff.transpose() * &su2 * &diff * &sv2).trace();
        let logdet = |sv: &DMatrix<f64>, su: &DMatrix<f64>| -> Result<f64> {
            Ok(d as f64 * dense_log_det_spd(sv)? + p as f64 * dense_log_det_spd(su)?)
        };
        Ok(0.5 * (trace + quad - (d * p) as f64 + logdet(&sv1, &su1)? - logdet(&sv2, &su2)?))
    }
}

/// Equal-weight mixture of structured Gaussians.
#[derive(Clone, Debug, PartialEq)]
pub struct MixtureGaussSqrtPrec {
    pub components: Vec<GaussianSqrtPrec>,
}

impl MixtureGaussSqrtPrec {
    pub fn new(components: Vec<GaussianSqrtPrec>) -> Result<Self> {
        let first = components.first().ok_or_else(|| Error::contract("mixture needs at least one component"))?;
        let (p, spec) = (first.dim(), first.factor.structure().clone());
        if components.iter().any(|c| c.dim() != p || c.factor.structure() != &spec) {
            return Err(Error::contract("mixture components must share dimension and structure"));
        }
        Ok(MixtureGaussSqrtPrec { components })
    }

    pub fn len(&self) -> usize {
        self.components.len()
    }

    pub fn is_empty(&self) -> bool {
        self.components.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.components[0].dim()
    }

    pub fn weight(&self) -> f64 {
        1.0 / self.len() as f64
    }

    /// Per-component log densities `ln N_k(w)`.
    pub fn component_log_densities(&self, w: &DVector<f64>) -> Result<Vec<f64>> {
        self.components.iter().map(|c| c.log_density(w)).collect()
    }

    pub fn log_density(&self, w: &DVector<f64>) -> Result<f64> {
        let lds = self.component_log_densities(w)?;
        Ok(log_sum_exp(&lds) - (self.len() as f64).ln())
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R, n: usize) -> Result<Vec<DVector<f64>>> {
        (0..n)
            .map(|_| {
                let k = rng.random_range(0..self.len());
                let p = self.dim();
                self.components[k].transform(&std_normal_vec(rng, p))
            })
            .collect()
    }

    /// Gradient and Hessian of `ln q(w)`.
    pub fn log_density_derivatives(&self, w: &DVector<f64>) -> Result<(DVector<f64>, DMatrix<f64>)> {
        let lds = self.component_log_densities(w)?;
        let lse = log_sum_exp(&lds);
        let p = self.dim();
        let mut grad = DVector::zeros(p);
        let mut hess = DMatrix::zeros(p, p);
        for (c, ld) in self.components.iter().zip(&lds) {
            let r = (ld - lse).exp();
            let s = c.precision();
            let g = -(&s * (w - &c.mean));
            hess += (&g * g.transpose() - &s) * r;
            grad += g * r;
        }
        hess -= &grad * grad.transpose();
        Ok((grad, hess))
    }
}

pub(crate) fn log_sum_exp(xs: &[f64]) -> f64 {
    let m = xs.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    if !m.is_finite() {
        return m;
    }
    m + xs.iter().map(|x| (x - m).exp()).sum::<f64>().ln()
}

/// Map from unconstrained parameters to natural parameters.
#[derive(Clone, Copy, Debug, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub enum Link {
    Softplus,
    Identity,
}

impl Link {
    pub fn forward(self, x: f64) -> f64 {
        match self {
            Link::Softplus => softplus(x),
            Link::Identity => x,
        }
    }

    pub fn deriv(self, x: f64) -> f64 {
        match self {
            Link::Softplus => softplus_deriv(x),
            Link::Identity => 1.0,
        }
    }

    pub fn inverse(self, y: f64) -> f64 {
        match self {
            Link::Softplus => crate::special::softplus_inv(y),
            Link::Identity => y,
        }
    }
}

/// Supported one-dimensional exponential families.
#[derive(Clone, Copy, Debug, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub enum EfFamily {
    /// Rate `tau`, statistic `-w`.
    Exponential,
    /// `(shape, rate)`, statistics `(ln w, -w)`.
    Gamma,
    /// Logit `tau`, statistic `w`.
    Bernoulli,
}

impl EfFamily {
    pub fn dim(self) -> usize {
        match self {
            EfFamily::Gamma => 2,
            _ => 1,
        }
    }

    /// The link that keeps natural parameters in the family's domain.
    pub fn default_link(self) -> Link {
        match self {
            EfFamily::Bernoulli => Link::Identity,
            _ => Link::Softplus,
        }
    }

    fn check(self, tau: &DVector<f64>) -> Result<()> {
        if tau.len() != self.dim() {
            return Err(Error::contract("natural parameter has the wrong length"));
        }
        if self != EfFamily::Bernoulli && tau.iter().any(|&t| !(t > 0.0)) {
            return Err(Error::domain("natural parameters must be positive"));
        }
        Ok(())
    }

    pub fn log_partition(self, tau: &DVector<f64>) -> Result<f64> {
        self.check(tau)?;
        Ok(match self {
            EfFamily::Exponential => -tau[0].ln(),
            EfFamily::Gamma => ln_gamma(tau[0]) - tau[0] * tau[1].ln(),
            EfFamily::Bernoulli => softplus(tau[0]),
        })
    }

    /// Expectation parameters, the gradient of the log-partition.
    pub fn mean_params(self, tau: &DVector<f64>) -> Result<DVector<f64>> {
        self.check(tau)?;
        Ok(match self {
            EfFamily::Exponential => DVector::from_element(1, -1.0 / tau[0]),
            EfFamily::Gamma => DVector::from_vec(vec![digamma(tau[0]) - tau[1].ln(), -tau[0] / tau[1]]),
            EfFamily::Bernoulli => DVector::from_element(1, sigmoid(tau[0])),
        })
    }

    /// Fisher matrix in natural parameters, the Hessian of the log-partition.
    pub fn fisher(self, tau: &DVector<f64>) -> Result<DMatrix<f64>> {
        self.check(tau)?;
        Ok(match self {
            EfFamily::Exponential => DMatrix::from_element(1, 1, 1.0 / (tau[0] * tau[0])),
            EfFamily::Gamma => {
                let (a, b) = (tau[0], tau[1]);
                DMatrix::from_row_slice(2, 2, &[trigamma(a), -1.0 / b, -1.0 / b, a / (b * b)])
            }
            EfFamily::Bernoulli => {
                let s = sigmoid(tau[0]);
                DMatrix::from_element(1, 1, s * (1.0 - s))
            }
        })
    }

    pub fn sufficient_stats(self, w: f64) -> Result<DVector<f64>> {
        match self {
            EfFamily::Exponential if w > 0.0 => Ok(DVector::from_element(1, -w)),
            EfFamily::Gamma if w > 0.0 => Ok(DVector::from_vec(vec![w.ln(), -w])),
            EfFamily::Bernoulli if w == 0.0 || w == 1.0 => Ok(DVector::from_element(1, w)),
            _ => Err(Error::domain(format!("{w} is outside the support"))),
        }
    }

    fn log_base(self, w: f64) -> f64 {
        match self {
            EfFamily::Gamma => -w.ln(),
            _ => 0.0,
        }
    }
}

/// Univariate exponential family with natural parameters `tau_i = link(params_i)`.
#[derive(Clone, Debug, PartialEq)]
pub struct UnivariateEf {
    pub params: DVector<f64>,
    pub family: EfFamily,
    pub link: Link,
}

impl UnivariateEf {
    pub fn new(params: DVector<f64>, family: EfFamily, link: Link) -> Result<Self> {
        let ef = UnivariateEf { params, family, link };
        family.check(&ef.natural())?;
        Ok(ef)
    }

    /// Builds the family from natural parameters using its default link.
    pub fn from_natural(family: EfFamily, tau: &DVector<f64>) -> Result<Self> {
        family.check(tau)?;
        let link = family.default_link();
        Self::new(tau.map(|t| link.inverse(t)), family, link)
    }

    pub fn natural(&self) -> DVector<f64> {
        self.params.map(|x| self.link.forward(x))
    }

    pub fn mean_params(&self) -> Result<DVector<f64>> {
        self.family.mean_params(&self.natural())
    }

    pub fn log_density(&self, w: f64) -> Result<f64> {
        let tau = self.natural();
        Ok(tau.dot(&self.family.sufficient_stats(w)?) - self.family.log_partition(&tau)? + self.family.log_base(w))
    }

    /// Bregman form of `KL(self || other)`.
    pub fn kl_divergence(&self, other: &UnivariateEf) -> Result<f64> {
        if self.family != other.family {
            return Err(Error::contract("KL across different families"));
        }
        let (t1, t2) = (self.natural(), other.natural());
        let f = self.family;
        Ok(f.log_partition(&t2)? - f.log_partition(&t1)? - (t2 - &t1).dot(&f.mean_params(&t1)?))
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R, n: usize) -> Result<Vec<f64>> {
        let tau = self.natural();
        match self.family {
            EfFamily::Exponential => {
                let d = rand_distr::Exp::new(tau[0]).map_err(|e| Error::domain(e.to_string()))?;
                Ok((0..n).map(|_| d.sample(rng)).collect())
            }
            EfFamily::Gamma => {
                let d = Gamma::new(tau[0], 1.0 / tau[1]).map_err(|e| Error::domain(e.to_string()))?;
                Ok((0..n).map(|_| d.sample(rng)).collect())
            }
            EfFamily::Bernoulli => {
                let pr = sigmoid(tau[0]);
                Ok((0..n).map(|_| if rng.random::<f64>() < pr { 1.0 } else { 0.0 }).collect())
            }
        }
    }
}
