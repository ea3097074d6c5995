//! Monte-Carlo and at-mean gradient estimators for each family.
//!
//! Gaussian bundles carry the covariance gradient either densely or already pushed
//! through `kappa(2 B^{-1} g B^{-T})` at the current factor, which is what the
//! structured stepper consumes and what keeps large problems at `O(k^2 p)`.

use std::sync::atomic::{AtomicUsize, Ordering};

use nalgebra::{DMatrix, DVector};
use rand::Rng;

use crate::distributions::{
    log_sum_exp, std_normal_vec, GaussianSqrtCov, GaussianSqrtPrec, MatrixGaussianKron, MixtureGaussSqrtPrec,
    WishartSqrtPrec,
};
use crate::error::{Error, Result};
use crate::matgroup::{kappa_congruence_hvp, kappa_project, LocalDirection};
use crate::special::gamma_sample_shape_deriv;

/// Largest dimension for which a dense covariance gradient is materialised.
pub const DENSE_LIMIT: usize = 64;

/// Which callbacks an objective provides.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Capabilities {
    pub grad: bool,
    pub hvp: bool,
    pub hess_diag: bool,
}

/// A scalar loss over vectors. Only `loss` is mandatory.
pub trait Objective: Send + Sync {
    fn dim(&self) -> usize;
    fn loss(&self, w: &DVector<f64>) -> f64;
    fn capabilities(&self) -> Capabilities;

    fn grad(&self, _w: &DVector<f64>) -> Result<DVector<f64>> {
        Err(Error::Capability("grad"))
    }

    fn hvp(&self, _w: &DVector<f64>, _v: &DVector<f64>) -> Result<DVector<f64>> {
        Err(Error::Capability("hvp"))
    }

    fn hess_diag(&self, _w: &DVector<f64>) -> Result<DVector<f64>> {
        Err(Error::Capability("hess_diag"))
    }

    /// Dense Hessian assembled from `dim` Hessian-vector products.
    fn hessian(&self, w: &DVector<f64>) -> Result<DMatrix<f64>> {
        let p = self.dim();
        let mut h = DMatrix::zeros(p, p);
        for j in 0..p {
            let mut e = DVector::zeros(p);
            e[j] = 1.0;
            h.set_column(j, &self.hvp(w, &e)?);
        }
        Ok((&h + h.transpose()) * 0.5)
    }
}

/// A scalar loss over matrices with its (Euclidean) gradient.
pub trait MatrixObjective: Send + Sync {
    fn shape(&self) -> (usize, usize);
    fn loss(&self, w: &DMatrix<f64>) -> f64;
    fn grad(&self, w: &DMatrix<f64>) -> DMatrix<f64>;
}

/// Wraps an objective and counts its callbacks.
pub struct Counting<'a> {
    inner: &'a dyn Objective,
    hvp_calls: AtomicUsize,
    grad_calls: AtomicUsize,
}

impl<'a> Counting<'a> {
    pub fn new(inner: &'a dyn Objective) -> Self {
        Counting { inner, hvp_calls: AtomicUsize::new(0), grad_calls: AtomicUsize::new(0) }
    }

    pub fn hvp_calls(&self) -> usize {
        self.hvp_calls.load(Ordering::Relaxed)
    }

    pub fn grad_calls(&self) -> usize {
        self.grad_calls.load(Ordering::Relaxed)
    }
}

impl Objective for Counting<'_> {
    fn dim(&self) -> usize {
        self.inner.dim()
    }
    fn loss(&self, w: &DVector<f64>) -> f64 {
        self.inner.loss(w)
    }
    fn capabilities(&self) -> Capabilities {
        self.inner.capabilities()
    }
    fn grad(&self, w: &DVector<f64>) -> Result<DVector<f64>> {
        self.grad_calls.fetch_add(1, Ordering::Relaxed);
        self.inner.grad(w)
    }
    fn hvp(&self, w: &DVector<f64>, v: &DVector<f64>) -> Result<DVector<f64>> {
        self.hvp_calls.fetch_add(1, Ordering::Relaxed);
        self.inner.hvp(w, v)
    }
    fn hess_diag(&self, w: &DVector<f64>) -> Result<DVector<f64>> {
        self.inner.hess_diag(w)
    }
}

/// Covariance part of a Gaussian gradient bundle.
#[derive(Clone, Debug, PartialEq)]
pub enum SigmaGrad {
    /// Euclidean gradient with respect to the covariance.
    Dense(DMatrix<f64>),
    /// `kappa(2 B^{-1} g B^{-T})` evaluated at the factor the bundle was built for.
    Projected(LocalDirection),
}

/// Gradient of the expected loss with respect to the mean and covariance.
#[derive(Clone, Debug, PartialEq)]
pub struct GradBundle {
    pub mean_grad: DVector<f64>,
    pub sigma: SigmaGrad,
    /// Estimate of the expected loss that came with the gradient.
    pub loss: f64,
}

/// Requested representation of the covariance gradient.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Default)]
pub enum SigmaForm {
    /// Dense up to [`DENSE_LIMIT`], projected above.
    #[default]
    Auto,
    Dense,
    Projected,
}

impl SigmaForm {
    fn dense_for(self, p: usize) -> Result<bool> {
        match self {
            SigmaForm::Auto => Ok(p <= DENSE_LIMIT),
            SigmaForm::Dense if p > DENSE_LIMIT => {
                Err(Error::contract(format!("dense covariance gradients are limited to p <= {DENSE_LIMIT}")))
            }
            SigmaForm::Dense => Ok(true),
            SigmaForm::Projected => Ok(false),
        }
    }
}

/// Which estimator feeds a Gaussian step.
#[derive(Clone, Copy, Debug, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum EstimatorKind {
    /// Score-function estimator, loss values only.
    Reinforce,
    /// Pathwise estimator, first-order.
    Reparam,
    /// Second-order estimator from Hessians at the samples.
    Stein,
    /// Second-order estimate at the mean only.
    Mean,
}

impl std::str::FromStr for EstimatorKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "reinforce" => Ok(EstimatorKind::Reinforce),
            "reparam" => Ok(EstimatorKind::Reparam),
            "stein" => Ok(EstimatorKind::Stein),
            "mean" => Ok(EstimatorKind::Mean),
            other => Err(Error::Usage(format!("unknown estimator `{other}`"))),
        }
    }
}

fn check_samples(n: usize) -> Result<()> {
    if n == 0 {
        return Err(Error::contract("at least one Monte-Carlo sample is required"));
    }
    Ok(())
}

fn finite_or_fail(bundle: GradBundle) -> Result<GradBundle> {
    let sigma_ok = match &bundle.sigma {
        SigmaGrad::Dense(g) => g.iter().all(|v| v.is_finite()),
        SigmaGrad::Projected(m) => m.max_abs().is_finite(),
    };
    if !sigma_ok || bundle.mean_grad.iter().any(|v| !v.is_finite()) || !bundle.loss.is_finite() {
        return Err(Error::Estimator("non-finite gradient estimate".into()));
    }
    Ok(bundle)
}

fn sym(m: &DMatrix<f64>) -> DMatrix<f64> {
    (m + m.transpose()) * 0.5
}

/// Score-function estimator for the precision form.
pub fn reinforce_gauss_prec<R: Rng + ?Sized>(
    dist: &GaussianSqrtPrec,
    obj: &dyn Objective,
    rng: &mut R,
    n: usize,
    form: SigmaForm,
) -> Result<GradBundle> {
    check_samples(n)?;
    let p = dist.dim();
    let dense = form.dense_for(p)?;
    let spec = dist.factor.structure();
    let mut mean_grad = DVector::zeros(p);
    let mut g_dense = DMatrix::zeros(if dense { p } else { 0 }, if dense { p } else { 0 });
    let mut g_proj = LocalDirection::zeros(spec)?;
    let mut loss = 0.0;
    for _ in 0..n {
        let eps = std_normal_vec(rng, p);
        let w = dist.transform(&eps)?;
        let l = obj.loss(&w);
        loss += l;
        // S (w - mean) = B eps
        let s_res = dist.factor.apply(&eps)?;
        mean_grad += &s_res * l;
        if dense {
            g_dense += (&s_res * s_res.transpose()) * (0.5 * l);
        } else {
            g_proj = g_proj.add(&LocalDirection::sym_outer(spec, &eps, &eps)?.scale(l))?;
        }
    }
    let nf = n as f64;
    loss /= nf;
    let sigma = if dense {
        SigmaGrad::Dense(g_dense / nf - dist.precision() * (0.5 * loss))
    } else {
        SigmaGrad::Projected(g_proj.scale(1.0 / nf).sub(&LocalDirection::identity_projection(spec)?.scale(loss))?)
    };
    finite_or_fail(GradBundle { mean_grad: mean_grad / nf, sigma, loss })
}

/// Score-function estimator for the covariance form (dense only).
pub fn reinforce_gauss_cov<R: Rng + ?Sized>(
    dist: &GaussianSqrtCov,
    obj: &dyn Objective,
    rng: &mut R,
    n: usize,
) -> Result<GradBundle> {
    check_samples(n)?;
    let p = dist.dim();
    SigmaForm::Dense.dense_for(p)?;
    let mut mean_grad = DVector::zeros(p);
    let mut g = DMatrix::zeros(p, p);
    let mut loss = 0.0;
    for _ in 0..n {
        let z = std_normal_vec(rng, p);
        let w = dist.transform(&z)?;
        let l = obj.loss(&w);
        loss += l;
        let u = dist.factor.solve_transpose(&z)?;
        mean_grad += &u * l;
        g += (&u * u.transpose()) * (0.5 * l);
    }
    let nf = n as f64;
    loss /= nf;
    let prec = dist.precision()?;
    finite_or_fail(GradBundle { mean_grad: mean_grad / nf, sigma: SigmaGrad::Dense(g / nf - prec * (0.5 * loss)), loss })
}

/// Pathwise estimator for the precision form.
pub fn reparam_gauss_prec<R: Rng + ?Sized>(
    dist: &GaussianSqrtPrec,
    obj: &dyn Objective,
    rng: &mut R,
    n: usize,
    form: SigmaForm,
) -> Result<GradBundle> {
    check_samples(n)?;
    let p = dist.dim();
    let dense = form.dense_for(p)?;
    let spec = dist.factor.structure();
    let mut mean_grad = DVector::zeros(p);
    let mut g_dense = DMatrix::zeros(if dense { p } else { 0 }, if dense { p } else { 0 });
    let mut g_proj = LocalDirection::zeros(spec)?;
    let mut loss = 0.0;
    for _ in 0..n {
        let eps = std_normal_vec(rng, p);
        let w = dist.transform(&eps)?;
        loss += obj.loss(&w);
        let g = obj.grad(&w)?;
        if dense {
            let k = dist.factor.apply(&eps)? * g.transpose();
            g_dense += (&k + k.transpose()) * 0.25;
        } else {
            g_proj = g_proj.add(&LocalDirection::sym_outer(spec, &eps, &dist.factor.solve(&g)?)?)?;
        }
        mean_grad += g;
    }
    let nf = n as f64;
    let sigma = if dense { SigmaGrad::Dense(g_dense / nf) } else { SigmaGrad::Projected(g_proj.scale(1.0 / nf)) };
    finite_or_fail(GradBundle { mean_grad: mean_grad / nf, sigma, loss: loss / nf })
}

/// Pathwise estimator for the covariance form (dense only).
pub fn reparam_gauss_cov<R: Rng + ?Sized>(
    dist: &GaussianSqrtCov,
    obj: &dyn Objective,
    rng: &mut R,
    n: usize,
) -> Result<GradBundle> {
    check_samples(n)?;
    let p = dist.dim();
    SigmaForm::Dense.dense_for(p)?;
    let mut mean_grad = DVector::zeros(p);
    let mut g_sigma = DMatrix::zeros(p, p);
    let mut loss = 0.0;
    for _ in 0..n {
        let z = std_normal_vec(rng, p);
        let w = dist.transform(&z)?;
        loss += obj.loss(&w);
        let g = obj.grad(&w)?;
        let k = dist.factor.solve_transpose(&z)? * g.transpose();
        g_sigma += (&k + k.transpose()) * 0.25;
        mean_grad += g;
    }
    let nf = n as f64;
    finite_or_fail(GradBundle { mean_grad: mean_grad / nf, sigma: SigmaGrad::Dense(g_sigma / nf), loss: loss / nf })
}

/// Second-order estimator for the precision form. With `at_mean` the Hessian and
/// gradient are taken at the mean only and `n` is ignored.
pub fn stein_gauss_prec<R: Rng + ?Sized>(
    dist: &GaussianSqrtPrec,
    obj: &dyn Objective,
    rng: &mut R,
    n: usize,
    at_mean: bool,
    form: SigmaForm,
) -> Result<GradBundle> {
    let p = dist.dim();
    let dense = form.dense_for(p)?;
    let points = if at_mean {
        vec![dist.mean.clone()]
    } else {
        check_samples(n)?;
        dist.sample(rng, n)?
    };
    let spec = dist.factor.structure();
    let mut mean_grad = DVector::zeros(p);
    let mut h_dense = DMatrix::zeros(if dense { p } else { 0 }, if dense { p } else { 0 });
    let mut h_proj = LocalDirection::zeros(spec)?;
    let mut loss = 0.0;
    for w in &points {
        loss += obj.loss(w);
        mean_grad += obj.grad(w)?;
        if dense {
            h_dense += obj.hessian(w)?;
        } else {
            let diag = obj.hess_diag(w)?;
            let m = kappa_congruence_hvp(&dist.factor, &diag, |v| obj.hvp(w, v))?;
            h_proj = h_proj.add(&m)?;
        }
    }
    let nf = points.len() as f64;
    let sigma = if dense { SigmaGrad::Dense(h_dense * (0.5 / nf)) } else { SigmaGrad::Projected(h_proj.scale(1.0 / nf)) };
    finite_or_fail(GradBundle { mean_grad: mean_grad / nf, sigma, loss: loss / nf })
}

/// Second-order estimator for the covariance form (dense only).
pub fn stein_gauss_cov<R: Rng + ?Sized>(
    dist: &GaussianSqrtCov,
    obj: &dyn Objective,
    rng: &mut R,
    n: usize,
    at_mean: bool,
) -> Result<GradBundle> {
    let p = dist.dim();
    SigmaForm::Dense.dense_for(p)?;
    let points = if at_mean {
        vec![dist.mean.clone()]
    } else {
        check_samples(n)?;
        dist.sample(rng, n)?
    };
    let mut mean_grad = DVector::zeros(p);
    let mut h = DMatrix::zeros(p, p);
    let mut loss = 0.0;
    for w in &points {
        loss += obj.loss(w);
        mean_grad += obj.grad(w)?;
        h += obj.hessian(w)?;
    }
    let nf = points.len() as f64;
    finite_or_fail(GradBundle { mean_grad: mean_grad / nf, sigma: SigmaGrad::Dense(h * (0.5 / nf)), loss: loss / nf })
}

/// Dispatches on [`EstimatorKind`] for the precision form.
pub fn estimate_gauss_prec<R: Rng + ?Sized>(
    kind: EstimatorKind,
    dist: &GaussianSqrtPrec,
    obj: &dyn Objective,
    rng: &mut R,
    n: usize,
    form: SigmaForm,
) -> Result<GradBundle> {
    match kind {
        EstimatorKind::Reinforce => reinforce_gauss_prec(dist, obj, rng, n, form),
        EstimatorKind::Reparam => reparam_gauss_prec(dist, obj, rng, n, form),
        EstimatorKind::Stein => stein_gauss_prec(dist, obj, rng, n, false, form),
        EstimatorKind::Mean => stein_gauss_prec(dist, obj, rng, n, true, form),
    }
}

/// Dispatches on [`EstimatorKind`] for the covariance form.
pub fn estimate_gauss_cov<R: Rng + ?Sized>(
    kind: EstimatorKind,
    dist: &GaussianSqrtCov,
    obj: &dyn Objective,
    rng: &mut R,
    n: usize,
) -> Result<GradBundle> {
    match kind {
        EstimatorKind::Reinforce => reinforce_gauss_cov(dist, obj, rng, n),
        EstimatorKind::Reparam => reparam_gauss_cov(dist, obj, rng, n),
        EstimatorKind::Stein => stein_gauss_cov(dist, obj, rng, n, false),
        EstimatorKind::Mean => stein_gauss_cov(dist, obj, rng, n, true),
    }
}

/// Adds the gradient of `-gamma * entropy` for the precision form.
pub fn entropy_correct(bundle: &GradBundle, dist: &GaussianSqrtPrec, gamma: f64) -> Result<GradBundle> {
    let sigma = match &bundle.sigma {
        SigmaGrad::Dense(g) => SigmaGrad::Dense(g - dist.precision() * (0.5 * gamma)),
        SigmaGrad::Projected(m) => {
            SigmaGrad::Projected(m.sub(&LocalDirection::identity_projection(dist.factor.structure())?.scale(gamma))?)
        }
    };
    Ok(GradBundle { sigma, loss: bundle.loss - gamma * dist.entropy(), ..bundle.clone() })
}

/// Adds the gradient of `-gamma * entropy` for the covariance form.
pub fn entropy_correct_cov(bundle: &GradBundle, dist: &GaussianSqrtCov, gamma: f64) -> Result<GradBundle> {
    let SigmaGrad::Dense(g) = &bundle.sigma else {
        return Err(Error::contract("covariance-form bundles must be dense"));
    };
    Ok(GradBundle {
        sigma: SigmaGrad::Dense(g - dist.precision()? * (0.5 * gamma)),
        loss: bundle.loss - gamma * dist.entropy(),
        ..bundle.clone()
    })
}

/// `kappa(2 B^{-1} g B^{-T})` for a bundle, projecting dense gradients on demand.
pub fn projected_sigma(bundle: &GradBundle, dist: &GaussianSqrtPrec) -> Result<LocalDirection> {
    match &bundle.sigma {
        SigmaGrad::Projected(m) => Ok(m.clone()),
        SigmaGrad::Dense(g) => kappa_project(&dist.factor.congruence_inv(&(g * 2.0))?, dist.factor.structure()),
    }
}

/// Gradients of the expected loss with respect to `V` and the degrees of freedom `n`.
#[derive(Clone, Debug, PartialEq)]
pub struct WishartGrad {
    pub scale_grad: DMatrix<f64>,
    pub dof_grad: f64,
    pub loss: f64,
}

fn lower_half(m: &DMatrix<f64>) -> DMatrix<f64> {
    let mut out = m.lower_triangle();
    for i in 0..out.nrows() {
        out[(i, i)] *= 0.5;
    }
    out
}

/// Pathwise estimator through the Bartlett decomposition, with implicit
/// reparameterisation of the gamma draws for the degrees of freedom.
pub fn reparam_wishart<R: Rng + ?Sized>(
    dist: &WishartSqrtPrec,
    obj: &dyn MatrixObjective,
    rng: &mut R,
    n: usize,
) -> Result<WishartGrad> {
    check_samples(n)?;
    let p = dist.dim();
    let dof = dist.dof();
    let chol = dist.scale()?.cholesky().ok_or_else(|| Error::domain("Wishart scale is not SPD"))?;
    let l = chol.l();
    let l_inv = l.clone().try_inverse().ok_or_else(|| Error::singular("Cholesky factor"))?;
    let mut scale_grad = DMatrix::zeros(p, p);
    let mut dof_grad = 0.0;
    let mut loss = 0.0;
    for _ in 0..n {
        let draw = dist.draw_noise(rng)?;
        let omega = &draw.lower;
        let lo = &l * omega;
        let w = &lo * lo.transpose();
        loss += obj.loss(&w);
        let g = sym(&obj.grad(&w));
        // d/dL of <G, L X L^T> is 2 G L X; push it through the Cholesky map
        let x = omega * omega.transpose();
        let g_l = (&g * &l * &x) * 2.0;
        let inner = lower_half(&(l.transpose() * &g_l));
        scale_grad += sym(&(l_inv.transpose() * inner * &l_inv));
        // degrees of freedom move only the diagonal of Omega
        let core = l.transpose() * &g * &lo;
        for i in 0..p {
            let c = omega[(i, i)];
            let dy = 0.5 * gamma_sample_shape_deriv((dof - i as f64) / 2.0, draw.gamma[i]);
            dof_grad += 2.0 * core[(i, i)] * dy / c;
        }
    }
    let nf = n as f64;
    let out = WishartGrad { scale_grad: scale_grad / nf, dof_grad: dof_grad / nf, loss: loss / nf };
    if out.scale_grad.iter().any(|v| !v.is_finite()) || !out.dof_grad.is_finite() {
        return Err(Error::Estimator("non-finite Wishart gradient".into()));
    }
    Ok(out)
}

/// Delta-method estimate at the mean `n V`.
pub fn mean_wishart(dist: &WishartSqrtPrec, obj: &dyn MatrixObjective) -> Result<WishartGrad> {
    let dof = dist.dof();
    let v = dist.scale()?;
    let mean = &v * dof;
    let g = sym(&obj.grad(&mean));
    Ok(WishartGrad { scale_grad: &g * dof, dof_grad: (&g * &v).trace(), loss: obj.loss(&mean) })
}

/// Gauss-Newton quantities for a matrix-Gaussian step.
#[derive(Clone, Debug, PartialEq)]
pub struct MatGaussGrad {
    /// `alpha E + mean(G)`, shaped like the mean.
    pub mean_grad: DMatrix<f64>,
    /// Symmetric `p x p` term driving the column factor.
    pub col_term: DMatrix<f64>,
    /// Symmetric `d x d` term driving the row factor.
    pub row_term: DMatrix<f64>,
    pub loss: f64,
}

fn factor_inverse(g: &crate::matgroup::GroupElement) -> Result<DMatrix<f64>> {
    g.inverse().map(|i| i.dense())
}

/// Gauss-Newton estimator for the matrix Gaussian with prior precision `alpha`
/// and entropy weight `gamma`.
pub fn matgauss_gauss_newton<R: Rng + ?Sized>(
    dist: &MatrixGaussianKron,
    obj: &dyn MatrixObjective,
    rng: &mut R,
    n: usize,
    alpha: f64,
    gamma: f64,
) -> Result<MatGaussGrad> {
    check_samples(n)?;
    let (d, p) = dist.shape();
    let a_inv = factor_inverse(&dist.col_factor)?;
    let b_inv = factor_inverse(&dist.row_factor)?;
    let mut mean_g = DMatrix::zeros(d, p);
    let mut col = DMatrix::zeros(p, p);
    let mut row = DMatrix::zeros(d, d);
    let mut loss = 0.0;
    for _ in 0..n {
        let w = dist.sample(rng, 1)?.pop().expect("one sample");
        loss += obj.loss(&w) + 0.5 * alpha * w.norm_squared();
        let g = obj.grad(&w);
        let k = &b_inv * &g * a_inv.transpose();
        col += k.tr_mul(&k);
        row += &k * k.transpose();
        mean_g += g;
    }
    let nf = n as f64;
    let tr_su_inv = b_inv.norm_squared();
    let tr_sv_inv = a_inv.norm_squared();
    let col_term = col / nf + (&a_inv * a_inv.transpose()) * (alpha * tr_su_inv) - DMatrix::identity(p, p) * (d as f64 * gamma);
    let row_term = row / nf + (&b_inv * b_inv.transpose()) * (alpha * tr_sv_inv) - DMatrix::identity(d, d) * (p as f64 * gamma);
    let out = MatGaussGrad {
        mean_grad: &dist.mean * alpha + mean_g / nf,
        col_term: sym(&col_term),
        row_term: sym(&row_term),
        loss: loss / nf,
    };
    if out.col_term.iter().chain(out.row_term.iter()).chain(out.mean_grad.iter()).any(|v| !v.is_finite()) {
        return Err(Error::Estimator("non-finite matrix-Gaussian gradient".into()));
    }
    Ok(out)
}

/// Per-component second-order gradients of `E_q[loss + gamma ln q]` for an
/// equal-weight mixture. Component `k` is estimated from draws of that component,
/// which equals the mixture expectation weighted by the responsibilities.
pub fn mixture_grads<R: Rng + ?Sized>(
    dist: &MixtureGaussSqrtPrec,
    obj: &dyn Objective,
    gamma: f64,
    rng: &mut R,
    n: usize,
) -> Result<Vec<GradBundle>> {
    check_samples(n)?;
    let p = dist.dim();
    let dense = SigmaForm::Auto.dense_for(p)?;
    let weight = dist.weight();
    let nf = n as f64;
    // Diagonals of the component precisions, shared by every sample in the matrix-free path.
    let prec_diags: Vec<DVector<f64>> =
        if dense { Vec::new() } else { dist.components.iter().map(|c| c.precision().diagonal()).collect() };
    dist.components
        .iter()
        .map(|comp| {
            let mut mean_grad = DVector::zeros(p);
            let mut h = DMatrix::zeros(if dense { p } else { 0 }, if dense { p } else { 0 });
            let mut h_proj = LocalDirection::zeros(comp.factor.structure())?;
            let mut loss = 0.0;
            for w in comp.sample(rng, n)? {
                loss += obj.loss(&w) + gamma * dist.log_density(&w)?;
                if dense {
                    let (gq, hq) = dist.log_density_derivatives(&w)?;
                    mean_grad += obj.grad(&w)? + gq * gamma;
                    h += obj.hessian(&w)? + hq * gamma;
                } else {
                    let lq = MixtureLocal::at(dist, &w)?;
                    mean_grad += obj.grad(&w)? + &lq.gbar * gamma;
                    let diag = obj.hess_diag(&w)? + lq.hess_diag(&prec_diags) * gamma;
                    let m = kappa_congruence_hvp(&comp.factor, &diag, |v| Ok(obj.hvp(&w, v)? + lq.hvp(dist, v)? * gamma))?;
                    h_proj = h_proj.add(&m)?;
                }
            }
            let sigma = if dense {
                SigmaGrad::Dense(h * (0.5 * weight / nf))
            } else {
                SigmaGrad::Projected(h_proj.scale(weight / nf))
            };
            finite_or_fail(GradBundle { mean_grad: mean_grad * (weight / nf), sigma, loss: loss * weight / nf })
        })
        .collect()
}

/// Responsibilities and per-component scores of `ln q` at one point, for Hessian-free products.
struct MixtureLocal {
    resp: Vec<f64>,
    scores: Vec<DVector<f64>>,
    gbar: DVector<f64>,
}

impl MixtureLocal {
    fn at(dist: &MixtureGaussSqrtPrec, w: &DVector<f64>) -> Result<Self> {
        let lds = dist.component_log_densities(w)?;
        let lse = log_sum_exp(&lds);
        let mut gbar = DVector::zeros(dist.dim());
        let mut resp = Vec::with_capacity(lds.len());
        let mut scores = Vec::with_capacity(lds.len());
        for (c, ld) in dist.components.iter().zip(&lds) {
            let r = (ld - lse).exp();
            let diff = w - &c.mean;
            let g = -c.factor.apply(&c.factor.apply_transpose(&diff)?)?;
            gbar += &g * r;
            resp.push(r);
            scores.push(g);
        }
        Ok(Self { resp, scores, gbar })
    }

    fn hvp(&self, dist: &MixtureGaussSqrtPrec, v: &DVector<f64>) -> Result<DVector<f64>> {
        let mut out = -&self.gbar * self.gbar.dot(v);
        for ((c, r), g) in dist.components.iter().zip(&self.resp).zip(&self.scores) {
            let sv = c.factor.apply(&c.factor.apply_transpose(v)?)?;
            out += (g * g.dot(v) - sv) * *r;
        }
        Ok(out)
    }

    fn hess_diag(&self, prec_diags: &[DVector<f64>]) -> DVector<f64> {
        let mut out = -self.gbar.component_mul(&self.gbar);
        for ((d, r), g) in prec_diags.iter().zip(&self.resp).zip(&self.scores) {
            out += (g.component_mul(g) - d) * *r;
        }
        out
    }
}
