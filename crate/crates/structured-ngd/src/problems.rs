//! Benchmark objectives with analytic derivatives.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::StandardNormal;
use statrs::function::gamma::ln_gamma;

use crate::distributions::{log_sum_exp, seeded_rng, std_normal_vec};
use crate::error::{Error, Result};
use crate::estimators::{Capabilities, MatrixObjective, Objective};
use crate::special::sigmoid;

const ALL: Capabilities = Capabilities { grad: true, hvp: true, hess_diag: true };

fn check_dim(w: &DVector<f64>, p: usize) {
    assert_eq!(w.len(), p, "argument has the wrong dimension");
}

/// `0.5 (w - opt)^T H (w - opt)`.
#[derive(Clone, Debug)]
pub struct Quadratic {
    pub hessian: DMatrix<f64>,
    pub optimum: DVector<f64>,
}

impl Quadratic {
    pub fn new(hessian: DMatrix<f64>, optimum: DVector<f64>) -> Result<Self> {
        if hessian.nrows() != optimum.len() || hessian.ncols() != optimum.len() {
            return Err(Error::contract("Hessian and optimum shapes differ"));
        }
        Ok(Quadratic { hessian: (&hessian + hessian.transpose()) * 0.5, optimum })
    }

    /// Random SPD Hessian with eigenvalues spread evenly over `[lo, hi]`.
    pub fn random(p: usize, lo: f64, hi: f64, seed: u64) -> Result<Self> {
        if !(lo > 0.0 && hi >= lo) {
            return Err(Error::domain("eigenvalue range must be positive and ordered"));
        }
        let mut rng = seeded_rng(seed);
        let g = DMatrix::from_fn(p, p, |_, _| rng.sample::<f64, _>(StandardNormal));
        let q = g.qr().q();
        let eig = DVector::from_fn(p, |i, _| if p == 1 { lo } else { lo + (hi - lo) * i as f64 / (p - 1) as f64 });
        let h = &q * DMatrix::from_diagonal(&eig) * q.transpose();
        Self::new(h, std_normal_vec(&mut rng, p))
    }
}

impl Objective for Quadratic {
    fn dim(&self) -> usize {
        self.optimum.len()
    }
    fn loss(&self, w: &DVector<f64>) -> f64 {
        let r = w - &self.optimum;
        0.5 * r.dot(&(&self.hessian * &r))
    }
    fn capabilities(&self) -> Capabilities {
        ALL
    }
    fn grad(&self, w: &DVector<f64>) -> Result<DVector<f64>> {
        Ok(&self.hessian * (w - &self.optimum))
    }
    fn hvp(&self, _w: &DVector<f64>, v: &DVector<f64>) -> Result<DVector<f64>> {
        Ok(&self.hessian * v)
    }
    fn hess_diag(&self, _w: &DVector<f64>) -> Result<DVector<f64>> {
        Ok(self.hessian.diagonal())
    }
}

/// Which chained-valley formula [`Rosenbrock`] uses.
#[derive(Clone, Copy, Debug, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum RosenbrockVariant {
    /// `100 (w_{i+1} - w_i^2)^2 + (w_i - 1)^2`.
    Classical,
    /// `100 (w_{i+1} - w_i)^2 + (w_i - 1)^2`, a convex quadratic variant.
    Difference,
}

/// Averaged chained Rosenbrock function.
#[derive(Clone, Debug)]
pub struct Rosenbrock {
    pub p: usize,
    pub variant: RosenbrockVariant,
}

impl Rosenbrock {
    /// `(t, dt/dw_i, d2t/dw_i2)` where `t` is the inner residual of term `i`.
    fn inner(&self, wi: f64, wn: f64) -> (f64, f64, f64) {
        match self.variant {
            RosenbrockVariant::Classical => (wn - wi * wi, -2.0 * wi, -2.0),
            RosenbrockVariant::Difference => (wn - wi, -1.0, 0.0),
        }
    }

    pub fn optimum(&self) -> DVector<f64> {
        DVector::from_element(self.p, 1.0)
    }

    /// Tridiagonal Hessian as `(diag, off)` with `off[i] = H[i, i+1]`.
    fn tridiag(&self, w: &DVector<f64>) -> (DVector<f64>, DVector<f64>) {
        let p = self.p;
        let c = 1.0 / p as f64;
        let mut diag = DVector::zeros(p);
        let mut off = DVector::zeros(p.saturating_sub(1));
        for i in 0..p - 1 {
            let (t, dt, d2t) = self.inner(w[i], w[i + 1]);
            diag[i] += c * (200.0 * (dt * dt + t * d2t) + 2.0);
            diag[i + 1] += c * 200.0;
            off[i] += c * 200.0 * dt;
        }
        (diag, off)
    }
}

pub fn rosenbrock(p: usize) -> Result<Rosenbrock> {
    rosenbrock_variant(p, RosenbrockVariant::Classical)
}

pub fn rosenbrock_variant(p: usize, variant: RosenbrockVariant) -> Result<Rosenbrock> {
    if p < 2 {
        return Err(Error::contract("Rosenbrock needs p >= 2"));
    }
    Ok(Rosenbrock { p, variant })
}

impl Objective for Rosenbrock {
    fn dim(&self) -> usize {
        self.p
    }
    fn loss(&self, w: &DVector<f64>) -> f64 {
        check_dim(w, self.p);
        let s: f64 = (0..self.p - 1)
            .map(|i| {
                let (t, _, _) = self.inner(w[i], w[i + 1]);
                100.0 * t * t + (w[i] - 1.0).powi(2)
            })
            .sum();
        s / self.p as f64
    }
    fn capabilities(&self) -> Capabilities {
        ALL
    }
    fn grad(&self, w: &DVector<f64>) -> Result<DVector<f64>> {
        check_dim(w, self.p);
        let c = 1.0 / self.p as f64;
        let mut g = DVector::zeros(self.p);
        for i in 0..self.p - 1 {
            let (t, dt, _) = self.inner(w[i], w[i + 1]);
            g[i] += c * (200.0 * t * dt + 2.0 * (w[i] - 1.0));
            g[i + 1] += c * 200.0 * t;
        }
        Ok(g)
    }
    fn hvp(&self, w: &DVector<f64>, v: &DVector<f64>) -> Result<DVector<f64>> {
        let (diag, off) = self.tridiag(w);
        Ok(tridiag_mul(&diag, &off, v))
    }
    fn hess_diag(&self, w: &DVector<f64>) -> Result<DVector<f64>> {
        Ok(self.tridiag(w).0)
    }
}

fn tridiag_mul(diag: &DVector<f64>, off: &DVector<f64>, v: &DVector<f64>) -> DVector<f64> {
    let mut out = diag.component_mul(v);
    for i in 0..off.len() {
        out[i] += off[i] * v[i + 1];
        out[i + 1] += off[i] * v[i];
    }
    out
}

/// Averaged Dixon-Price function.
#[derive(Clone, Debug)]
pub struct DixonPrice {
    pub p: usize,
}

pub fn dixon_price(p: usize) -> Result<DixonPrice> {
    if p < 2 {
        return Err(Error::contract("Dixon-Price needs p >= 2"));
    }
    Ok(DixonPrice { p })
}

impl DixonPrice {
    /// `w_i = 2^{-(2^i - 2) / 2^i}` for 1-based `i`.
    pub fn optimum(&self) -> DVector<f64> {
        DVector::from_fn(self.p, |i, _| {
            let e = 2f64.powi(i as i32 + 1);
            2f64.powf(-(e - 2.0) / e)
        })
    }

    fn tridiag(&self, w: &DVector<f64>) -> (DVector<f64>, DVector<f64>) {
        let p = self.p;
        let c = 1.0 / p as f64;
        let mut diag = DVector::zeros(p);
        let mut off = DVector::zeros(p - 1);
        diag[0] += 2.0 * c;
        for i in 1..p {
            let k = (i + 1) as f64;
            diag[i] += c * 8.0 * k * (6.0 * w[i] * w[i] - w[i - 1]);
            diag[i - 1] += c * 2.0 * k;
            off[i - 1] += c * (-8.0 * k * w[i]);
        }
        (diag, off)
    }
}

impl Objective for DixonPrice {
    fn dim(&self) -> usize {
        self.p
    }
    fn loss(&self, w: &DVector<f64>) -> f64 {
        check_dim(w, self.p);
        let mut s = (w[0] - 1.0).powi(2);
        for i in 1..self.p {
            s += (i + 1) as f64 * (2.0 * w[i] * w[i] - w[i - 1]).powi(2);
        }
        s / self.p as f64
    }
    fn capabilities(&self) -> Capabilities {
        ALL
    }
    fn grad(&self, w: &DVector<f64>) -> Result<DVector<f64>> {
        check_dim(w, self.p);
        let c = 1.0 / self.p as f64;
        let mut g = DVector::zeros(self.p);
        g[0] += c * 2.0 * (w[0] - 1.0);
        for i in 1..self.p {
            let k = (i + 1) as f64;
            let u = 2.0 * w[i] * w[i] - w[i - 1];
            g[i] += c * 8.0 * k * u * w[i];
            g[i - 1] += c * (-2.0 * k * u);
        }
        Ok(g)
    }
    fn hvp(&self, w: &DVector<f64>, v: &DVector<f64>) -> Result<DVector<f64>> {
        let (diag, off) = self.tridiag(w);
        Ok(tridiag_mul(&diag, &off, v))
    }
    fn hess_diag(&self, w: &DVector<f64>) -> Result<DVector<f64>> {
        Ok(self.tridiag(w).0)
    }
}

/// Negative log density of an equal-weight mixture of multivariate Student-t
/// distributions. The density is normalised, so the best attainable variational
/// objective is exactly zero.
#[derive(Clone, Debug)]
pub struct StudentTMixture {
    pub locations: Vec<DVector<f64>>,
    /// Inverse scale matrices.
    pub precisions: Vec<DMatrix<f64>>,
    pub dof: f64,
    log_norms: Vec<f64>,
}

impl StudentTMixture {
    pub fn new(locations: Vec<DVector<f64>>, scales: Vec<DMatrix<f64>>, dof: f64) -> Result<Self> {
        if locations.is_empty() || locations.len() != scales.len() || !(dof > 0.0) {
            return Err(Error::contract("need matching non-empty locations/scales and positive dof"));
        }
        let p = locations[0].len() as f64;
        let mut precisions = Vec::new();
        let mut log_norms = Vec::new();
        for s in &scales {
            let chol = s.clone().cholesky().ok_or_else(|| Error::domain("scale matrix is not SPD"))?;
            let log_det = 2.0 * chol.l().diagonal().iter().map(|v| v.ln()).sum::<f64>();
            precisions.push(chol.inverse());
            log_norms.push(
                ln_gamma((dof + p) / 2.0) - ln_gamma(dof / 2.0) - 0.5 * p * (dof * std::f64::consts::PI).ln() - 0.5 * log_det,
            );
        }
        Ok(StudentTMixture { locations, precisions, dof, log_norms })
    }

    fn dim_f(&self) -> f64 {
        self.locations[0].len() as f64
    }

    /// Per component: log density, gradient of the log density, residual `P r`, and `alpha + q`.
    fn parts(&self, w: &DVector<f64>) -> Vec<(f64, DVector<f64>, DVector<f64>, f64)> {
        let p = self.dim_f();
        self.locations
            .iter()
            .zip(&self.precisions)
            .zip(&self.log_norms)
            .map(|((u, prec), ln)| {
                let r = w - u;
                let pr = prec * &r;
                let q = r.dot(&pr);
                let denom = self.dof + q;
                let ld = ln - 0.5 * (self.dof + p) * (1.0 + q / self.dof).ln();
                let g = &pr * (-(self.dof + p) / denom);
                (ld, g, pr, denom)
            })
            .collect()
    }

    fn weights(parts: &[(f64, DVector<f64>, DVector<f64>, f64)]) -> Vec<f64> {
        let lds: Vec<f64> = parts.iter().map(|x| x.0).collect();
        let lse = log_sum_exp(&lds);
        lds.iter().map(|l| (l - lse).exp()).collect()
    }

    /// Dense Hessian of the loss.
    pub fn dense_hessian(&self, w: &DVector<f64>) -> DMatrix<f64> {
        let parts = self.parts(w);
        let wts = Self::weights(&parts);
        let p = self.dim_f();
        let n = w.len();
        let mut h = DMatrix::zeros(n, n);
        let mut gbar = DVector::zeros(n);
        for ((_, g, pr, denom), (wt, prec)) in parts.iter().zip(wts.iter().zip(&self.precisions)) {
            let hc = -(prec * ((self.dof + p) / denom)) + (pr * pr.transpose()) * (2.0 * (self.dof + p) / (denom * denom));
            h += (hc + g * g.transpose()) * *wt;
            gbar += g * *wt;
        }
        h -= &gbar * gbar.transpose();
        -h
    }
}

/// Random instance: locations uniform in `[-spread, spread]^p`, scales diagonal plus rank one.
pub fn student_t_mixture(p: usize, components: usize, dof: f64, spread: f64, seed: u64) -> Result<StudentTMixture> {
    let mut rng = seeded_rng(seed);
    let mut locs = Vec::new();
    let mut scales = Vec::new();
    for _ in 0..components {
        locs.push(DVector::from_fn(p, |_, _| rng.random_range(-spread..=spread)));
        let v = std_normal_vec(&mut rng, p) * 0.5;
        let d = DVector::from_fn(p, |_, _| rng.random_range(0.5..2.0));
        scales.push(DMatrix::from_diagonal(&d) + &v * v.transpose());
    }
    StudentTMixture::new(locs, scales, dof)
}

impl Objective for StudentTMixture {
    fn dim(&self) -> usize {
        self.locations[0].len()
    }
    fn loss(&self, w: &DVector<f64>) -> f64 {
        let lds: Vec<f64> = self.parts(w).into_iter().map(|x| x.0).collect();
        -(log_sum_exp(&lds) - (lds.len() as f64).ln())
    }
    fn capabilities(&self) -> Capabilities {
        ALL
    }
    fn grad(&self, w: &DVector<f64>) -> Result<DVector<f64>> {
        let parts = self.parts(w);
        let wts = Self::weights(&parts);
        Ok(-parts.iter().zip(&wts).fold(DVector::zeros(w.len()), |acc, (x, wt)| acc + &x.1 * *wt))
    }
    fn hvp(&self, w: &DVector<f64>, v: &DVector<f64>) -> Result<DVector<f64>> {
        let parts = self.parts(w);
        let wts = Self::weights(&parts);
        let p = self.dim_f();
        let mut out = DVector::zeros(w.len());
        let mut gbar = DVector::zeros(w.len());
        for ((_, g, pr, denom), (wt, prec)) in parts.iter().zip(wts.iter().zip(&self.precisions)) {
            let hv = -(prec * v) * ((self.dof + p) / denom) + pr * (2.0 * (self.dof + p) * pr.dot(v) / (denom * denom));
            out += (hv + g * g.dot(v)) * *wt;
            gbar += g * *wt;
        }
        out -= &gbar * gbar.dot(v);
        Ok(-out)
    }
    fn hess_diag(&self, w: &DVector<f64>) -> Result<DVector<f64>> {
        let parts = self.parts(w);
        let wts = Self::weights(&parts);
        let a = self.dof + self.dim_f();
        let mut out = DVector::zeros(w.len());
        let mut gbar = DVector::zeros(w.len());
        for ((_, g, pr, denom), (wt, prec)) in parts.iter().zip(wts.iter().zip(&self.precisions)) {
            let hc = -prec.diagonal() * (a / denom) + pr.component_mul(pr) * (2.0 * a / (denom * denom));
            out += (hc + g.component_mul(g)) * *wt;
            gbar += g * *wt;
        }
        out -= gbar.component_mul(&gbar);
        Ok(-out)
    }
    fn hessian(&self, w: &DVector<f64>) -> Result<DMatrix<f64>> {
        Ok(self.dense_hessian(w))
    }
}

/// One-parameter logistic regression with a standard normal prior, as a negative
/// log joint: `sum_i softplus(-y_i x_i w) + w^2 / 2 + ln(2 pi) / 2`.
#[derive(Clone, Debug)]
pub struct Logistic1d {
    pub x: Vec<f64>,
    pub y: Vec<f64>,
}

/// `n` points with `x ~ U(-3, 3)` and labels drawn from `sigmoid(2x)`.
pub fn logistic_1d(n: usize, seed: u64) -> Result<Logistic1d> {
    if n == 0 {
        return Err(Error::contract("need at least one data point"));
    }
    let mut rng = seeded_rng(seed);
    let x: Vec<f64> = (0..n).map(|_| rng.random_range(-3.0..3.0)).collect();
    let y = x.iter().map(|&xi| if rng.random::<f64>() < sigmoid(2.0 * xi) { 1.0 } else { -1.0 }).collect();
    Ok(Logistic1d { x, y })
}

impl Logistic1d {
    /// Second derivative of the loss at `w`.
    pub fn curvature(&self, w: f64) -> f64 {
        1.0 + self.x.iter().map(|xi| {
            let s = sigmoid(xi * w);
            s * (1.0 - s) * xi * xi
        }).sum::<f64>()
    }

    pub fn slope(&self, w: f64) -> f64 {
        w - self.x.iter().zip(&self.y).map(|(xi, yi)| sigmoid(-yi * xi * w) * yi * xi).sum::<f64>()
    }
}

impl Objective for Logistic1d {
    fn dim(&self) -> usize {
        1
    }
    fn loss(&self, w: &DVector<f64>) -> f64 {
        let w0 = w[0];
        self.x.iter().zip(&self.y).map(|(xi, yi)| crate::special::softplus(-yi * xi * w0)).sum::<f64>()
            + 0.5 * w0 * w0
            + 0.5 * (2.0 * std::f64::consts::PI).ln()
    }
    fn capabilities(&self) -> Capabilities {
        ALL
    }
    fn grad(&self, w: &DVector<f64>) -> Result<DVector<f64>> {
        Ok(DVector::from_element(1, self.slope(w[0])))
    }
    fn hvp(&self, w: &DVector<f64>, v: &DVector<f64>) -> Result<DVector<f64>> {
        Ok(v * self.curvature(w[0]))
    }
    fn hess_diag(&self, w: &DVector<f64>) -> Result<DVector<f64>> {
        Ok(DVector::from_element(1, self.curvature(w[0])))
    }
}

/// Learn an SPD `W` such that `W Q x ~ x`, i.e. `W ~ Q^{-1}`:
/// `loss(W) = (1 / 2N) sum_i || W Q x_i - x_i ||^2`.
#[derive(Clone, Debug)]
pub struct MetricNearness {
    pub q: DMatrix<f64>,
    pub train: DMatrix<f64>,
    pub test: DMatrix<f64>,
}

pub fn metric_nearness(p: usize, n_train: usize, n_test: usize, seed: u64) -> Result<MetricNearness> {
    if p == 0 || n_train == 0 || n_test == 0 {
        return Err(Error::contract("metric nearness needs positive sizes"));
    }
    let mut rng = seeded_rng(seed);
    let g = DMatrix::from_fn(p, p, |_, _| rng.sample::<f64, _>(StandardNormal));
    let q = (&g * g.transpose()) / p as f64 + DMatrix::identity(p, p) * 0.5;
    let train = DMatrix::from_fn(p, n_train, |_, _| rng.sample::<f64, _>(StandardNormal));
    let test = DMatrix::from_fn(p, n_test, |_, _| rng.sample::<f64, _>(StandardNormal));
    Ok(MetricNearness { q, train, test })
}

impl MetricNearness {
    fn loss_on(&self, w: &DMatrix<f64>, x: &DMatrix<f64>) -> f64 {
        let r = w * &self.q * x - x;
        0.5 * r.norm_squared() / x.ncols() as f64
    }

    pub fn test_loss(&self, w: &DMatrix<f64>) -> f64 {
        self.loss_on(w, &self.test)
    }

    /// Loss restricted to the given training columns.
    pub fn batch_loss(&self, w: &DMatrix<f64>, idx: &[usize]) -> f64 {
        self.loss_on(w, &self.train.select_columns(idx))
    }

    /// Symmetrised gradient on the given training columns.
    pub fn batch_grad(&self, w: &DMatrix<f64>, idx: &[usize]) -> DMatrix<f64> {
        self.grad_on(w, &self.train.select_columns(idx))
    }

    fn grad_on(&self, w: &DMatrix<f64>, x: &DMatrix<f64>) -> DMatrix<f64> {
        let qx = &self.q * x;
        let g = (w * &qx - x) * qx.transpose() / x.ncols() as f64;
        (&g + g.transpose()) * 0.5
    }
}

impl MatrixObjective for MetricNearness {
    fn shape(&self) -> (usize, usize) {
        (self.q.nrows(), self.q.nrows())
    }
    fn loss(&self, w: &DMatrix<f64>) -> f64 {
        self.loss_on(w, &self.train)
    }
    fn grad(&self, w: &DMatrix<f64>) -> DMatrix<f64> {
        self.grad_on(w, &self.train)
    }
}

/// Multi-output least squares `(1 / 2N) || W X - Y ||_F^2` over `d x p` matrices.
#[derive(Clone, Debug)]
pub struct MatrixRegression {
    pub inputs: DMatrix<f64>,
    pub targets: DMatrix<f64>,
}

pub fn matrix_regression(d: usize, p: usize, n: usize, noise: f64, seed: u64) -> Result<MatrixRegression> {
    if d == 0 || p == 0 || n == 0 {
        return Err(Error::contract("matrix regression needs positive sizes"));
    }
    let mut rng = seeded_rng(seed);
    let truth = DMatrix::from_fn(d, p, |_, _| rng.sample::<f64, _>(StandardNormal));
    let inputs = DMatrix::from_fn(p, n, |_, _| rng.sample::<f64, _>(StandardNormal));
    let targets = &truth * &inputs + DMatrix::from_fn(d, n, |_, _| noise * rng.sample::<f64, _>(StandardNormal));
    Ok(MatrixRegression { inputs, targets })
}

impl MatrixObjective for MatrixRegression {
    fn shape(&self) -> (usize, usize) {
        (self.targets.nrows(), self.inputs.nrows())
    }
    fn loss(&self, w: &DMatrix<f64>) -> f64 {
        0.5 * (w * &self.inputs - &self.targets).norm_squared() / self.inputs.ncols() as f64
    }
    fn grad(&self, w: &DMatrix<f64>) -> DMatrix<f64> {
        (w * &self.inputs - &self.targets) * self.inputs.transpose() / self.inputs.ncols() as f64
    }
}
