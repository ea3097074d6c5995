//! Natural-gradient steppers, first-order baselines and run loops.

use std::io::Write as _;
use std::path::Path;
use std::time::Instant;

use nalgebra::{DMatrix, DVector};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::distributions::{
    seeded_rng, GaussianSqrtCov, GaussianSqrtPrec, MatrixGaussianKron, MixtureGaussSqrtPrec, UnivariateEf, WishartSqrtPrec,
};
use crate::error::{Error, Result};
use crate::estimators::{
    entropy_correct, entropy_correct_cov, estimate_gauss_cov, estimate_gauss_prec, matgauss_gauss_newton, mean_wishart,
    mixture_grads, projected_sigma, reparam_wishart, EstimatorKind, GradBundle, MatGaussGrad, MatrixObjective, Objective,
    SigmaForm, SigmaGrad, WishartGrad,
};
use crate::matgroup::{c_mask, exp_map, h_map, kappa_project, GroupElement, LocalDirection, StructureSpec};
use crate::special::{mv_trigamma, sigmoid};

/// Retraction from the local space to the group.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum MapKind {
    /// `I + M + M^2 / 2`, valid for every structure.
    #[default]
    H,
    /// Matrix exponential, full and diagonal structures only.
    Exp,
}

impl MapKind {
    pub fn apply(self, m: &LocalDirection) -> Result<GroupElement> {
        match self {
            MapKind::H => h_map(m),
            MapKind::Exp => exp_map(m),
        }
    }
}

impl std::str::FromStr for MapKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "h" => Ok(MapKind::H),
            "exp" => Ok(MapKind::Exp),
            other => Err(Error::Usage(format!("unknown map `{other}` (expected h or exp)"))),
        }
    }
}

/// Exponential moving average of the mean gradient with bias-corrected step size.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Momentum {
    pub c1: f64,
    pub c2: f64,
}

impl Default for Momentum {
    fn default() -> Self {
        Momentum { c1: 0.9, c2: 0.999 }
    }
}

/// Settings shared by the natural-gradient run loops.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NgdConfig {
    pub beta: f64,
    pub gamma: f64,
    pub iters: usize,
    pub estimator: EstimatorKind,
    pub mc_samples: usize,
    pub seed: u64,
    pub momentum: Option<Momentum>,
    pub map: MapKind,
    #[serde(skip)]
    pub sigma_form: SigmaForm,
}

impl Default for NgdConfig {
    fn default() -> Self {
        NgdConfig {
            beta: 0.1,
            gamma: 1.0,
            iters: 100,
            estimator: EstimatorKind::Mean,
            mc_samples: 1,
            seed: 0,
            momentum: None,
            map: MapKind::H,
            sigma_form: SigmaForm::Auto,
        }
    }
}

impl NgdConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.beta > 0.0 && self.beta.is_finite()) {
            return Err(Error::Usage("step size must be positive".into()));
        }
        if !(self.gamma >= 0.0) {
            return Err(Error::Usage("entropy weight must be non-negative".into()));
        }
        if self.mc_samples == 0 && self.estimator != EstimatorKind::Mean {
            return Err(Error::Usage("Monte-Carlo estimators need at least one sample".into()));
        }
        Ok(())
    }

    /// Independent generator for one iteration.
    pub fn iter_rng(&self, iter: usize) -> ChaCha8Rng {
        let mut rng = seeded_rng(self.seed);
        rng.set_stream(iter as u64 + 1);
        rng
    }
}

/// One natural-gradient step for the precision form:
/// `B <- B map(beta C * kappa(2 B^{-1} g B^{-T}))`, `mean <- mean - beta S^{-1} g_mean`.
pub fn step_gauss_prec(dist: &GaussianSqrtPrec, grad: &GradBundle, beta: f64, map: MapKind) -> Result<GaussianSqrtPrec> {
    step_gauss_prec_masked(dist, grad, beta, map, &c_mask(dist.factor.structure())?)
}

/// Same step with an explicit Fisher mask; lets self-checks inject a wrong one.
pub(crate) fn step_gauss_prec_masked(
    dist: &GaussianSqrtPrec,
    grad: &GradBundle,
    beta: f64,
    map: MapKind,
    mask: &LocalDirection,
) -> Result<GaussianSqrtPrec> {
    let dir = projected_sigma(grad, dist)?;
    let m = mask.hadamard(&dir)?.scale(beta);
    let factor = dist.factor.mul(&map.apply(&m)?)?;
    let shift = dist.factor.solve_transpose(&dist.factor.solve(&grad.mean_grad)?)?;
    let mean = &dist.mean - shift * beta;
    factor.validate()?;
    Ok(GaussianSqrtPrec { mean, factor })
}

/// One natural-gradient step for the covariance form (full or diagonal factor):
/// `A <- A map(-beta A^T g A)`, `mean <- mean - beta Sigma g_mean`.
pub fn step_gauss_cov(dist: &GaussianSqrtCov, grad: &GradBundle, beta: f64, map: MapKind) -> Result<GaussianSqrtCov> {
    let spec = dist.factor.structure();
    if !matches!(spec, StructureSpec::Full(_) | StructureSpec::Diagonal(_)) {
        return Err(Error::contract(format!("covariance-form steps need a full or diagonal factor, got {}", spec.label())));
    }
    let SigmaGrad::Dense(g) = &grad.sigma else {
        return Err(Error::contract("covariance-form steps need a dense covariance gradient"));
    };
    let x = dist.factor.congruence_t(g)?;
    let m = kappa_project(&(x * -beta), spec)?;
    let factor = dist.factor.mul(&map.apply(&m)?)?;
    let shift = dist.factor.apply(&dist.factor.apply_transpose(&grad.mean_grad)?)?;
    factor.validate()?;
    Ok(GaussianSqrtCov { mean: &dist.mean - shift * beta, factor })
}

/// One natural-gradient step for the Wishart family.
pub fn step_wishart(dist: &WishartSqrtPrec, grad: &WishartGrad, beta: f64) -> Result<WishartSqrtPrec> {
    let p = dist.dim();
    let n = dist.dof();
    let spec = dist.factor.structure();
    let x = dist.factor.congruence_inv(&grad.scale_grad)? * (beta / (n * n));
    let factor = dist.factor.mul(&exp_map(&kappa_project(&((&x + x.transpose()) * 0.5), spec)?)?)?;
    let v = dist.scale()?;
    let drive = grad.dof_grad - (&grad.scale_grad * &v).trace() / n;
    let b = dist.shape_param;
    let curvature = mv_trigamma(p, n / 2.0) - 2.0 * p as f64 / n;
    if !(curvature > 0.0) {
        return Err(Error::singular("degrees-of-freedom Fisher block is not positive"));
    }
    let shape_param = b - beta * (2.0 / sigmoid(b)) * drive / curvature;
    factor.validate()?;
    WishartSqrtPrec::new(shape_param, factor)
}

/// Matrix-Gaussian state: distribution, step counter and momentum buffer.
#[derive(Clone, Debug, PartialEq)]
pub struct DistState<D> {
    pub dist: D,
    pub iter: usize,
    pub momentum: Option<DMatrix<f64>>,
}

impl<D> DistState<D> {
    pub fn new(dist: D) -> Self {
        DistState { dist, iter: 0, momentum: None }
    }
}

/// One Kronecker-factored step. With momentum the step size is
/// `beta (1 - c2^t) / (1 - c1^t)` and the mean moves along the averaged gradient.
pub fn step_matgauss(
    state: &DistState<MatrixGaussianKron>,
    grad: &MatGaussGrad,
    beta: f64,
    momentum: Option<Momentum>,
    map: MapKind,
) -> Result<DistState<MatrixGaussianKron>> {
    let q = &state.dist;
    let (d, p) = q.shape();
    let t = state.iter + 1;
    let (z, beta_t) = match momentum {
        Some(Momentum { c1, c2 }) => {
            let prev = state.momentum.clone().unwrap_or_else(|| DMatrix::zeros(d, p));
            let z = &grad.mean_grad * (1.0 - c1) + prev * c1;
            (z, beta * (1.0 - c2.powi(t as i32)) / (1.0 - c1.powi(t as i32)))
        }
        None => (grad.mean_grad.clone(), beta),
    };
    // S_U^{-1} Z S_V^{-1}
    let mut left = DMatrix::zeros(d, p);
    for j in 0..p {
        let col = z.column(j).into_owned();
        left.set_column(j, &q.row_factor.solve_transpose(&q.row_factor.solve(&col)?)?);
    }
    let mut shift = DMatrix::zeros(d, p);
    for i in 0..d {
        let row = left.row(i).transpose();
        shift.set_row(i, &q.col_factor.solve_transpose(&q.col_factor.solve(&row)?)?.transpose());
    }
    let col_spec = q.col_factor.structure();
    let row_spec = q.row_factor.structure();
    let m_col = c_mask(col_spec)?.hadamard(&kappa_project(&grad.col_term, col_spec)?)?.scale(beta_t / d as f64);
    let m_row = c_mask(row_spec)?.hadamard(&kappa_project(&grad.row_term, row_spec)?)?.scale(beta_t / p as f64);
    let dist = MatrixGaussianKron::new(
        &q.mean - shift * beta_t,
        q.col_factor.mul(&map.apply(&m_col)?)?,
        q.row_factor.mul(&map.apply(&m_row)?)?,
    )?;
    Ok(DistState { dist, iter: t, momentum: momentum.map(|_| z) })
}

/// Component-wise step for an equal-weight mixture; each component uses `beta / weight`.
pub fn step_mixture(dist: &MixtureGaussSqrtPrec, grads: &[GradBundle], beta: f64, map: MapKind) -> Result<MixtureGaussSqrtPrec> {
    if grads.len() != dist.len() {
        return Err(Error::contract("one gradient bundle per component is required"));
    }
    let scaled = beta / dist.weight();
    let comps = dist.components.iter().zip(grads).map(|(c, g)| step_gauss_prec(c, g, scaled, map)).collect::<Result<Vec<_>>>()?;
    MixtureGaussSqrtPrec::new(comps)
}

/// Natural gradient in natural parameters, `F^{-1} g_tau`.
pub fn ef_natural_gradient(ef: &UnivariateEf, grad_tau: &DVector<f64>) -> Result<DVector<f64>> {
    let f = ef.family.fisher(&ef.natural())?;
    f.cholesky().map(|c| c.solve(grad_tau)).ok_or_else(|| Error::singular("exponential-family Fisher matrix"))
}

/// `params <- params - beta diag(link'(params))^{-1} g_m` where `g_m` is the gradient in
/// expectation parameters (the natural gradient in natural parameters).
pub fn step_univariate_ef(ef: &UnivariateEf, grad_mean: &DVector<f64>, beta: f64) -> Result<UnivariateEf> {
    if grad_mean.len() != ef.params.len() {
        return Err(Error::contract("gradient length differs from parameter length"));
    }
    let params = DVector::from_fn(ef.params.len(), |i, _| {
        ef.params[i] - beta * grad_mean[i] / ef.link.deriv(ef.params[i])
    });
    UnivariateEf::new(params, ef.family, ef.link)
}

/// Adam optimiser state.
#[derive(Clone, Debug, PartialEq)]
pub struct Adam {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    m: DVector<f64>,
    v: DVector<f64>,
    t: i32,
}

impl Adam {
    pub fn new(lr: f64, dim: usize) -> Self {
        Adam { lr, beta1: 0.9, beta2: 0.999, eps: 1e-8, m: DVector::zeros(dim), v: DVector::zeros(dim), t: 0 }
    }
}

pub fn adam_step(state: &mut Adam, params: &DVector<f64>, grad: &DVector<f64>) -> DVector<f64> {
    state.t += 1;
    state.m = &state.m * state.beta1 + grad * (1.0 - state.beta1);
    state.v = &state.v * state.beta2 + grad.component_mul(grad) * (1.0 - state.beta2);
    let mc = 1.0 - state.beta1.powi(state.t);
    let vc = 1.0 - state.beta2.powi(state.t);
    let step = DVector::from_fn(params.len(), |i, _| (state.m[i] / mc) / ((state.v[i] / vc).sqrt() + state.eps));
    params - step * state.lr
}

pub fn gd_step(params: &DVector<f64>, grad: &DVector<f64>, lr: f64) -> DVector<f64> {
    params - grad * lr
}

/// One recorded iteration.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TraceRow {
    pub iter: usize,
    pub loss: f64,
    pub grad_norm: f64,
    pub wall_ms: f64,
}

/// Per-iteration record of a run. Row 0 describes the initial state.
#[derive(Clone, Debug, PartialEq, Default, Serialize, Deserialize)]
pub struct Trace {
    pub label: String,
    pub rows: Vec<TraceRow>,
}

impl Trace {
    pub fn new(label: impl Into<String>) -> Self {
        Trace { label: label.into(), rows: Vec::new() }
    }

    fn push(&mut self, iter: usize, loss: f64, grad_norm: f64, start: &Instant) {
        self.rows.push(TraceRow { iter, loss, grad_norm, wall_ms: start.elapsed().as_secs_f64() * 1e3 });
    }

    pub fn final_loss(&self) -> Option<f64> {
        self.rows.last().map(|r| r.loss)
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::from("iter,loss,grad_norm,wall_ms\n");
        for r in &self.rows {
            s.push_str(&format!("{},{:.12e},{:.12e},{:.3}\n", r.iter, r.loss, r.grad_norm, r.wall_ms));
        }
        s
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut f = std::fs::File::create(path)?;
        f.write_all(self.to_csv().as_bytes())?;
        Ok(())
    }
}

fn step_err(iter: usize, e: Error) -> Error {
    Error::Step { iter, source: Box::new(e) }
}

/// Precision-form run. The loss column is the estimated `E[loss] - gamma H`.
pub fn run_gauss_prec(obj: &dyn Objective, init: GaussianSqrtPrec, cfg: &NgdConfig) -> Result<(GaussianSqrtPrec, Trace)> {
    cfg.validate()?;
    let start = Instant::now();
    let mut trace = Trace::new("ngd");
    let mut dist = init;
    for t in 0..=cfg.iters {
        let mut rng = cfg.iter_rng(t);
        let gb = estimate_gauss_prec(cfg.estimator, &dist, obj, &mut rng, cfg.mc_samples, cfg.sigma_form)
            .and_then(|g| if cfg.gamma != 0.0 { entropy_correct(&g, &dist, cfg.gamma) } else { Ok(g) })
            .map_err(|e| step_err(t, e))?;
        trace.push(t, gb.loss, gb.mean_grad.norm(), &start);
        if t < cfg.iters {
            dist = step_gauss_prec(&dist, &gb, cfg.beta, cfg.map).map_err(|e| step_err(t + 1, e))?;
        }
    }
    Ok((dist, trace))
}

/// Covariance-form run.
pub fn run_gauss_cov(obj: &dyn Objective, init: GaussianSqrtCov, cfg: &NgdConfig) -> Result<(GaussianSqrtCov, Trace)> {
    cfg.validate()?;
    let start = Instant::now();
    let mut trace = Trace::new("ngd-cov");
    let mut dist = init;
    for t in 0..=cfg.iters {
        let mut rng = cfg.iter_rng(t);
        let gb = estimate_gauss_cov(cfg.estimator, &dist, obj, &mut rng, cfg.mc_samples)
            .and_then(|g| if cfg.gamma != 0.0 { entropy_correct_cov(&g, &dist, cfg.gamma) } else { Ok(g) })
            .map_err(|e| step_err(t, e))?;
        trace.push(t, gb.loss, gb.mean_grad.norm(), &start);
        if t < cfg.iters {
            dist = step_gauss_cov(&dist, &gb, cfg.beta, cfg.map).map_err(|e| step_err(t + 1, e))?;
        }
    }
    Ok((dist, trace))
}

/// Wishart run with the pathwise (`Reparam`) or at-mean (`Mean`) estimator.
pub fn run_wishart(obj: &dyn MatrixObjective, init: WishartSqrtPrec, cfg: &NgdConfig) -> Result<(WishartSqrtPrec, Trace)> {
    cfg.validate()?;
    let start = Instant::now();
    let mut trace = Trace::new("ngd-wishart");
    let mut dist = init;
    for t in 0..=cfg.iters {
        let mut rng = cfg.iter_rng(t);
        let g = match cfg.estimator {
            EstimatorKind::Reparam => reparam_wishart(&dist, obj, &mut rng, cfg.mc_samples),
            EstimatorKind::Mean => mean_wishart(&dist, obj),
            other => Err(Error::Usage(format!("{other:?} is not available for the Wishart family"))),
        }
        .map_err(|e| step_err(t, e))?;
        trace.push(t, g.loss, g.scale_grad.norm(), &start);
        if t < cfg.iters {
            dist = step_wishart(&dist, &g, cfg.beta).map_err(|e| step_err(t + 1, e))?;
        }
    }
    Ok((dist, trace))
}

/// Mixture run; the loss column estimates `E_q[loss] + gamma E_q[ln q]`.
pub fn run_mixture(obj: &dyn Objective, init: MixtureGaussSqrtPrec, cfg: &NgdConfig) -> Result<(MixtureGaussSqrtPrec, Trace)> {
    cfg.validate()?;
    let start = Instant::now();
    let mut trace = Trace::new("ngd-mixture");
    let mut dist = init;
    for t in 0..=cfg.iters {
        let mut rng = cfg.iter_rng(t);
        let grads = mixture_grads(&dist, obj, cfg.gamma, &mut rng, cfg.mc_samples.max(1)).map_err(|e| step_err(t, e))?;
        let loss: f64 = grads.iter().map(|g| g.loss).sum();
        let gnorm = grads.iter().map(|g| g.mean_grad.norm_squared()).sum::<f64>().sqrt();
        trace.push(t, loss, gnorm, &start);
        if t < cfg.iters {
            dist = step_mixture(&dist, &grads, cfg.beta, cfg.map).map_err(|e| step_err(t + 1, e))?;
        }
    }
    Ok((dist, trace))
}

/// Matrix-Gaussian run with prior precision `alpha`.
pub fn run_matgauss(
    obj: &dyn MatrixObjective,
    init: MatrixGaussianKron,
    cfg: &NgdConfig,
    alpha: f64,
) -> Result<(DistState<MatrixGaussianKron>, Trace)> {
    cfg.validate()?;
    let start = Instant::now();
    let mut trace = Trace::new("ngd-matgauss");
    let mut state = DistState::new(init);
    for t in 0..=cfg.iters {
        let mut rng = cfg.iter_rng(t);
        let g = matgauss_gauss_newton(&state.dist, obj, &mut rng, cfg.mc_samples.max(1), alpha, cfg.gamma)
            .map_err(|e| step_err(t, e))?;
        trace.push(t, g.loss, g.mean_grad.norm(), &start);
        if t < cfg.iters {
            state = step_matgauss(&state, &g, cfg.beta, cfg.momentum, cfg.map).map_err(|e| step_err(t + 1, e))?;
        }
    }
    Ok((state, trace))
}

/// First-order point-estimate baselines.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", tag = "kind")]
pub enum Baseline {
    Adam { lr: f64 },
    Gd { lr: f64 },
}

impl Baseline {
    pub fn label(&self) -> &'static str {
        match self {
            Baseline::Adam { .. } => "adam",
            Baseline::Gd { .. } => "gd",
        }
    }
}

/// Minimises `obj` directly from `init`; the loss column is `obj(w_t)`.
pub fn run_baseline(obj: &dyn Objective, init: DVector<f64>, baseline: Baseline, iters: usize) -> Result<(DVector<f64>, Trace)> {
    let start = Instant::now();
    let mut trace = Trace::new(baseline.label());
    let mut w = init;
    let mut adam = match baseline {
        Baseline::Adam { lr } => Some(Adam::new(lr, w.len())),
        Baseline::Gd { .. } => None,
    };
    for t in 0..=iters {
        let g = obj.grad(&w).map_err(|e| step_err(t, e))?;
        let loss = obj.loss(&w);
        if !loss.is_finite() {
            return Err(step_err(t, Error::domain("baseline diverged")));
        }
        trace.push(t, loss, g.norm(), &start);
        if t < iters {
            w = match (&mut adam, baseline) {
                (Some(a), _) => adam_step(a, &w, &g),
                (None, Baseline::Gd { lr }) => gd_step(&w, &g, lr),
                _ => unreachable!(),
            };
        }
    }
    Ok((w, trace))
}
