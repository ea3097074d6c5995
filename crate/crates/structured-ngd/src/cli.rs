//! Command-line experiment runner: `run <problem>` writes one CSV trace per optimizer,
//! `verify` prints a pass/fail table of numerical self-checks.

use std::collections::BTreeSet;
use std::ffi::OsString;
use std::path::{Path, PathBuf};

use clap::builder::PossibleValuesParser;
use clap::{Args, Parser, Subcommand, ValueEnum};
use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::distributions::{
    seeded_rng, GaussianSqrtCov, GaussianSqrtPrec, MatrixGaussianKron, MixtureGaussSqrtPrec, WishartSqrtPrec,
};
use crate::error::{Error, Result};
use crate::estimators::{mean_wishart, EstimatorKind, GradBundle, MatrixObjective, Objective, SigmaGrad};
use crate::matgroup::{c_mask, local_basis, GroupElement, StructureSpec, SymBasis};
use crate::optimizer::{
    run_baseline, run_gauss_prec, run_matgauss, run_mixture, run_wishart, step_gauss_prec, step_gauss_prec_masked,
    step_wishart, Baseline, MapKind, NgdConfig, Trace,
};
use crate::oracles::{dense_step_gauss_prec, fim_via_kl, finite_diff_check, singular_fim_demo, FamilyState};
use crate::problems::{
    dixon_price, logistic_1d, matrix_regression, metric_nearness, rosenbrock, student_t_mixture,
};

/// Benchmark problems the runner knows about.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, ValueEnum)]
#[serde(rename_all = "kebab-case")]
pub enum ProblemKind {
    Rosenbrock,
    DixonPrice,
    MixtureVi,
    #[value(name = "logistic-1d")]
    #[serde(rename = "logistic-1d")]
    Logistic1d,
    MetricNearness,
    MatrixRegression,
}

/// Structure names as they appear on the command line.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, ValueEnum)]
#[serde(rename_all = "kebab-case")]
pub enum StructureFlag {
    Full,
    Diag,
    TriUp,
    TriLow,
    HsUp,
    HsLow,
    Kron,
}

/// Everything needed to reproduce one run. Written next to the CSV files.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunManifest {
    pub problem: ProblemKind,
    pub p: usize,
    /// Row count of the matrix-regression weight.
    pub d: usize,
    pub k: usize,
    pub k1: usize,
    pub k2: usize,
    /// Mixture components of the approximation.
    pub components: usize,
    /// Mixture components of the target.
    pub targets: usize,
    /// Data points for the data-driven problems.
    pub n: usize,
    /// Location spread of the mixture target.
    pub spread: f64,
    /// Initial value of every mean coordinate for the valley problems.
    pub start: f64,
    /// Prior precision for matrix regression.
    pub prior_precision: f64,
    pub structure: StructureFlag,
    pub ngd: NgdConfig,
    pub baselines: Vec<Baseline>,
    pub out: PathBuf,
    /// Record measured wall time; off by default so reruns are byte-identical.
    #[serde(default)]
    pub timing: bool,
}

impl RunManifest {
    /// Library defaults for each problem (desk-scale, not tuned to any figure).
    pub fn defaults(problem: ProblemKind) -> Self {
        let base = RunManifest {
            problem,
            p: 200,
            d: 2,
            k: 10,
            k1: 10,
            k2: 10,
            components: 5,
            targets: 10,
            n: 50,
            spread: 5.0,
            start: -1.5,
            prior_precision: 0.5,
            structure: StructureFlag::HsLow,
            ngd: NgdConfig { beta: 0.3, gamma: 1.0, iters: 2000, ..NgdConfig::default() },
            baselines: vec![Baseline::Adam { lr: 0.1 }],
            out: PathBuf::from("sngd-out"),
            timing: false,
        };
        match problem {
            ProblemKind::Rosenbrock | ProblemKind::DixonPrice => base,
            ProblemKind::MixtureVi => RunManifest {
                p: 20,
                k: 5,
                structure: StructureFlag::TriUp,
                ngd: NgdConfig {
                    beta: 0.02,
                    iters: 500,
                    mc_samples: 10,
                    estimator: EstimatorKind::Stein,
                    ..base.ngd.clone()
                },
                baselines: Vec::new(),
                ..base
            },
            ProblemKind::Logistic1d => RunManifest {
                p: 1,
                structure: StructureFlag::Full,
                ngd: NgdConfig {
                    beta: 0.1,
                    iters: 100,
                    mc_samples: 10,
                    estimator: EstimatorKind::Stein,
                    map: MapKind::Exp,
                    ..base.ngd.clone()
                },
                baselines: vec![Baseline::Gd { lr: 0.1 }],
                ..base
            },
            ProblemKind::MetricNearness => RunManifest {
                p: 10,
                n: 500,
                structure: StructureFlag::Full,
                ngd: NgdConfig {
                    beta: 0.5,
                    gamma: 0.0,
                    iters: 2000,
                    estimator: EstimatorKind::Reparam,
                    ..base.ngd.clone()
                },
                baselines: Vec::new(),
                ..base
            },
            ProblemKind::MatrixRegression => RunManifest {
                p: 3,
                n: 40,
                structure: StructureFlag::Kron,
                ngd: NgdConfig { beta: 0.2, iters: 200, mc_samples: 3, ..base.ngd.clone() },
                baselines: Vec::new(),
                ..base
            },
        }
    }

    pub fn from_json(text: &str) -> Result<Self> {
        Ok(serde_json::from_str(text)?)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)? + "\n")
    }

    /// Structure for a vector-valued precision factor of size `p`.
    pub fn structure_spec(&self) -> Result<StructureSpec> {
        let p = self.p;
        let spec = match self.structure {
            StructureFlag::Full => StructureSpec::Full(p),
            StructureFlag::Diag => StructureSpec::Diagonal(p),
            StructureFlag::TriUp => StructureSpec::BlockTriUpper(p, self.k),
            StructureFlag::TriLow => StructureSpec::BlockTriLower(p, self.k),
            StructureFlag::HsUp => StructureSpec::HeisenbergUpper(p, self.k1, self.k2),
            StructureFlag::HsLow => StructureSpec::HeisenbergLower(p, self.k1, self.k2),
            StructureFlag::Kron => {
                if self.problem != ProblemKind::MatrixRegression {
                    return Err(Error::Usage("the kron structure is only available for matrix-regression".into()));
                }
                StructureSpec::Kronecker(Box::new(StructureSpec::Full(p)), Box::new(StructureSpec::Full(self.d)))
            }
        };
        spec.validate().map_err(|e| Error::Usage(format!("invalid structure: {e}")))?;
        Ok(spec)
    }

    /// Rejects combinations the runner cannot execute. Every failure is a usage error.
    pub fn validate(&self) -> Result<()> {
        self.ngd.validate()?;
        if self.p == 0 {
            return Err(Error::Usage("--p must be positive".into()));
        }
        self.structure_spec()?;
        let matrix_problem = matches!(self.problem, ProblemKind::MetricNearness | ProblemKind::MatrixRegression);
        if matrix_problem && !self.baselines.is_empty() {
            return Err(Error::Usage("first-order baselines need a vector-valued problem".into()));
        }
        let labels: BTreeSet<_> = self.baselines.iter().map(|b| b.label()).collect();
        if labels.len() != self.baselines.len() {
            return Err(Error::Usage("each baseline kind may appear once".into()));
        }
        match self.problem {
            ProblemKind::Logistic1d if self.p != 1 => {
                return Err(Error::Usage("logistic-1d is one-dimensional; use --p 1".into()));
            }
            ProblemKind::MetricNearness => {
                if self.structure != StructureFlag::Full {
                    return Err(Error::Usage("metric-nearness needs --structure full".into()));
                }
                if !matches!(self.ngd.estimator, EstimatorKind::Reparam | EstimatorKind::Mean) {
                    return Err(Error::Usage("metric-nearness supports --estimator reparam or mean".into()));
                }
            }
            ProblemKind::MixtureVi if self.components == 0 || self.targets == 0 => {
                return Err(Error::Usage("--K and --C must be positive".into()));
            }
            ProblemKind::MatrixRegression if self.d == 0 => {
                return Err(Error::Usage("--d must be positive".into()));
            }
            _ => {}
        }
        Ok(())
    }
}

/// Outcome of a finished run.
#[derive(Clone, Debug, PartialEq)]
pub struct RunSummary {
    pub files: Vec<PathBuf>,
    pub final_losses: Vec<(String, f64)>,
}

fn setup<T>(r: Result<T>) -> Result<T> {
    r.map_err(|e| match e {
        Error::Contract(m) | Error::Domain(m) => Error::Usage(m),
        other => other,
    })
}

fn ngd_traces(m: &RunManifest) -> Result<Vec<Trace>> {
    let cfg = &m.ngd;
    let mut traces = Vec::new();
    match m.problem {
        ProblemKind::Rosenbrock | ProblemKind::DixonPrice => {
            let obj: Box<dyn Objective> = if m.problem == ProblemKind::Rosenbrock {
                Box::new(setup(rosenbrock(m.p))?)
            } else {
                Box::new(setup(dixon_price(m.p))?)
            };
            traces.extend(vector_runs(obj.as_ref(), m, DVector::from_element(m.p, m.start))?);
        }
        ProblemKind::Logistic1d => {
            let obj = setup(logistic_1d(m.n, cfg.seed))?;
            traces.extend(vector_runs(&obj, m, DVector::zeros(1))?);
        }
        ProblemKind::MixtureVi => {
            let target = setup(student_t_mixture(m.p, m.targets, 2.0, m.spread, cfg.seed))?;
            let spec = m.structure_spec()?;
            let mut rng = seeded_rng(cfg.seed.wrapping_add(1));
            let comps = (0..m.components)
                .map(|_| {
                    let mean = DVector::from_fn(m.p, |_, _| rng.random_range(-m.spread..m.spread));
                    GaussianSqrtPrec::new(mean, GroupElement::identity(&spec)?)
                })
                .collect::<Result<Vec<_>>>();
            let init = setup(comps.and_then(MixtureGaussSqrtPrec::new))?;
            traces.push(run_mixture(&target, init, cfg)?.1);
            for &b in &m.baselines {
                let start = DVector::from_element(m.p, 0.0);
                traces.push(run_baseline(&target, start, b, cfg.iters)?.1);
            }
        }
        ProblemKind::MetricNearness => {
            let obj = setup(metric_nearness(m.p, m.n, m.n / 2 + 1, cfg.seed))?;
            let init = setup(WishartSqrtPrec::with_mean(&DMatrix::identity(m.p, m.p), (m.p + 10) as f64))?;
            traces.push(run_wishart(&obj, init, cfg)?.1);
        }
        ProblemKind::MatrixRegression => {
            let obj = setup(matrix_regression(m.d, m.p, m.n, 0.1, cfg.seed))?;
            let col_spec = match m.structure_spec()? {
                StructureSpec::Kronecker(col, _) => *col,
                other => other,
            };
            let init = setup(
                GroupElement::identity(&col_spec)
                    .and_then(|a| Ok((a, GroupElement::identity(&StructureSpec::Full(m.d))?)))
                    .and_then(|(a, b)| MatrixGaussianKron::new(DMatrix::zeros(m.d, m.p), a, b)),
            )?;
            traces.push(run_matgauss(&obj, init, cfg, m.prior_precision)?.1);
        }
    }
    Ok(traces)
}

fn vector_runs(obj: &dyn Objective, m: &RunManifest, start: DVector<f64>) -> Result<Vec<Trace>> {
    let spec = m.structure_spec()?;
    let init = setup(GroupElement::identity(&spec).and_then(|b| GaussianSqrtPrec::new(start.clone(), b)))?;
    let mut traces = vec![run_gauss_prec(obj, init, &m.ngd)?.1];
    for &b in &m.baselines {
        traces.push(run_baseline(obj, start.clone(), b, m.ngd.iters)?.1);
    }
    Ok(traces)
}

/// Executes a manifest: writes `manifest.json` plus one CSV per optimizer into `out`.
pub fn cmd_run(manifest: &RunManifest) -> Result<RunSummary> {
    manifest.validate()?;
    let mut traces = ngd_traces(manifest)?;
    std::fs::create_dir_all(&manifest.out)?;
    let mut files = Vec::new();
    let path = manifest.out.join("manifest.json");
    std::fs::write(&path, manifest.to_json()?)?;
    files.push(path);
    let mut final_losses = Vec::new();
    for (i, trace) in traces.iter_mut().enumerate() {
        if !manifest.timing {
            trace.rows.iter_mut().for_each(|r| r.wall_ms = 0.0);
        }
        // the natural-gradient trace is always first
        let name = if i == 0 { "ngd".to_string() } else { trace.label.clone() };
        let path = manifest.out.join(format!("{name}.csv"));
        trace.write_csv(&path)?;
        files.push(path);
        final_losses.push((name, trace.final_loss().unwrap_or(f64::NAN)));
    }
    Ok(RunSummary { files, final_losses })
}

/// One row of the `verify` table.
#[derive(Clone, Debug, PartialEq)]
pub struct CheckRow {
    pub name: &'static str,
    pub pass: bool,
    pub detail: String,
}

/// Deliberate defects for exercising `verify` itself.
#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum Fault {
    /// Double the Fisher mask used by the structured step.
    CMask,
}

fn randn_vec<R: Rng>(rng: &mut R, n: usize) -> DVector<f64> {
    DVector::from_fn(n, |_, _| rng.sample(StandardNormal))
}

fn rand_sym<R: Rng>(rng: &mut R, n: usize) -> DMatrix<f64> {
    let a = DMatrix::from_fn(n, n, |_, _| rng.sample::<f64, _>(StandardNormal));
    (&a + a.transpose()) * 0.5
}

fn log_log_slope(xs: &[f64], ys: &[f64]) -> f64 {
    let lx: Vec<f64> = xs.iter().map(|x| x.ln()).collect();
    let ly: Vec<f64> = ys.iter().map(|y| y.ln()).collect();
    let n = lx.len() as f64;
    let (mx, my) = (lx.iter().sum::<f64>() / n, ly.iter().sum::<f64>() / n);
    let cov: f64 = lx.iter().zip(&ly).map(|(x, y)| (x - mx) * (y - my)).sum();
    let var: f64 = lx.iter().map(|x| (x - mx).powi(2)).sum();
    cov / var
}

/// Unit-basis Fisher diagonal of the precision form: 1 per asymmetric entry,
/// 2 per diagonal entry, 4 per symmetric off-diagonal pair.
fn unit_fisher_diagonal(spec: &StructureSpec) -> Result<Vec<f64>> {
    Ok(local_basis(spec, SymBasis::Unit)?
        .iter()
        .map(|b| {
            let d = b.dense();
            match (d == d.transpose(), d.iter().filter(|v| **v != 0.0).count()) {
                (true, 1) => 2.0,
                (true, _) => 4.0,
                (false, _) => 1.0,
            }
        })
        .collect())
}

fn check_fim_precision() -> Result<(bool, String)> {
    let mut rng = seeded_rng(21);
    let mut worst: f64 = 0.0;
    for spec in [StructureSpec::Full(3), StructureSpec::BlockTriUpper(4, 2), StructureSpec::HeisenbergLower(5, 1, 2)] {
        let p = spec.dim();
        let q = GaussianSqrtPrec::new(randn_vec(&mut rng, p), GroupElement::random(&spec, &mut rng, 0.3)?)?;
        let f = fim_via_kl(&FamilyState::GaussPrec(q), SymBasis::Unit, 1e-3)?;
        let mut diag = vec![1.0; p];
        diag.extend(unit_fisher_diagonal(&spec)?);
        worst = worst.max((f.matrix - DMatrix::from_diagonal(&DVector::from_vec(diag))).amax());
    }
    Ok((worst < 1e-4, format!("max deviation {worst:.1e}")))
}

fn check_fim_covariance() -> Result<(bool, String)> {
    let mut rng = seeded_rng(22);
    let spec = StructureSpec::Full(3);
    let q = GaussianSqrtCov::new(randn_vec(&mut rng, 3), GroupElement::random(&spec, &mut rng, 0.3)?)?;
    let f = fim_via_kl(&FamilyState::GaussCov(q), SymBasis::Orthonormal, 1e-3)?;
    let mut diag = vec![1.0; 3];
    diag.extend(vec![0.5; spec.local_dim()]);
    let worst = (f.matrix - DMatrix::from_diagonal(&DVector::from_vec(diag))).amax();
    Ok((worst < 1e-4, format!("max deviation {worst:.1e}")))
}

fn check_fim_wishart() -> Result<(bool, String)> {
    let mut rng = seeded_rng(23);
    let q = WishartSqrtPrec::new(0.7, GroupElement::random(&StructureSpec::Full(3), &mut rng, 0.3)?)?;
    let n = q.dof();
    let f = fim_via_kl(&FamilyState::Wishart(q), SymBasis::Orthonormal, 1e-3)?;
    let local = f.block("local").ok_or_else(|| Error::contract("missing local block"))?;
    let l = local.nrows();
    let worst = (local - DMatrix::identity(l, l) * (2.0 * n)).amax();
    Ok((worst < 1e-4 * n, format!("max deviation {worst:.1e}")))
}

fn check_singular() -> Result<(bool, String)> {
    let (f, det) = singular_fim_demo()?;
    let dup = (f.matrix.row(0) - f.matrix.row(3)).amax();
    Ok((det.abs() < 1e-10 && dup < 1e-12, format!("|det| {:.1e}", det.abs())))
}

fn check_dense_natgrad(fault: Option<Fault>) -> Result<(bool, String)> {
    let p = 6;
    let beta = 0.1;
    let mut rng = seeded_rng(24);
    let mut worst: f64 = 0.0;
    for spec in [
        StructureSpec::Full(p),
        StructureSpec::Diagonal(p),
        StructureSpec::BlockTriUpper(p, 2),
        StructureSpec::BlockTriLower(p, 2),
        StructureSpec::HeisenbergUpper(p, 2, 1),
        StructureSpec::HeisenbergLower(p, 1, 2),
    ] {
        let q = GaussianSqrtPrec::new(randn_vec(&mut rng, p), GroupElement::random(&spec, &mut rng, 0.3)?)?;
        let g_sigma = rand_sym(&mut rng, p);
        let gb = GradBundle { mean_grad: randn_vec(&mut rng, p), sigma: SigmaGrad::Dense(g_sigma.clone()), loss: 0.0 };
        let mut mask = c_mask(&spec)?;
        if fault == Some(Fault::CMask) {
            mask = mask.scale(2.0);
        }
        let fast = step_gauss_prec_masked(&q, &gb, beta, MapKind::H, &mask)?;
        let (mean, factor) = dense_step_gauss_prec(&q, &gb.mean_grad, &g_sigma, beta)?;
        worst = worst.max((&fast.mean - mean).amax()).max((fast.factor.dense() - factor).amax());
    }
    Ok((worst < 1e-8, format!("6 structures, max deviation {worst:.1e}")))
}

fn check_full_reduction() -> Result<(bool, String)> {
    let p = 6;
    let mut rng = seeded_rng(25);
    let full = GroupElement::random(&StructureSpec::Full(p), &mut rng, 0.3)?;
    let tri = GroupElement::from_dense(&StructureSpec::BlockTriUpper(p, p), &full.dense())?;
    let mean = randn_vec(&mut rng, p);
    let gb = GradBundle { mean_grad: randn_vec(&mut rng, p), sigma: SigmaGrad::Dense(rand_sym(&mut rng, p)), loss: 0.0 };
    let a = step_gauss_prec(&GaussianSqrtPrec::new(mean.clone(), full)?, &gb, 0.1, MapKind::H)?;
    let b = step_gauss_prec(&GaussianSqrtPrec::new(mean, tri)?, &gb, 0.1, MapKind::H)?;
    let dev = (a.factor.dense() - b.factor.dense()).amax().max((a.mean - b.mean).amax());
    Ok((dev < 1e-12, format!("tri-up(p, p) vs full, deviation {dev:.1e}")))
}

fn check_order(map: MapKind) -> Result<(bool, String)> {
    let p = 5;
    let mut rng = seeded_rng(26);
    let q = GaussianSqrtPrec::new(DVector::zeros(p), GroupElement::random(&StructureSpec::Full(p), &mut rng, 0.3)?)?;
    let g_sigma = rand_sym(&mut rng, p);
    let gb = GradBundle { mean_grad: DVector::zeros(p), sigma: SigmaGrad::Dense(g_sigma.clone()), loss: 0.0 };
    let s = q.precision();
    let s_inv = s.clone().try_inverse().ok_or_else(|| Error::singular("precision"))?;
    let g = g_sigma * 2.0;
    let betas = [0.02, 0.01, 0.005];
    let mut errs = Vec::new();
    for &beta in &betas {
        let next = step_gauss_prec(&q, &gb, beta, map)?.precision();
        errs.push((next - (&s + &g * beta + &g * &s_inv * &g * (beta * beta / 2.0))).norm());
    }
    let slope = log_log_slope(&betas, &errs);
    Ok((slope >= 2.9, format!("slope {slope:.2}")))
}

fn check_wishart_rgd() -> Result<(bool, String)> {
    let p = 5;
    let obj = metric_nearness(p, 200, 50, 5)?;
    let init = WishartSqrtPrec::with_mean(&DMatrix::identity(p, p), (p + 5) as f64)?;
    let betas = [0.2, 0.1, 0.05];
    let mut errs = Vec::new();
    for &beta1 in &betas {
        let mut q = init.clone();
        let mut u = q.factor.dense() * q.factor.dense().transpose();
        let mut worst: f64 = 0.0;
        for _ in 0..20 {
            let z = u.clone().try_inverse().ok_or_else(|| Error::singular("U"))?;
            let g = obj.grad(&z);
            u = &u + &g * beta1 + &g * &z * &g * (beta1 * beta1 / 2.0);
            let beta = 0.5 * beta1 * q.dof();
            q = step_wishart(&q, &mean_wishart(&q, &obj)?, beta)?;
            worst = worst.max((q.factor.dense() * q.factor.dense().transpose() - &u).norm());
        }
        errs.push(worst);
    }
    let slope = log_log_slope(&betas, &errs);
    Ok((slope >= 2.9, format!("slope {slope:.2}")))
}

fn check_derivatives() -> Result<(bool, String)> {
    let mut rng = seeded_rng(27);
    let p = 6;
    let objs: Vec<Box<dyn Objective>> = vec![
        Box::new(rosenbrock(p)?),
        Box::new(dixon_price(p)?),
        Box::new(student_t_mixture(p, 3, 2.0, 2.0, 3)?),
    ];
    let mut worst: f64 = 0.0;
    for obj in &objs {
        let w = randn_vec(&mut rng, p) * 0.5;
        let v = randn_vec(&mut rng, p);
        let r = finite_diff_check(obj.as_ref(), &w, &v)?;
        worst = worst.max(r.grad_rel_err).max(r.hvp_rel_err.unwrap_or(0.0));
    }
    Ok((worst < 1e-5, format!("max relative error {worst:.1e}")))
}

/// Runs every self-check. Output is deterministic.
pub fn verify_rows(fault: Option<Fault>) -> Vec<CheckRow> {
    let checks: Vec<(&'static str, Box<dyn Fn() -> Result<(bool, String)>>)> = vec![
        ("fisher precision form", Box::new(check_fim_precision)),
        ("fisher covariance form", Box::new(check_fim_covariance)),
        ("fisher wishart", Box::new(check_fim_wishart)),
        ("singular fisher example", Box::new(check_singular)),
        ("dense natgrad equivalence", Box::new(move || check_dense_natgrad(fault))),
        ("tri-up(p,p) equals full", Box::new(check_full_reduction)),
        ("third order, h map", Box::new(|| check_order(MapKind::H))),
        ("third order, exp map", Box::new(|| check_order(MapKind::Exp))),
        ("wishart matches rgd", Box::new(check_wishart_rgd)),
        ("problem derivatives", Box::new(check_derivatives)),
    ];
    checks
        .into_iter()
        .map(|(name, f)| match f() {
            Ok((pass, detail)) => CheckRow { name, pass, detail },
            Err(e) => CheckRow { name, pass: false, detail: e.to_string() },
        })
        .collect()
}

#[derive(Parser, Debug)]
#[command(name = "sngd", version, about = "Structured natural-gradient experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Run one problem and write CSV traces.
    Run(RunArgs),
    /// Run the numerical self-checks and print a pass/fail table.
    Verify(VerifyArgs),
}

#[derive(Args, Debug, Default)]
struct RunArgs {
    /// Problem to run; may be omitted when --config names one.
    #[arg(value_enum)]
    problem: Option<ProblemKind>,
    #[arg(long)]
    p: Option<usize>,
    #[arg(long)]
    d: Option<usize>,
    #[arg(long)]
    k: Option<usize>,
    #[arg(long)]
    k1: Option<usize>,
    #[arg(long)]
    k2: Option<usize>,
    /// Components of the mixture approximation.
    #[arg(long = "K")]
    components: Option<usize>,
    /// Components of the mixture target.
    #[arg(long = "C")]
    targets: Option<usize>,
    #[arg(long, value_enum)]
    structure: Option<StructureFlag>,
    #[arg(long)]
    beta: Option<f64>,
    #[arg(long)]
    gamma: Option<f64>,
    #[arg(long)]
    iters: Option<usize>,
    #[arg(long)]
    samples: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long, value_parser = PossibleValuesParser::new(["reinforce", "reparam", "stein", "mean"]))]
    estimator: Option<String>,
    #[arg(long, value_parser = PossibleValuesParser::new(["h", "exp"]))]
    map: Option<String>,
    /// Replaces the baseline list with a single optimizer.
    #[arg(long, value_parser = PossibleValuesParser::new(["adam", "gd", "none"]))]
    baseline: Option<String>,
    /// Learning rate of the baseline.
    #[arg(long)]
    lr: Option<f64>,
    /// Output directory.
    #[arg(long)]
    out: Option<PathBuf>,
    /// JSON manifest; flags override its fields.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Record measured wall time in the CSV (breaks byte-identical reruns).
    #[arg(long)]
    timing: bool,
}

#[derive(Args, Debug)]
struct VerifyArgs {
    #[arg(long, value_enum, hide = true)]
    inject_fault: Option<Fault>,
}

fn read_manifest(path: &Path) -> Result<RunManifest> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::Usage(format!("cannot read {}: {e}", path.display())))?;
    RunManifest::from_json(&text).map_err(|e| Error::Usage(format!("bad manifest {}: {e}", path.display())))
}

fn resolve(args: RunArgs) -> Result<RunManifest> {
    let mut m = match (&args.config, args.problem) {
        (Some(path), problem) => {
            let mut m = read_manifest(path)?;
            if let Some(pk) = problem {
                m.problem = pk;
            }
            m
        }
        (None, Some(pk)) => RunManifest::defaults(pk),
        (None, None) => return Err(Error::Usage("a problem or --config is required".into())),
    };
    macro_rules! set {
        ($($field:ident).+ <- $value:expr) => {
            if let Some(v) = $value {
                m.$($field).+ = v;
            }
        };
    }
    set!(p <- args.p);
    set!(d <- args.d);
    set!(k <- args.k);
    set!(k1 <- args.k1);
    set!(k2 <- args.k2);
    set!(components <- args.components);
    set!(targets <- args.targets);
    set!(structure <- args.structure);
    set!(ngd.beta <- args.beta);
    set!(ngd.gamma <- args.gamma);
    set!(ngd.iters <- args.iters);
    set!(ngd.mc_samples <- args.samples);
    set!(ngd.seed <- args.seed);
    set!(out <- args.out);
    if let Some(e) = &args.estimator {
        m.ngd.estimator = e.parse()?;
    }
    if let Some(map) = &args.map {
        m.ngd.map = map.parse()?;
    }
    match args.baseline.as_deref() {
        Some("adam") => m.baselines = vec![Baseline::Adam { lr: args.lr.unwrap_or(0.1) }],
        Some("gd") => m.baselines = vec![Baseline::Gd { lr: args.lr.unwrap_or(0.01) }],
        Some(_) => m.baselines.clear(),
        None => {
            if let Some(lr) = args.lr {
                for b in &mut m.baselines {
                    *b = match b {
                        Baseline::Adam { .. } => Baseline::Adam { lr },
                        Baseline::Gd { .. } => Baseline::Gd { lr },
                    };
                }
            }
        }
    }
    m.timing |= args.timing;
    Ok(m)
}

fn report(e: &Error) -> i32 {
    match e {
        Error::Step { iter, source } => {
            eprintln!("error: numerical failure at iteration {iter}: {source}");
            1
        }
        e if e.is_usage() => {
            eprintln!("error: {e}");
            2
        }
        e => {
            eprintln!("error: {e}");
            1
        }
    }
}

/// Entry point shared by the binary and the tests. Returns the process exit code:
/// 0 success, 1 numerical or verification failure, 2 usage error.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    match cli.command {
        Command::Run(args) => match resolve(args).and_then(|m| cmd_run(&m)) {
            Ok(summary) => {
                for (name, loss) in &summary.final_losses {
                    println!("{name}: final loss {loss:.6e}");
                }
                for f in &summary.files {
                    println!("wrote {}", f.display());
                }
                0
            }
            Err(e) => report(&e),
        },
        Command::Verify(args) => {
            let rows = verify_rows(args.inject_fault);
            for r in &rows {
                println!("{:<28} {}  {}", r.name, if r.pass { "PASS" } else { "FAIL" }, r.detail);
            }
            let failed = rows.iter().filter(|r| !r.pass).count();
            println!("{} of {} checks passed", rows.len() - failed, rows.len());
            i32::from(failed > 0)
        }
    }
}
