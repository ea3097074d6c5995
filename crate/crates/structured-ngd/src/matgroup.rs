//! Structured invertible-matrix groups and their local parameter spaces.
//!
//! Every non-Kronecker structure is stored in one "upper layout": a `k1 x k1` dense
//! head block `a`, a `k1 x (p - k1)` coupling block `b`, a diagonal `d1` of length
//! `d0 = p - k1 - k2`, a `d0 x k2` block `d2` and a dense `k2 x k2` tail block `d4`:
//!
//! ```text
//! [ a  b1        b2 ]
//! [ 0  diag(d1)  d2 ]
//! [ 0  0         d4 ]
//! ```
//!
//! Full, diagonal, block-triangular and Heisenberg groups are all special cases of
//! this layout. Lower-triangular variants store the transpose of their matrix, so all
//! kernels only ever deal with the upper shape. Every kernel costs `O(k^2 p)` for fixed
//! `k = k1 + k2`.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Smallest admissible magnitude of a diagonal entry.
pub const MIN_DIAG: f64 = 1e-12;
/// Largest admissible condition number of a dense block.
pub const MAX_COND: f64 = 1e12;
/// Absolute asymmetry allowed by [`kappa_project`], scaled by `max(1, max|x|)`.
pub const SYM_TOL: f64 = 1e-8;

/// Which sparsity pattern a group element (and its local direction) follows.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub enum StructureSpec {
    Full(usize),
    Diagonal(usize),
    /// Dense `k x k` head with a dense coupling row-block and a diagonal tail.
    BlockTriUpper(usize, usize),
    BlockTriLower(usize, usize),
    /// `(p, k1, k2)`: dense head of size `k1`, dense tail of size `k2`, diagonal middle.
    HeisenbergUpper(usize, usize, usize),
    HeisenbergLower(usize, usize, usize),
    /// Factor-wise product acting on `vec(W)`; the dense form is `left (x) right`.
    Kronecker(Box<StructureSpec>, Box<StructureSpec>),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub(crate) enum Side {
    Upper,
    Lower,
}

/// Block sizes of the upper layout.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub(crate) struct Layout {
    pub p: usize,
    pub k1: usize,
    pub k2: usize,
    pub side: Side,
}

impl Layout {
    pub fn d0(&self) -> usize {
        self.p - self.k1 - self.k2
    }

    fn exp_capable(&self) -> bool {
        let d0 = self.d0();
        (d0 == 0 && self.k2 == 0) || (self.k1 == 0 && self.k2 == 0) || (self.k1 == 0 && d0 == 0)
    }
}

impl StructureSpec {
    /// Side length of the dense matrix.
    pub fn dim(&self) -> usize {
        match self {
            StructureSpec::Full(p)
            | StructureSpec::Diagonal(p)
            | StructureSpec::BlockTriUpper(p, _)
            | StructureSpec::BlockTriLower(p, _)
            | StructureSpec::HeisenbergUpper(p, _, _)
            | StructureSpec::HeisenbergLower(p, _, _) => *p,
            StructureSpec::Kronecker(l, r) => l.dim() * r.dim(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        match self {
            StructureSpec::Kronecker(l, r) => {
                l.validate()?;
                r.validate()
            }
            _ => self.layout().map(|_| ()),
        }
    }

    pub fn is_kronecker(&self) -> bool {
        matches!(self, StructureSpec::Kronecker(..))
    }

    pub(crate) fn layout(&self) -> Result<Layout> {
        let (p, k1, k2, side) = match *self {
            StructureSpec::Full(p) => (p, p, 0, Side::Upper),
            StructureSpec::Diagonal(p) => (p, 0, 0, Side::Upper),
            StructureSpec::BlockTriUpper(p, k) => (p, k, 0, Side::Upper),
            StructureSpec::BlockTriLower(p, k) => (p, k, 0, Side::Lower),
            StructureSpec::HeisenbergUpper(p, k1, k2) => (p, k1, k2, Side::Upper),
            StructureSpec::HeisenbergLower(p, k1, k2) => (p, k1, k2, Side::Lower),
            StructureSpec::Kronecker(..) => {
                return Err(Error::contract("Kronecker structures have no single block layout"))
            }
        };
        if p == 0 {
            return Err(Error::contract("dimension must be positive"));
        }
        if k1 + k2 > p {
            return Err(Error::contract(format!("block sizes {k1}+{k2} exceed dimension {p}")));
        }
        Ok(Layout { p, k1, k2, side })
    }

    /// Number of free coordinates in the local space.
    pub fn local_dim(&self) -> usize {
        match self {
            StructureSpec::Kronecker(l, r) => l.local_dim() + r.local_dim(),
            _ => {
                let l = self.layout().expect("valid structure");
                let (k1, k2, d0) = (l.k1, l.k2, l.d0());
                k1 * (k1 + 1) / 2 + k1 * (l.p - k1) + d0 + d0 * k2 + k2 * (k2 + 1) / 2
            }
        }
    }

    /// Short human-readable name, e.g. `hs-low(8,2,3)`.
    pub fn label(&self) -> String {
        match self {
            StructureSpec::Full(p) => format!("full({p})"),
            StructureSpec::Diagonal(p) => format!("diag({p})"),
            StructureSpec::BlockTriUpper(p, k) => format!("tri-up({p},{k})"),
            StructureSpec::BlockTriLower(p, k) => format!("tri-low({p},{k})"),
            StructureSpec::HeisenbergUpper(p, a, b) => format!("hs-up({p},{a},{b})"),
            StructureSpec::HeisenbergLower(p, a, b) => format!("hs-low({p},{a},{b})"),
            StructureSpec::Kronecker(l, r) => format!("kron({},{})", l.label(), r.label()),
        }
    }
}

/// Block storage shared by group elements and local directions.
#[derive(Clone, Debug, PartialEq)]
pub(crate) struct Blocks {
    pub a: DMatrix<f64>,
    pub b: DMatrix<f64>,
    pub d1: DVector<f64>,
    pub d2: DMatrix<f64>,
    pub d4: DMatrix<f64>,
}

fn sym(m: &DMatrix<f64>) -> DMatrix<f64> {
    (m + m.transpose()) * 0.5
}

fn inverse_checked(m: &DMatrix<f64>, what: &str) -> Result<DMatrix<f64>> {
    if m.nrows() == 0 {
        return Ok(m.clone());
    }
    m.clone()
        .try_inverse()
        .ok_or_else(|| Error::singular(format!("{what} block is not invertible")))
}

fn solve_dense(m: &DMatrix<f64>, rhs: &DVector<f64>) -> DVector<f64> {
    if m.nrows() == 0 {
        return rhs.clone();
    }
    m.clone().lu().solve(rhs).unwrap_or_else(|| DVector::from_element(rhs.len(), f64::NAN))
}

fn solve_dense_mat(m: &DMatrix<f64>, rhs: &DMatrix<f64>) -> DMatrix<f64> {
    if m.nrows() == 0 {
        return rhs.clone();
    }
    m.clone().lu().solve(rhs).unwrap_or_else(|| DMatrix::from_element(rhs.nrows(), rhs.ncols(), f64::NAN))
}

pub(crate) fn condition_number(m: &DMatrix<f64>) -> f64 {
    if m.nrows() == 0 {
        return 1.0;
    }
    let sv = m.clone().svd(false, false).singular_values;
    let max = sv.max();
    let min = sv.min();
    if min <= 0.0 || !min.is_finite() {
        f64::INFINITY
    } else {
        max / min
    }
}

/// Matrix exponential by scaling and squaring with a Taylor core.
pub fn expm(m: &DMatrix<f64>) -> DMatrix<f64> {
    let n = m.nrows();
    if n == 0 {
        return m.clone();
    }
    let norm1 = (0..n).map(|j| m.column(j).abs().sum()).fold(0.0, f64::max);
    let squarings = if norm1 > 0.5 { (norm1 / 0.5).log2().ceil() as i32 } else { 0 };
    let scaled = m / 2f64.powi(squarings);
    let mut result = DMatrix::<f64>::identity(n, n);
    let mut term = DMatrix::<f64>::identity(n, n);
    for k in 1..=30 {
        term = &term * &scaled / k as f64;
        result += &term;
        if term.amax() < 1e-18 * result.amax() {
            break;
        }
    }
    for _ in 0..squarings {
        result = &result * &result;
    }
    result
}

impl Blocks {
    fn zeros(l: &Layout) -> Self {
        let (k1, k2, d0) = (l.k1, l.k2, l.d0());
        Blocks {
            a: DMatrix::zeros(k1, k1),
            b: DMatrix::zeros(k1, l.p - k1),
            d1: DVector::zeros(d0),
            d2: DMatrix::zeros(d0, k2),
            d4: DMatrix::zeros(k2, k2),
        }
    }

    fn identity(l: &Layout) -> Self {
        let mut z = Self::zeros(l);
        z.a.fill_with_identity();
        z.d1.fill(1.0);
        z.d4.fill_with_identity();
        z
    }

    fn d0(&self) -> usize {
        self.d1.len()
    }

    fn split(&self, x: &DVector<f64>) -> (DVector<f64>, DVector<f64>, DVector<f64>) {
        let (k1, d0) = (self.a.nrows(), self.d0());
        let k2 = self.d4.nrows();
        (
            x.rows(0, k1).into_owned(),
            x.rows(k1, d0).into_owned(),
            x.rows(k1 + d0, k2).into_owned(),
        )
    }

    fn join(xa: &DVector<f64>, x1: &DVector<f64>, x4: &DVector<f64>) -> DVector<f64> {
        let mut out = DVector::zeros(xa.len() + x1.len() + x4.len());
        out.rows_mut(0, xa.len()).copy_from(xa);
        out.rows_mut(xa.len(), x1.len()).copy_from(x1);
        out.rows_mut(xa.len() + x1.len(), x4.len()).copy_from(x4);
        out
    }

    fn b1(&self) -> DMatrix<f64> {
        self.b.columns(0, self.d0()).into_owned()
    }

    fn b2(&self) -> DMatrix<f64> {
        self.b.columns(self.d0(), self.d4.nrows()).into_owned()
    }

    fn dense(&self) -> DMatrix<f64> {
        let (k1, d0, k2) = (self.a.nrows(), self.d0(), self.d4.nrows());
        let p = k1 + d0 + k2;
        let mut m = DMatrix::zeros(p, p);
        m.view_mut((0, 0), (k1, k1)).copy_from(&self.a);
        m.view_mut((0, k1), (k1, p - k1)).copy_from(&self.b);
        for i in 0..d0 {
            m[(k1 + i, k1 + i)] = self.d1[i];
        }
        m.view_mut((k1, k1 + d0), (d0, k2)).copy_from(&self.d2);
        m.view_mut((k1 + d0, k1 + d0), (k2, k2)).copy_from(&self.d4);
        m
    }

    /// Reads the block entries of `m`; `off_pattern` receives the largest entry outside it.
    fn from_dense(l: &Layout, m: &DMatrix<f64>) -> (Self, f64) {
        let (k1, d0, k2) = (l.k1, l.d0(), l.k2);
        let mut blocks = Self::zeros(l);
        blocks.a.copy_from(&m.view((0, 0), (k1, k1)));
        blocks.b.copy_from(&m.view((0, k1), (k1, l.p - k1)));
        for i in 0..d0 {
            blocks.d1[i] = m[(k1 + i, k1 + i)];
        }
        blocks.d2.copy_from(&m.view((k1, k1 + d0), (d0, k2)));
        blocks.d4.copy_from(&m.view((k1 + d0, k1 + d0), (k2, k2)));
        let off = (m - blocks.dense()).amax();
        (blocks, off)
    }

    fn mul(&self, v: &Blocks) -> Blocks {
        let (u1, v1) = (&self.d1, &v.d1);
        let ub1 = self.b1();
        let mut b = &self.a * &v.b;
        let mut tail = DMatrix::zeros(self.a.nrows(), v.b.ncols());
        // Ub * Vd = [Ub1 diag(v1) | Ub1 v2 + Ub2 v4]
        let mut left = ub1.clone();
        for (j, mut col) in left.column_iter_mut().enumerate() {
            col *= v1[j];
        }
        let right = &ub1 * &v.d2 + self.b2() * &v.d4;
        tail.columns_mut(0, self.d0()).copy_from(&left);
        tail.columns_mut(self.d0(), self.d4.nrows()).copy_from(&right);
        b += tail;
        let mut d2 = &self.d2 * &v.d4;
        for i in 0..self.d0() {
            let mut row = d2.row_mut(i);
            row += v.d2.row(i) * u1[i];
        }
        Blocks { a: &self.a * &v.a, b, d1: u1.component_mul(v1), d2, d4: &self.d4 * &v.d4 }
    }

    fn matvec(&self, x: &DVector<f64>) -> DVector<f64> {
        let (k1, d0, k2) = (self.a.nrows(), self.d0(), self.d4.nrows());
        let (xa, x1, x4) = (x.rows(0, k1), x.rows(k1, d0), x.rows(k1 + d0, k2));
        let mut out = DVector::zeros(x.len());
        let mut top = out.rows_mut(0, k1);
        top.gemv(1.0, &self.a, &xa, 0.0);
        top.gemv(1.0, &self.b, &x.rows(k1, d0 + k2), 1.0);
        let mut mid = out.rows_mut(k1, d0);
        mid.zip_zip_apply(&self.d1, &x1, |m, d, v| *m = d * v);
        mid.gemv(1.0, &self.d2, &x4, 1.0);
        out.rows_mut(k1 + d0, k2).gemv(1.0, &self.d4, &x4, 0.0);
        out
    }

    fn matvec_t(&self, x: &DVector<f64>) -> DVector<f64> {
        let (k1, d0, k2) = (self.a.nrows(), self.d0(), self.d4.nrows());
        let (xa, x1, x4) = (x.rows(0, k1), x.rows(k1, d0), x.rows(k1 + d0, k2));
        let mut out = DVector::zeros(x.len());
        out.rows_mut(0, k1).gemv_tr(1.0, &self.a, &xa, 0.0);
        out.rows_mut(k1, d0 + k2).gemv_tr(1.0, &self.b, &xa, 0.0);
        out.rows_mut(k1, d0).zip_zip_apply(&self.d1, &x1, |m, d, v| *m += d * v);
        let mut bottom = out.rows_mut(k1 + d0, k2);
        bottom.gemv_tr(1.0, &self.d2, &x1, 1.0);
        bottom.gemv_tr(1.0, &self.d4, &x4, 1.0);
        out
    }

    /// `U^{-1} x` by back substitution.
    fn solve(&self, x: &DVector<f64>) -> DVector<f64> {
        let (xa, x1, x4) = self.split(x);
        let y4 = solve_dense(&self.d4, &x4);
        let y1 = (x1 - &self.d2 * &y4).component_div(&self.d1);
        let tail = Self::join(&DVector::zeros(0), &y1, &y4);
        let ya = solve_dense(&self.a, &(xa - &self.b * tail));
        Self::join(&ya, &y1, &y4)
    }

    /// `U^{-T} x` by forward substitution.
    fn solve_t(&self, x: &DVector<f64>) -> DVector<f64> {
        let (xa, x1, x4) = self.split(x);
        let ya = solve_dense(&self.a.transpose(), &xa);
        let y1 = (x1 - self.b1().tr_mul(&ya)).component_div(&self.d1);
        let rhs = x4 - self.b2().tr_mul(&ya) - self.d2.tr_mul(&y1);
        let y4 = solve_dense(&self.d4.transpose(), &rhs);
        Self::join(&ya, &y1, &y4)
    }

    fn inverse(&self) -> Result<Blocks> {
        if self.d1.iter().any(|v| v.abs() <= MIN_DIAG) {
            return Err(Error::singular("diagonal block has a (near) zero entry"));
        }
        let a_inv = inverse_checked(&self.a, "head")?;
        let d4_inv = inverse_checked(&self.d4, "tail")?;
        let d1_inv = self.d1.map(|v| 1.0 / v);
        let mut d2_inv = -(&self.d2 * &d4_inv);
        for i in 0..self.d0() {
            let mut row = d2_inv.row_mut(i);
            row *= d1_inv[i];
        }
        // b' = -a^{-1} b D^{-1} with D^{-1} = [[diag(d1'), d2'], [0, d4']]
        let mut left = self.b1();
        for (j, mut col) in left.column_iter_mut().enumerate() {
            col *= d1_inv[j];
        }
        let right = self.b1() * &d2_inv + self.b2() * &d4_inv;
        let mut bd = DMatrix::zeros(self.b.nrows(), self.b.ncols());
        bd.columns_mut(0, self.d0()).copy_from(&left);
        bd.columns_mut(self.d0(), self.d4.nrows()).copy_from(&right);
        Ok(Blocks { b: -(&a_inv * bd), a: a_inv, d1: d1_inv, d2: d2_inv, d4: d4_inv })
    }

    fn zip(&self, o: &Blocks, f: impl Fn(f64, f64) -> f64 + Copy) -> Blocks {
        Blocks {
            a: self.a.zip_map(&o.a, f),
            b: self.b.zip_map(&o.b, f),
            d1: self.d1.zip_map(&o.d1, f),
            d2: self.d2.zip_map(&o.d2, f),
            d4: self.d4.zip_map(&o.d4, f),
        }
    }

    fn map(&self, f: impl Fn(f64) -> f64 + Copy) -> Blocks {
        Blocks { a: self.a.map(f), b: self.b.map(f), d1: self.d1.map(f), d2: self.d2.map(f), d4: self.d4.map(f) }
    }

    fn sq_norm(&self) -> f64 {
        self.a.norm_squared() + self.b.norm_squared() + self.d1.norm_squared() + self.d2.norm_squared() + self.d4.norm_squared()
    }

    fn amax(&self) -> f64 {
        [self.a.amax(), self.b.amax(), self.d1.amax(), self.d2.amax(), self.d4.amax()]
            .into_iter()
            .fold(0.0, f64::max)
    }

    fn check_invertible(&self) -> Result<()> {
        if let Some(v) = self.d1.iter().find(|v| !(v.abs() > MIN_DIAG)) {
            return Err(Error::singular(format!("diagonal entry {v:e} is too close to zero")));
        }
        for (m, name) in [(&self.a, "head"), (&self.d4, "tail")] {
            if m.iter().any(|v| !v.is_finite()) {
                return Err(Error::singular(format!("{name} block has non-finite entries")));
            }
            let c = condition_number(m);
            if !(c < MAX_COND) {
                return Err(Error::singular(format!("{name} block condition number {c:e}")));
            }
        }
        if self.b.iter().chain(self.d2.iter()).any(|v| !v.is_finite()) {
            return Err(Error::singular("coupling block has non-finite entries"));
        }
        Ok(())
    }

    fn asymmetry(&self) -> f64 {
        (&self.a - self.a.transpose()).amax().max((&self.d4 - self.d4.transpose()).amax())
    }
}

#[derive(Clone, Debug, PartialEq)]
enum Repr {
    Tri { layout: Layout, blocks: Blocks },
    Kron(Box<GroupElement>, Box<GroupElement>),
}

/// An invertible matrix with a known sparsity pattern.
#[derive(Clone, Debug, PartialEq)]
pub struct GroupElement {
    spec: StructureSpec,
    repr: Repr,
}

#[derive(Clone, Debug, PartialEq)]
enum LocalRepr {
    Tri { layout: Layout, blocks: Blocks },
    Kron(Box<LocalDirection>, Box<LocalDirection>),
}

/// A point in the local parameter space: same pattern as the group, with the dense
/// head and tail blocks symmetric.
#[derive(Clone, Debug, PartialEq)]
pub struct LocalDirection {
    spec: StructureSpec,
    repr: LocalRepr,
}

/// Dense-free covariance of a block upper-triangular precision factor:
/// `Sigma = factor * factor^T + diag(diag)`.
#[derive(Clone, Debug, PartialEq)]
pub struct LowRankPlusDiag {
    pub factor: DMatrix<f64>,
    pub diag: DVector<f64>,
}

impl LowRankPlusDiag {
    pub fn dense(&self) -> DMatrix<f64> {
        &self.factor * self.factor.transpose() + DMatrix::from_diagonal(&self.diag)
    }
}

/// Scaling used for symmetric off-diagonal basis elements in [`local_basis`].
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SymBasis {
    /// `E_ij + E_ji`.
    Unit,
    /// `(E_ij + E_ji) / sqrt(2)`, orthonormal under the Frobenius product.
    Orthonormal,
}

impl GroupElement {
    pub fn identity(spec: &StructureSpec) -> Result<Self> {
        match spec {
            StructureSpec::Kronecker(l, r) => Self::kron(Self::identity(l)?, Self::identity(r)?),
            _ => {
                let layout = spec.layout()?;
                Ok(GroupElement { spec: spec.clone(), repr: Repr::Tri { layout, blocks: Blocks::identity(&layout) } })
            }
        }
    }

    pub fn kron(left: GroupElement, right: GroupElement) -> Result<Self> {
        let spec = StructureSpec::Kronecker(Box::new(left.spec.clone()), Box::new(right.spec.clone()));
        Ok(GroupElement { spec, repr: Repr::Kron(Box::new(left), Box::new(right)) })
    }

    /// Builds an element from its dense matrix, rejecting entries outside the pattern.
    pub fn from_dense(spec: &StructureSpec, m: &DMatrix<f64>) -> Result<Self> {
        let layout = spec.layout()?;
        if m.nrows() != layout.p || m.ncols() != layout.p {
            return Err(Error::contract(format!("expected {0}x{0} matrix", layout.p)));
        }
        let stored = if layout.side == Side::Lower { m.transpose() } else { m.clone() };
        let (blocks, off) = Blocks::from_dense(&layout, &stored);
        if off > 1e-12 * m.amax().max(1.0) {
            return Err(Error::contract(format!("matrix has entries outside the {} pattern", spec.label())));
        }
        let g = GroupElement { spec: spec.clone(), repr: Repr::Tri { layout, blocks } };
        g.validate()?;
        Ok(g)
    }

    /// A random well-conditioned element, `scale` controlling the distance from identity.
    pub fn random<R: Rng + ?Sized>(spec: &StructureSpec, rng: &mut R, scale: f64) -> Result<Self> {
        match spec {
            StructureSpec::Kronecker(l, r) => Self::kron(Self::random(l, rng, scale)?, Self::random(r, rng, scale)?),
            _ => {
                let layout = spec.layout()?;
                let mut blocks = Blocks::identity(&layout);
                let mut noise = |n: usize, m: usize, s: f64| DMatrix::from_fn(n, m, |_, _| s * rng.sample::<f64, _>(StandardNormal));
                let sk1 = scale / (layout.k1.max(1) as f64).sqrt();
                let sk2 = scale / (layout.k2.max(1) as f64).sqrt();
                blocks.a += noise(layout.k1, layout.k1, sk1);
                blocks.b = noise(layout.k1, layout.p - layout.k1, scale);
                blocks.d2 = noise(layout.d0(), layout.k2, scale);
                blocks.d4 += noise(layout.k2, layout.k2, sk2);
                let d0 = layout.d0();
                blocks.d1 = noise(d0, 1, scale).column(0).map(f64::exp);
                let g = GroupElement { spec: spec.clone(), repr: Repr::Tri { layout, blocks } };
                g.validate()?;
                Ok(g)
            }
        }
    }

    pub fn structure(&self) -> &StructureSpec {
        &self.spec
    }

    pub fn dim(&self) -> usize {
        self.spec.dim()
    }

    pub(crate) fn tri(&self) -> Result<(&Layout, &Blocks)> {
        match &self.repr {
            Repr::Tri { layout, blocks } => Ok((layout, blocks)),
            Repr::Kron(..) => Err(Error::contract("operation not defined for Kronecker elements")),
        }
    }

    /// Left and right factors of a Kronecker element.
    pub fn factors(&self) -> Option<(&GroupElement, &GroupElement)> {
        match &self.repr {
            Repr::Kron(l, r) => Some((l, r)),
            Repr::Tri { .. } => None,
        }
    }

    pub fn dense(&self) -> DMatrix<f64> {
        match &self.repr {
            Repr::Tri { layout, blocks } => {
                let d = blocks.dense();
                if layout.side == Side::Lower { d.transpose() } else { d }
            }
            Repr::Kron(l, r) => l.dense().kronecker(&r.dense()),
        }
    }

    pub fn validate(&self) -> Result<()> {
        match &self.repr {
            Repr::Tri { blocks, .. } => blocks.check_invertible(),
            Repr::Kron(l, r) => {
                l.validate()?;
                r.validate()
            }
        }
    }

    fn same_structure(&self, other: &StructureSpec) -> Result<()> {
        if &self.spec != other {
            return Err(Error::contract(format!("structure mismatch: {} vs {}", self.spec.label(), other.label())));
        }
        Ok(())
    }

    /// Group product `self * other`.
    pub fn mul(&self, other: &GroupElement) -> Result<GroupElement> {
        self.same_structure(&other.spec)?;
        let repr = match (&self.repr, &other.repr) {
            (Repr::Tri { layout, blocks: x }, Repr::Tri { blocks: y, .. }) => {
                // lower elements store transposes: (XY)^T = Y^T X^T
                let blocks = if layout.side == Side::Lower { y.mul(x) } else { x.mul(y) };
                Repr::Tri { layout: *layout, blocks }
            }
            (Repr::Kron(l1, r1), Repr::Kron(l2, r2)) => Repr::Kron(Box::new(l1.mul(l2)?), Box::new(r1.mul(r2)?)),
            _ => unreachable!("matching specs imply matching representations"),
        };
        Ok(GroupElement { spec: self.spec.clone(), repr })
    }

    pub fn inverse(&self) -> Result<GroupElement> {
        let repr = match &self.repr {
            Repr::Tri { layout, blocks } => Repr::Tri { layout: *layout, blocks: blocks.inverse()? },
            Repr::Kron(l, r) => Repr::Kron(Box::new(l.inverse()?), Box::new(r.inverse()?)),
        };
        Ok(GroupElement { spec: self.spec.clone(), repr })
    }

    fn check_len(&self, v: &DVector<f64>) -> Result<()> {
        if v.len() != self.dim() {
            return Err(Error::contract(format!("vector length {} does not match dimension {}", v.len(), self.dim())));
        }
        Ok(())
    }

    fn kron_apply(
        l: &GroupElement,
        r: &GroupElement,
        v: &DVector<f64>,
        f: impl Fn(&GroupElement, &DVector<f64>) -> Result<DVector<f64>>,
    ) -> Result<DVector<f64>> {
        // (L (x) R) vec(V) = vec(R V L^T), V is dim(R) x dim(L), column-major
        let (pl, pr) = (l.dim(), r.dim());
        let mut v_mat = DMatrix::from_column_slice(pr, pl, v.as_slice());
        for j in 0..pl {
            let col = f(r, &v_mat.column(j).into_owned())?;
            v_mat.set_column(j, &col);
        }
        let mut out = DMatrix::zeros(pr, pl);
        for i in 0..pr {
            let row = f(l, &v_mat.row(i).transpose())?;
            out.set_row(i, &row.transpose());
        }
        Ok(DVector::from_column_slice(out.as_slice()))
    }

    /// `B v`.
    pub fn apply(&self, v: &DVector<f64>) -> Result<DVector<f64>> {
        self.check_len(v)?;
        match &self.repr {
            Repr::Tri { layout, blocks } => Ok(match layout.side {
                Side::Upper => blocks.matvec(v),
                Side::Lower => blocks.matvec_t(v),
            }),
            Repr::Kron(l, r) => Self::kron_apply(l, r, v, |g, x| g.apply(x)),
        }
    }

    /// `B^T v`.
    pub fn apply_transpose(&self, v: &DVector<f64>) -> Result<DVector<f64>> {
        self.check_len(v)?;
        match &self.repr {
            Repr::Tri { layout, blocks } => Ok(match layout.side {
                Side::Upper => blocks.matvec_t(v),
                Side::Lower => blocks.matvec(v),
            }),
            Repr::Kron(l, r) => Self::kron_apply(l, r, v, |g, x| g.apply_transpose(x)),
        }
    }

    /// `B^{-1} v`.
    pub fn solve(&self, v: &DVector<f64>) -> Result<DVector<f64>> {
        self.check_len(v)?;
        match &self.repr {
            Repr::Tri { layout, blocks } => Ok(match layout.side {
                Side::Upper => blocks.solve(v),
                Side::Lower => blocks.solve_t(v),
            }),
            Repr::Kron(l, r) => Self::kron_apply(l, r, v, |g, x| g.solve(x)),
        }
    }

    /// `B^{-T} v`.
    pub fn solve_transpose(&self, v: &DVector<f64>) -> Result<DVector<f64>> {
        self.check_len(v)?;
        match &self.repr {
            Repr::Tri { layout, blocks } => Ok(match layout.side {
                Side::Upper => blocks.solve_t(v),
                Side::Lower => blocks.solve(v),
            }),
            Repr::Kron(l, r) => Self::kron_apply(l, r, v, |g, x| g.solve_transpose(x)),
        }
    }

    /// `log |det B|`.
    pub fn log_abs_det(&self) -> f64 {
        match &self.repr {
            Repr::Tri { blocks, .. } => {
                let dense_part = |m: &DMatrix<f64>| if m.nrows() == 0 { 0.0 } else { m.clone().lu().determinant().abs().ln() };
                dense_part(&blocks.a) + blocks.d1.iter().map(|v| v.abs().ln()).sum::<f64>() + dense_part(&blocks.d4)
            }
            Repr::Kron(l, r) => r.dim() as f64 * l.log_abs_det() + l.dim() as f64 * r.log_abs_det(),
        }
    }

    /// `B^{-1} G B^{-T}` for a dense square `G`.
    pub fn congruence_inv(&self, g: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        let p = self.dim();
        if g.nrows() != p || g.ncols() != p {
            return Err(Error::contract("congruence needs a square matrix of the group dimension"));
        }
        let mut x = DMatrix::zeros(p, p);
        for j in 0..p {
            x.set_column(j, &self.solve(&g.column(j).into_owned())?);
        }
        let mut out = DMatrix::zeros(p, p);
        for i in 0..p {
            out.set_row(i, &self.solve(&x.row(i).transpose())?.transpose());
        }
        Ok(out)
    }

    /// `B^T G B` for a dense square `G`.
    pub fn congruence_t(&self, g: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        let p = self.dim();
        let mut x = DMatrix::zeros(p, p);
        for j in 0..p {
            x.set_column(j, &self.apply_transpose(&g.column(j).into_owned())?);
        }
        let mut out = DMatrix::zeros(p, p);
        for i in 0..p {
            out.set_row(i, &self.apply_transpose(&x.row(i).transpose())?.transpose());
        }
        Ok(out)
    }
}

impl LocalDirection {
    pub fn zeros(spec: &StructureSpec) -> Result<Self> {
        match spec {
            StructureSpec::Kronecker(l, r) => Ok(Self::kron(Self::zeros(l)?, Self::zeros(r)?)),
            _ => {
                let layout = spec.layout()?;
                Ok(LocalDirection { spec: spec.clone(), repr: LocalRepr::Tri { layout, blocks: Blocks::zeros(&layout) } })
            }
        }
    }

    pub fn kron(left: LocalDirection, right: LocalDirection) -> Self {
        let spec = StructureSpec::Kronecker(Box::new(left.spec.clone()), Box::new(right.spec.clone()));
        LocalDirection { spec, repr: LocalRepr::Kron(Box::new(left), Box::new(right)) }
    }

    /// Factors of a Kronecker direction.
    pub fn factors(&self) -> Option<(&LocalDirection, &LocalDirection)> {
        match &self.repr {
            LocalRepr::Kron(l, r) => Some((l, r)),
            LocalRepr::Tri { .. } => None,
        }
    }

    /// Projection of the identity, `kappa(I)`.
    pub fn identity_projection(spec: &StructureSpec) -> Result<Self> {
        match spec {
            StructureSpec::Kronecker(..) => Err(Error::contract("kappa is undefined for Kronecker structures")),
            _ => {
                let layout = spec.layout()?;
                Ok(LocalDirection { spec: spec.clone(), repr: LocalRepr::Tri { layout, blocks: Blocks::identity(&layout) } })
            }
        }
    }

    /// `kappa((u v^T + v u^T) / 2)` in `O(kp)`, without forming the outer product.
    pub fn sym_outer(spec: &StructureSpec, u: &DVector<f64>, v: &DVector<f64>) -> Result<Self> {
        let layout = spec.layout()?;
        if u.len() != layout.p || v.len() != layout.p {
            return Err(Error::contract("outer-product vectors must match the dimension"));
        }
        let (k1, d0, k2, p) = (layout.k1, layout.d0(), layout.k2, layout.p);
        let half_outer = |ui: &DVector<f64>, vi: &DVector<f64>, uj: &DVector<f64>, vj: &DVector<f64>| {
            (ui * uj.transpose()) * 0.5 + (vi * vj.transpose()) * 0.5
        };
        let seg = |x: &DVector<f64>, s: usize, n: usize| x.rows(s, n).into_owned();
        let (ua, va) = (seg(u, 0, k1), seg(v, 0, k1));
        let (ur, vr) = (seg(u, k1, p - k1), seg(v, k1, p - k1));
        let (u1, v1) = (seg(u, k1, d0), seg(v, k1, d0));
        let (u4, v4) = (seg(u, k1 + d0, k2), seg(v, k1 + d0, k2));
        let blocks = Blocks {
            a: half_outer(&ua, &va, &va, &ua),
            b: half_outer(&ua, &va, &vr, &ur),
            d1: u1.component_mul(&v1),
            d2: half_outer(&u1, &v1, &v4, &u4),
            d4: half_outer(&u4, &v4, &v4, &u4),
        };
        Ok(LocalDirection { spec: spec.clone(), repr: LocalRepr::Tri { layout, blocks } })
    }

    /// Builds a direction from its dense matrix; the pattern and block symmetry are checked.
    pub fn from_dense(spec: &StructureSpec, m: &DMatrix<f64>) -> Result<Self> {
        let layout = spec.layout()?;
        if m.nrows() != layout.p || m.ncols() != layout.p {
            return Err(Error::contract(format!("expected {0}x{0} matrix", layout.p)));
        }
        let stored = if layout.side == Side::Lower { m.transpose() } else { m.clone() };
        let (blocks, off) = Blocks::from_dense(&layout, &stored);
        let tol = 1e-12 * m.amax().max(1.0);
        if off > tol || blocks.asymmetry() > tol {
            return Err(Error::contract(format!("matrix is not in the {} local space", spec.label())));
        }
        Ok(LocalDirection { spec: spec.clone(), repr: LocalRepr::Tri { layout, blocks } })
    }

    pub fn structure(&self) -> &StructureSpec {
        &self.spec
    }

    pub(crate) fn tri(&self) -> Result<(&Layout, &Blocks)> {
        match &self.repr {
            LocalRepr::Tri { layout, blocks } => Ok((layout, blocks)),
            LocalRepr::Kron(..) => Err(Error::contract("operation not defined for Kronecker directions")),
        }
    }

    pub fn dense(&self) -> DMatrix<f64> {
        match &self.repr {
            LocalRepr::Tri { layout, blocks } => {
                let d = blocks.dense();
                if layout.side == Side::Lower { d.transpose() } else { d }
            }
            LocalRepr::Kron(l, r) => l.dense().kronecker(&r.dense()),
        }
    }

    fn zip(&self, o: &LocalDirection, f: impl Fn(f64, f64) -> f64 + Copy) -> Result<LocalDirection> {
        if self.spec != o.spec {
            return Err(Error::contract(format!("structure mismatch: {} vs {}", self.spec.label(), o.spec.label())));
        }
        let repr = match (&self.repr, &o.repr) {
            (LocalRepr::Tri { layout, blocks: x }, LocalRepr::Tri { blocks: y, .. }) => {
                LocalRepr::Tri { layout: *layout, blocks: x.zip(y, f) }
            }
            (LocalRepr::Kron(l1, r1), LocalRepr::Kron(l2, r2)) => {
                LocalRepr::Kron(Box::new(l1.zip(l2, f)?), Box::new(r1.zip(r2, f)?))
            }
            _ => unreachable!("matching specs imply matching representations"),
        };
        Ok(LocalDirection { spec: self.spec.clone(), repr })
    }

    fn map(&self, f: impl Fn(f64) -> f64 + Copy) -> LocalDirection {
        let repr = match &self.repr {
            LocalRepr::Tri { layout, blocks } => LocalRepr::Tri { layout: *layout, blocks: blocks.map(f) },
            LocalRepr::Kron(l, r) => LocalRepr::Kron(Box::new(l.map(f)), Box::new(r.map(f))),
        };
        LocalDirection { spec: self.spec.clone(), repr }
    }

    pub fn add(&self, o: &LocalDirection) -> Result<LocalDirection> {
        self.zip(o, |x, y| x + y)
    }

    pub fn sub(&self, o: &LocalDirection) -> Result<LocalDirection> {
        self.zip(o, |x, y| x - y)
    }

    /// Entry-wise product, used to apply the Fisher mask.
    pub fn hadamard(&self, o: &LocalDirection) -> Result<LocalDirection> {
        self.zip(o, |x, y| x * y)
    }

    pub fn scale(&self, c: f64) -> LocalDirection {
        self.map(|x| c * x)
    }

    /// Frobenius norm of the dense form (Kronecker: of the factor pair).
    pub fn norm(&self) -> f64 {
        self.sq_norm().sqrt()
    }

    fn sq_norm(&self) -> f64 {
        match &self.repr {
            LocalRepr::Tri { blocks, .. } => blocks.sq_norm(),
            LocalRepr::Kron(l, r) => l.sq_norm() + r.sq_norm(),
        }
    }

    pub fn max_abs(&self) -> f64 {
        match &self.repr {
            LocalRepr::Tri { blocks, .. } => blocks.amax(),
            LocalRepr::Kron(l, r) => l.max_abs().max(r.max_abs()),
        }
    }

    /// `M * M` as a local-space element (the pattern is closed under products).
    fn square_blocks(&self) -> Result<Blocks> {
        let (_, blocks) = self.tri()?;
        Ok(blocks.mul(blocks))
    }
}

/// `a * b` in the group.
pub fn group_mul(a: &GroupElement, b: &GroupElement) -> Result<GroupElement> {
    a.mul(b)
}

pub fn group_inv(a: &GroupElement) -> Result<GroupElement> {
    a.inverse()
}

/// Second-order retraction `I + M + M^2 / 2`; Kronecker directions map factor-wise.
pub fn h_map(m: &LocalDirection) -> Result<GroupElement> {
    match &m.repr {
        LocalRepr::Tri { layout, blocks } => {
            let sq = m.square_blocks()?;
            let id = Blocks::identity(layout);
            let out = id.zip(blocks, |x, y| x + y).zip(&sq, |x, y| x + 0.5 * y);
            // a lower direction stores M^T, and h(M)^T = h(M^T)
            let g = GroupElement { spec: m.spec.clone(), repr: Repr::Tri { layout: *layout, blocks: out } };
            g.validate()?;
            Ok(g)
        }
        LocalRepr::Kron(l, r) => GroupElement::kron(h_map(l)?, h_map(r)?),
    }
}

/// Matrix exponential; only for full and diagonal layouts.
pub fn exp_map(m: &LocalDirection) -> Result<GroupElement> {
    let (layout, blocks) = m.tri()?;
    if !layout.exp_capable() {
        return Err(Error::contract(format!("exp map is only supported for full or diagonal structures, got {}", m.spec.label())));
    }
    let out = Blocks {
        a: expm(&blocks.a),
        b: blocks.b.clone(),
        d1: blocks.d1.map(f64::exp),
        d2: blocks.d2.clone(),
        d4: expm(&blocks.d4),
    };
    let g = GroupElement { spec: m.spec.clone(), repr: Repr::Tri { layout: *layout, blocks: out } };
    g.validate()?;
    Ok(g)
}

/// Projects a symmetric dense matrix onto the local space of `spec`.
pub fn kappa_project(x: &DMatrix<f64>, spec: &StructureSpec) -> Result<LocalDirection> {
    if spec.is_kronecker() {
        return Err(Error::contract("kappa is undefined for Kronecker structures; project each factor"));
    }
    let layout = spec.layout()?;
    if x.nrows() != layout.p || x.ncols() != layout.p {
        return Err(Error::contract(format!("expected {0}x{0} matrix", layout.p)));
    }
    let asym = (x - x.transpose()).amax();
    if asym > SYM_TOL * x.amax().max(1.0) {
        return Err(Error::contract(format!("kappa needs a symmetric input (asymmetry {asym:e})")));
    }
    let xs = sym(x);
    let (blocks, _) = Blocks::from_dense(&layout, &xs);
    let blocks = Blocks { a: sym(&blocks.a), d4: sym(&blocks.d4), ..blocks };
    Ok(LocalDirection { spec: spec.clone(), repr: LocalRepr::Tri { layout, blocks } })
}

/// Fisher mask: `1/2` on symmetric blocks and the diagonal, `1` on coupling blocks.
pub fn c_mask(spec: &StructureSpec) -> Result<LocalDirection> {
    match spec {
        StructureSpec::Kronecker(l, r) => Ok(LocalDirection::kron(c_mask(l)?, c_mask(r)?)),
        _ => {
            let layout = spec.layout()?;
            let z = Blocks::zeros(&layout);
            let blocks = Blocks {
                a: z.a.map(|_| 0.5),
                b: z.b.map(|_| 1.0),
                d1: z.d1.map(|_| 0.5),
                d2: z.d2.map(|_| 1.0),
                d4: z.d4.map(|_| 0.5),
            };
            Ok(LocalDirection { spec: spec.clone(), repr: LocalRepr::Tri { layout, blocks } })
        }
    }
}

/// `B B^T` as a dense matrix.
pub fn precision_dense(b: &GroupElement) -> DMatrix<f64> {
    let d = b.dense();
    &d * d.transpose()
}

/// `B^{-T} B^{-1}` for a block upper-triangular factor, as rank-`k` plus diagonal.
pub fn covariance_lowrank(b: &GroupElement) -> Result<LowRankPlusDiag> {
    let k = match b.structure() {
        StructureSpec::BlockTriUpper(_, k) => *k,
        other => return Err(Error::contract(format!("low-rank covariance needs tri-up, got {}", other.label()))),
    };
    let (layout, blocks) = b.tri()?;
    let inv = blocks.inverse()?;
    // rows 0..k of B^{-1} are [a', b']; the remaining rows are diag(1/d1)
    let mut factor = DMatrix::zeros(layout.p, k);
    factor.view_mut((0, 0), (k, k)).copy_from(&inv.a.transpose());
    factor.view_mut((k, 0), (layout.p - k, k)).copy_from(&inv.b.transpose());
    let mut diag = DVector::zeros(layout.p);
    for i in 0..layout.d0() {
        diag[k + i] = inv.d1[i] * inv.d1[i];
    }
    Ok(LowRankPlusDiag { factor, diag })
}

pub fn validate(b: &GroupElement) -> Result<()> {
    b.validate()
}

/// Coordinate basis of the local space, in block order `a`, `b`, `d1`, `d2`, `d4`.
pub fn local_basis(spec: &StructureSpec, basis: SymBasis) -> Result<Vec<LocalDirection>> {
    let layout = spec.layout()?;
    let zero = Blocks::zeros(&layout);
    let off = match basis {
        SymBasis::Unit => 1.0,
        SymBasis::Orthonormal => std::f64::consts::FRAC_1_SQRT_2,
    };
    let mut out = Vec::with_capacity(spec.local_dim());
    let mut push = |blocks: Blocks| out.push(LocalDirection { spec: spec.clone(), repr: LocalRepr::Tri { layout, blocks } });
    let sym_entries = |n: usize| (0..n).flat_map(move |i| (i..n).map(move |j| (i, j)));
    for (i, j) in sym_entries(layout.k1) {
        let mut b = zero.clone();
        let v = if i == j { 1.0 } else { off };
        b.a[(i, j)] = v;
        b.a[(j, i)] = v;
        push(b);
    }
    for i in 0..layout.k1 {
        for j in 0..layout.p - layout.k1 {
            let mut b = zero.clone();
            b.b[(i, j)] = 1.0;
            push(b);
        }
    }
    for i in 0..layout.d0() {
        let mut b = zero.clone();
        b.d1[i] = 1.0;
        push(b);
    }
    for i in 0..layout.d0() {
        for j in 0..layout.k2 {
            let mut b = zero.clone();
            b.d2[(i, j)] = 1.0;
            push(b);
        }
    }
    for (i, j) in sym_entries(layout.k2) {
        let mut b = zero.clone();
        let v = if i == j { 1.0 } else { off };
        b.d4[(i, j)] = v;
        b.d4[(j, i)] = v;
        push(b);
    }
    Ok(out)
}

/// `kappa(B^{-1} H B^{-T})` using `k1 + k2` Hessian-vector products and the Hessian diagonal.
///
/// Rows of `X = Q H Q^T` (with `Q = B^{-1}`) are available for the head and tail
/// indices from one product each; the diagonal of the middle block only needs the
/// Hessian diagonal plus columns already recovered from those products.
pub fn kappa_congruence_hvp<F>(b: &GroupElement, hess_diag: &DVector<f64>, mut hvp: F) -> Result<LocalDirection>
where
    F: FnMut(&DVector<f64>) -> Result<DVector<f64>>,
{
    let (layout, u) = b.tri()?;
    let (p, k1, k2, d0) = (layout.p, layout.k1, layout.k2, layout.d0());
    if hess_diag.len() != p {
        return Err(Error::contract("Hessian diagonal has the wrong length"));
    }
    // Q^T e_i and Q y in terms of the stored upper factor U
    let q_t = |v: &DVector<f64>| match layout.side {
        Side::Upper => u.solve_t(v),
        Side::Lower => u.solve(v),
    };
    let q = |v: &DVector<f64>| match layout.side {
        Side::Upper => u.solve(v),
        Side::Lower => u.solve_t(v),
    };
    let mut rows = |indices: std::ops::Range<usize>| -> Result<(DMatrix<f64>, DMatrix<f64>)> {
        let n = indices.len();
        let mut x_rows = DMatrix::zeros(n, p);
        let mut h_cols = DMatrix::zeros(p, n);
        for (r, i) in indices.enumerate() {
            let mut e = DVector::zeros(p);
            e[i] = 1.0;
            let y = hvp(&q_t(&e))?;
            if y.len() != p {
                return Err(Error::contract("Hessian-vector product has the wrong length"));
            }
            x_rows.set_row(r, &q(&y).transpose());
            h_cols.set_column(r, &y);
        }
        Ok((x_rows, h_cols))
    };
    let (rows_a, y_a) = rows(0..k1)?;
    let (rows_4, y_4) = rows(k1 + d0..p)?;

    // r_i = (e_i + E_J c_i) / d1_i, and H E_J recovered from the products above
    let (j_start, h_j, c) = match layout.side {
        Side::Upper => (k1 + d0, &y_4 * u.d4.transpose(), -solve_dense_mat(&u.d4.transpose(), &u.d2.transpose())),
        Side::Lower => (0, &y_a * &u.a, -solve_dense_mat(&u.a, &u.b1())),
    };
    let nj = h_j.ncols();
    let h_jj = h_j.rows(j_start, nj).into_owned();
    let mut d1 = DVector::zeros(d0);
    for i in 0..d0 {
        let gi = k1 + i;
        let ci = c.column(i);
        let cross: f64 = (0..nj).map(|j| h_j[(gi, j)] * ci[j]).sum();
        let quad = (ci.transpose() * &h_jj * ci)[(0, 0)];
        d1[i] = (hess_diag[gi] + 2.0 * cross + quad) / (u.d1[i] * u.d1[i]);
    }
    if d1.iter().any(|v| !v.is_finite()) {
        return Err(Error::singular("factor is singular in the HVP projection"));
    }
    let blocks = Blocks {
        a: sym(&rows_a.columns(0, k1).into_owned()),
        b: rows_a.columns(k1, p - k1).into_owned(),
        d1,
        d2: rows_4.columns(k1, d0).transpose(),
        d4: sym(&rows_4.columns(k1 + d0, k2).into_owned()),
    };
    Ok(LocalDirection { spec: b.spec.clone(), repr: LocalRepr::Tri { layout: *layout, blocks } })
}
