//! Convex block functions with exact proximal oracles.
//!
//! Every oracle solves `argmin_y f(y) - <q, y> + 1/2 <y, W y>` for a fixed
//! weight `W`; the weight is supplied once so factorizations can be cached.

use std::fmt;
use std::sync::Arc;

use nalgebra::{Cholesky, DMatrix, DVector, Dyn, LU};

use crate::error::{Error, Result};
use crate::linalg::{project_psd, svec_order, BoxBounds, SymMatrix, WeightOperator};

const STRUCTURE_TOL: f64 = 1e-12;

/// Exact minimizer of `f(y) - <q, y> + 1/2 <y, W y>` for a fixed `W`.
pub trait ProxOracle: Send + Sync {
    fn solve(&self, q: &DVector<f64>) -> Result<DVector<f64>>;
}

pub trait ConvexBlock: Send + Sync + fmt::Debug {
    fn dim(&self) -> usize;

    /// Prepares an oracle for the weight `w` (factorizations happen here).
    fn prox_oracle(&self, w: &WeightOperator) -> Result<Box<dyn ProxOracle>>;

    /// Function value; `+inf` outside the domain.
    fn eval(&self, y: &DVector<f64>) -> Result<f64>;

    /// Lower curvature bound `Sigma`.
    fn curvature(&self) -> WeightOperator {
        WeightOperator::Zero(self.dim())
    }

    /// `(P, l)` when `f(y) = 1/2 <y, P y> + <l, y>` (up to a constant).
    fn quadratic_form(&self) -> Option<(DMatrix<f64>, DVector<f64>)> {
        None
    }

    /// Distance-to-optimality witness `|y - prox_f(y + v)|`, where `v` is the
    /// candidate (sub)gradient. Zero exactly when `v` is in `df(y)`.
    fn prox_residual(&self, y: &DVector<f64>, v: &DVector<f64>) -> Result<f64> {
        let oracle = self.prox_oracle(&WeightOperator::identity(self.dim()))?;
        Ok((y - oracle.solve(&(y + v))?).norm())
    }
}

fn check_dim(what: &str, expected: usize, got: usize) -> Result<()> {
    if expected != got {
        return Err(Error::Input(format!("{what}: expected dimension {expected}, got {got}")));
    }
    Ok(())
}

/// Linear solve against a symmetric PSD matrix: Cholesky first, LU as a
/// fallback for semidefinite but nonsingular systems.
pub(crate) enum SpdSolver {
    Empty,
    Chol(Cholesky<f64, Dyn>),
    Lu(LU<f64, Dyn, Dyn>),
}

impl SpdSolver {
    pub(crate) fn new(m: &DMatrix<f64>, what: &str) -> Result<Self> {
        if m.nrows() == 0 {
            return Ok(SpdSolver::Empty);
        }
        let sym = (m + m.transpose()) * 0.5;
        let scale = sym.amax().max(f64::MIN_POSITIVE);
        if let Some(ch) = Cholesky::new(sym.clone()) {
            let l = ch.l_dirty();
            let min_pivot = (0..m.nrows()).map(|k| l[(k, k)] * l[(k, k)]).fold(f64::INFINITY, f64::min);
            if min_pivot > 1e-12 * scale {
                return Ok(SpdSolver::Chol(ch));
            }
        }
        let lu = sym.lu();
        let u = lu.u();
        let min_u = (0..m.nrows()).map(|k| u[(k, k)].abs()).fold(f64::INFINITY, f64::min);
        if min_u > 1e-12 * scale {
            return Ok(SpdSolver::Lu(lu));
        }
        Err(Error::Config(format!(
            "{what}: subproblem matrix is singular, the minimizer is not unique"
        )))
    }

    pub(crate) fn solve(&self, b: &DVector<f64>) -> DVector<f64> {
        match self {
            SpdSolver::Empty => DVector::zeros(0),
            SpdSolver::Chol(ch) => ch.solve(b),
            SpdSolver::Lu(lu) => lu.solve(b).expect("nonsingular by construction"),
        }
    }
}

/// `f = 0`.
#[derive(Clone, Debug)]
pub struct ZeroBlock {
    dim: usize,
}

impl ZeroBlock {
    pub fn new(dim: usize) -> Self {
        Self { dim }
    }
}

impl ConvexBlock for ZeroBlock {
    fn dim(&self) -> usize {
        self.dim
    }
    fn prox_oracle(&self, w: &WeightOperator) -> Result<Box<dyn ProxOracle>> {
        QuadraticBlock::new(DMatrix::zeros(self.dim, self.dim), DVector::zeros(self.dim))?
            .prox_oracle(w)
    }
    fn eval(&self, y: &DVector<f64>) -> Result<f64> {
        check_dim("zero block", self.dim, y.len())?;
        Ok(0.0)
    }
    fn quadratic_form(&self) -> Option<(DMatrix<f64>, DVector<f64>)> {
        Some((DMatrix::zeros(self.dim, self.dim), DVector::zeros(self.dim)))
    }
}

/// `f(y) = 1/2 <y, P y> + <l, y>` with `P` PSD.
#[derive(Clone, Debug)]
pub struct QuadraticBlock {
    p: DMatrix<f64>,
    l: DVector<f64>,
}

impl QuadraticBlock {
    pub fn new(p: DMatrix<f64>, l: DVector<f64>) -> Result<Self> {
        if p.nrows() != p.ncols() || p.nrows() != l.len() {
            return Err(Error::Input(format!(
                "quadratic block: P is {}x{}, l has length {}",
                p.nrows(),
                p.ncols(),
                l.len()
            )));
        }
        let p = SymMatrix::new(p)?.into_matrix();
        Ok(Self { p, l })
    }

    pub fn linear(l: DVector<f64>) -> Self {
        let n = l.len();
        Self {
            p: DMatrix::zeros(n, n),
            l,
        }
    }

    pub fn hessian(&self) -> &DMatrix<f64> {
        &self.p
    }

    pub fn linear_term(&self) -> &DVector<f64> {
        &self.l
    }
}

struct LinearSolveOracle {
    solver: SpdSolver,
    shift: DVector<f64>,
}

impl ProxOracle for LinearSolveOracle {
    fn solve(&self, q: &DVector<f64>) -> Result<DVector<f64>> {
        Ok(self.solver.solve(&(q - &self.shift)))
    }
}

impl ConvexBlock for QuadraticBlock {
    fn dim(&self) -> usize {
        self.l.len()
    }
    fn prox_oracle(&self, w: &WeightOperator) -> Result<Box<dyn ProxOracle>> {
        check_dim("quadratic block weight", self.dim(), w.dim())?;
        let m = &self.p + w.to_dense();
        Ok(Box::new(LinearSolveOracle {
            solver: SpdSolver::new(&m, "quadratic block")?,
            shift: self.l.clone(),
        }))
    }
    fn eval(&self, y: &DVector<f64>) -> Result<f64> {
        check_dim("quadratic block", self.dim(), y.len())?;
        Ok(0.5 * y.dot(&(&self.p * y)) + self.l.dot(y))
    }
    fn curvature(&self) -> WeightOperator {
        WeightOperator::Dense(self.p.clone())
    }
    fn quadratic_form(&self) -> Option<(DMatrix<f64>, DVector<f64>)> {
        Some((self.p.clone(), self.l.clone()))
    }
}

/// Scalar nonsmooth term of a [`SeparableBlock`].
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum ScalarTerm {
    Zero,
    /// `lambda |t|`
    Abs(f64),
    /// indicator of `t >= 0`
    Nonneg,
    /// indicator of `lo <= t <= hi`
    Interval(f64, f64),
}

impl ScalarTerm {
    /// `argmin_t h(t) + a/2 t^2 - b t` with `a > 0`.
    fn prox(self, a: f64, b: f64) -> f64 {
        let t = b / a;
        match self {
            ScalarTerm::Zero => t,
            ScalarTerm::Abs(lam) => t.signum() * (t.abs() - lam / a).max(0.0),
            ScalarTerm::Nonneg => t.max(0.0),
            ScalarTerm::Interval(lo, hi) => t.clamp(lo, hi),
        }
    }

    fn eval(self, t: f64) -> f64 {
        match self {
            ScalarTerm::Zero => 0.0,
            ScalarTerm::Abs(lam) => lam * t.abs(),
            ScalarTerm::Nonneg => {
                if t >= 0.0 {
                    0.0
                } else {
                    f64::INFINITY
                }
            }
            ScalarTerm::Interval(lo, hi) => {
                if (lo..=hi).contains(&t) {
                    0.0
                } else {
                    f64::INFINITY
                }
            }
        }
    }
}

/// `f(y) = sum_i h(y_i) + mu_i/2 y_i^2 + l_i y_i`; needs a diagonal weight.
#[derive(Clone, Debug)]
pub struct SeparableBlock {
    term: ScalarTerm,
    mu: DVector<f64>,
    l: DVector<f64>,
}

impl SeparableBlock {
    pub fn new(term: ScalarTerm, mu: DVector<f64>, l: DVector<f64>) -> Result<Self> {
        check_dim("separable block", mu.len(), l.len())?;
        if mu.iter().any(|&m| !(m >= 0.0) || !m.is_finite()) {
            return Err(Error::Input("separable block: curvature must be finite and >= 0".into()));
        }
        match term {
            ScalarTerm::Abs(lam) if !(lam >= 0.0) => {
                return Err(Error::Input(format!("separable block: negative weight {lam}")))
            }
            ScalarTerm::Interval(lo, hi) if !(lo <= hi) => {
                return Err(Error::Input(format!("separable block: empty interval [{lo}, {hi}]")))
            }
            _ => {}
        }
        Ok(Self { term, mu, l })
    }

    pub fn plain(term: ScalarTerm, dim: usize) -> Self {
        Self {
            term,
            mu: DVector::zeros(dim),
            l: DVector::zeros(dim),
        }
    }
}

struct SeparableOracle {
    term: ScalarTerm,
    a: DVector<f64>,
    l: DVector<f64>,
}

impl ProxOracle for SeparableOracle {
    fn solve(&self, q: &DVector<f64>) -> Result<DVector<f64>> {
        Ok(DVector::from_fn(q.len(), |i, _| self.term.prox(self.a[i], q[i] - self.l[i])))
    }
}

impl ConvexBlock for SeparableBlock {
    fn dim(&self) -> usize {
        self.mu.len()
    }
    fn prox_oracle(&self, w: &WeightOperator) -> Result<Box<dyn ProxOracle>> {
        check_dim("separable block weight", self.dim(), w.dim())?;
        let d = w.as_diagonal(STRUCTURE_TOL).ok_or_else(|| {
            Error::Unsupported("separable block requires a diagonal weight".into())
        })?;
        let a = &d + &self.mu;
        if a.iter().any(|&v| !(v > 0.0)) {
            return Err(Error::Config(
                "separable block: weight plus curvature must be positive".into(),
            ));
        }
        Ok(Box::new(SeparableOracle {
            term: self.term,
            a,
            l: self.l.clone(),
        }))
    }
    fn eval(&self, y: &DVector<f64>) -> Result<f64> {
        check_dim("separable block", self.dim(), y.len())?;
        Ok((0..y.len())
            .map(|i| self.term.eval(y[i]) + 0.5 * self.mu[i] * y[i] * y[i] + self.l[i] * y[i])
            .sum())
    }
    fn curvature(&self) -> WeightOperator {
        WeightOperator::Diagonal(self.mu.clone())
    }
    fn quadratic_form(&self) -> Option<(DMatrix<f64>, DVector<f64>)> {
        (self.term == ScalarTerm::Zero).then(|| (DMatrix::from_diagonal(&self.mu), self.l.clone()))
    }
}

fn scaled_identity_weight(w: &WeightOperator, what: &str) -> Result<f64> {
    let s = w
        .as_scaled_identity(STRUCTURE_TOL)
        .ok_or_else(|| Error::Unsupported(format!("{what} requires a scaled-identity weight")))?;
    if !(s > 0.0) {
        return Err(Error::Config(format!("{what}: weight must be positive, got {s}")));
    }
    Ok(s)
}

/// `f(S) = delta_{S^n_+}(S) + <L, S>` on `svec` coordinates.
#[derive(Clone, Debug)]
pub struct PsdConeBlock {
    n: usize,
    linear: DVector<f64>,
}

impl PsdConeBlock {
    pub fn new(n: usize) -> Self {
        Self {
            n,
            linear: DVector::zeros(crate::linalg::svec_dim(n)),
        }
    }

    pub fn with_linear(n: usize, linear: &SymMatrix) -> Result<Self> {
        check_dim("psd block linear term", n, linear.n())?;
        Ok(Self {
            n,
            linear: linear.svec(),
        })
    }
}

struct PsdOracle {
    n: usize,
    scale: f64,
    linear: DVector<f64>,
}

impl ProxOracle for PsdOracle {
    fn solve(&self, q: &DVector<f64>) -> Result<DVector<f64>> {
        let m = SymMatrix::from_svec(self.n, &((q - &self.linear) / self.scale))?;
        Ok(project_psd(&m)?.svec())
    }
}

impl ConvexBlock for PsdConeBlock {
    fn dim(&self) -> usize {
        self.linear.len()
    }
    fn prox_oracle(&self, w: &WeightOperator) -> Result<Box<dyn ProxOracle>> {
        check_dim("psd block weight", self.dim(), w.dim())?;
        Ok(Box::new(PsdOracle {
            n: self.n,
            scale: scaled_identity_weight(w, "psd cone block")?,
            linear: self.linear.clone(),
        }))
    }
    fn eval(&self, y: &DVector<f64>) -> Result<f64> {
        let m = SymMatrix::from_svec(self.n, y)?;
        let eig = crate::linalg::sym_eig(&m)?;
        let lmin = eig.eigenvalues[eig.eigenvalues.len() - 1];
        if lmin < -1e-10 * (1.0 + m.norm()) {
            return Ok(f64::INFINITY);
        }
        Ok(self.linear.dot(y))
    }
}

/// `g(Z) = delta*_N(-Z)` for a box `N`, on `svec` coordinates.
#[derive(Clone, Debug)]
pub struct BoxSupportBlock {
    bounds: Arc<BoxBounds>,
}

impl BoxSupportBlock {
    pub fn new(bounds: Arc<BoxBounds>) -> Self {
        Self { bounds }
    }
}

/// `argmin_Z delta*_N(-Z) + sigma/2 |Z - W|^2`, by the Moreau decomposition
/// `Z = W + Pi_N(-sigma W) / sigma`.
pub fn prox_support_negated(w: &SymMatrix, sigma: f64, bounds: &BoxBounds) -> Result<SymMatrix> {
    if !(sigma > 0.0) {
        return Err(Error::Config(format!("sigma must be positive, got {sigma}")));
    }
    if w.n() != bounds.n() {
        return Err(Error::Input(format!("prox: matrix order {} vs bounds order {}", w.n(), bounds.n())));
    }
    // Entries with an inactive clamp are exactly zero.
    Ok(SymMatrix::from_upper_fn(w.n(), |i, j| {
        let v = w.get(i, j);
        let t = -sigma * v;
        let (lo, hi) = (bounds.lower(i, j), bounds.upper(i, j));
        if t < lo {
            v + lo / sigma
        } else if t > hi {
            v + hi / sigma
        } else {
            0.0
        }
    }))
}

struct BoxSupportOracle {
    bounds: Arc<BoxBounds>,
    scale: f64,
}

impl ProxOracle for BoxSupportOracle {
    fn solve(&self, q: &DVector<f64>) -> Result<DVector<f64>> {
        let n = self.bounds.n();
        let w = SymMatrix::from_svec(n, &(q / self.scale))?;
        Ok(prox_support_negated(&w, self.scale, &self.bounds)?.svec())
    }
}

impl ConvexBlock for BoxSupportBlock {
    fn dim(&self) -> usize {
        crate::linalg::svec_dim(self.bounds.n())
    }
    fn prox_oracle(&self, w: &WeightOperator) -> Result<Box<dyn ProxOracle>> {
        check_dim("box support block weight", self.dim(), w.dim())?;
        Ok(Box::new(BoxSupportOracle {
            bounds: self.bounds.clone(),
            scale: scaled_identity_weight(w, "box support block")?,
        }))
    }
    fn eval(&self, y: &DVector<f64>) -> Result<f64> {
        let n = svec_order(y.len())
            .ok_or_else(|| Error::Input(format!("length {} is not an svec length", y.len())))?;
        check_dim("box support block", self.bounds.n(), n)?;
        let z = SymMatrix::from_svec(n, y)?;
        Ok(self.bounds.support(&z.scale(-1.0)))
    }
}

/// Separable sum of blocks over consecutive coordinates; needs a
/// block-diagonal weight.
#[derive(Clone, Debug)]
pub struct ProductBlock {
    parts: Vec<Arc<dyn ConvexBlock>>,
    offsets: Vec<usize>,
}

impl ProductBlock {
    pub fn new(parts: Vec<Arc<dyn ConvexBlock>>) -> Self {
        let mut offsets = vec![0];
        for p in &parts {
            offsets.push(offsets.last().unwrap() + p.dim());
        }
        Self { parts, offsets }
    }

    pub fn parts(&self) -> &[Arc<dyn ConvexBlock>] {
        &self.parts
    }

    fn segment(&self, v: &DVector<f64>, i: usize) -> DVector<f64> {
        v.rows(self.offsets[i], self.parts[i].dim()).clone_owned()
    }
}

struct ProductOracle {
    oracles: Vec<Box<dyn ProxOracle>>,
    offsets: Vec<usize>,
}

impl ProxOracle for ProductOracle {
    fn solve(&self, q: &DVector<f64>) -> Result<DVector<f64>> {
        let mut out = DVector::zeros(q.len());
        for (i, o) in self.oracles.iter().enumerate() {
            let (start, len) = (self.offsets[i], self.offsets[i + 1] - self.offsets[i]);
            let seg = o.solve(&q.rows(start, len).clone_owned())?;
            out.rows_mut(start, len).copy_from(&seg);
        }
        Ok(out)
    }
}

impl ConvexBlock for ProductBlock {
    fn dim(&self) -> usize {
        *self.offsets.last().unwrap()
    }
    fn prox_oracle(&self, w: &WeightOperator) -> Result<Box<dyn ProxOracle>> {
        check_dim("product block weight", self.dim(), w.dim())?;
        let scale = 1.0 + w.to_dense().amax();
        let off = w.off_block_magnitude(&self.offsets);
        if off > 1e-10 * scale {
            return Err(Error::Unsupported(format!(
                "product block requires a block-diagonal weight (coupling {off:.3e})"
            )));
        }
        let oracles = self
            .parts
            .iter()
            .enumerate()
            .map(|(i, p)| {
                let local = w.restrict(self.offsets[i], p.dim());
                let local = match local {
                    WeightOperator::Dense(m) => WeightOperator::Dense((&m + m.transpose()) * 0.5),
                    other => other,
                };
                p.prox_oracle(&local)
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Box::new(ProductOracle {
            oracles,
            offsets: self.offsets.clone(),
        }))
    }
    fn eval(&self, y: &DVector<f64>) -> Result<f64> {
        check_dim("product block", self.dim(), y.len())?;
        let mut total = 0.0;
        for (i, p) in self.parts.iter().enumerate() {
            total += p.eval(&self.segment(y, i))?;
        }
        Ok(total)
    }
    fn curvature(&self) -> WeightOperator {
        WeightOperator::BlockDiagonal(self.parts.iter().map(|p| p.curvature()).collect())
    }
    fn quadratic_form(&self) -> Option<(DMatrix<f64>, DVector<f64>)> {
        let n = self.dim();
        let mut p_all = DMatrix::zeros(n, n);
        let mut l_all = DVector::zeros(n);
        for (i, part) in self.parts.iter().enumerate() {
            let (p, l) = part.quadratic_form()?;
            let (s, d) = (self.offsets[i], part.dim());
            p_all.view_mut((s, s), (d, d)).copy_from(&p);
            l_all.rows_mut(s, d).copy_from(&l);
        }
        Some((p_all, l_all))
    }
}

/// `f(y) + <l, y>` for an inner block `f`.
#[derive(Clone, Debug)]
pub struct ShiftedBlock {
    inner: Arc<dyn ConvexBlock>,
    l: DVector<f64>,
}

impl ShiftedBlock {
    pub fn new(inner: Arc<dyn ConvexBlock>, l: DVector<f64>) -> Result<Self> {
        check_dim("shifted block", inner.dim(), l.len())?;
        Ok(Self { inner, l })
    }
}

struct ShiftedOracle {
    inner: Box<dyn ProxOracle>,
    l: DVector<f64>,
}

impl ProxOracle for ShiftedOracle {
    fn solve(&self, q: &DVector<f64>) -> Result<DVector<f64>> {
        self.inner.solve(&(q - &self.l))
    }
}

impl ConvexBlock for ShiftedBlock {
    fn dim(&self) -> usize {
        self.inner.dim()
    }
    fn prox_oracle(&self, w: &WeightOperator) -> Result<Box<dyn ProxOracle>> {
        Ok(Box::new(ShiftedOracle {
            inner: self.inner.prox_oracle(w)?,
            l: self.l.clone(),
        }))
    }
    fn eval(&self, y: &DVector<f64>) -> Result<f64> {
        Ok(self.inner.eval(y)? + self.l.dot(y))
    }
    fn curvature(&self) -> WeightOperator {
        self.inner.curvature()
    }
    fn quadratic_form(&self) -> Option<(DMatrix<f64>, DVector<f64>)> {
        self.inner.quadratic_form().map(|(p, l)| (p, l + &self.l))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::project_box;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn quadratic_prox_solves_normal_equations() {
        let p = DMatrix::from_row_slice(2, 2, &[2.0, 0.5, 0.5, 1.0]);
        let l = DVector::from_vec(vec![1.0, -1.0]);
        let blk = QuadraticBlock::new(p.clone(), l.clone()).unwrap();
        let w = WeightOperator::identity(2);
        let q = DVector::from_vec(vec![0.3, 0.7]);
        let y = blk.prox_oracle(&w).unwrap().solve(&q).unwrap();
        let grad = &p * &y + &l - &q + &y;
        assert!(grad.norm() < 1e-12);
    }

    #[test]
    fn singular_quadratic_subproblem_is_rejected() {
        let blk = ZeroBlock::new(2);
        let err = blk.prox_oracle(&WeightOperator::Zero(2)).err().unwrap();
        assert!(matches!(err, Error::Config(_)));
    }

    #[test]
    fn soft_threshold() {
        let blk = SeparableBlock::plain(ScalarTerm::Abs(1.0), 3);
        let o = blk.prox_oracle(&WeightOperator::identity(3)).unwrap();
        let y = o.solve(&DVector::from_vec(vec![2.5, -0.5, -3.0])).unwrap();
        assert_eq!(y.as_slice(), &[1.5, 0.0, -2.0]);
    }

    #[test]
    fn separable_rejects_dense_weight() {
        let blk = SeparableBlock::plain(ScalarTerm::Nonneg, 2);
        let w = WeightOperator::Dense(DMatrix::from_row_slice(2, 2, &[1.0, 0.5, 0.5, 1.0]));
        assert!(matches!(blk.prox_oracle(&w).err().unwrap(), Error::Unsupported(_)));
    }

    #[test]
    fn psd_prox_projects_scaled_input() {
        let blk = PsdConeBlock::new(2);
        let o = blk
            .prox_oracle(&WeightOperator::ScaledIdentity { dim: 3, scale: 2.0 })
            .unwrap();
        let m = SymMatrix::from_diagonal(&[4.0, -2.0]);
        let s = SymMatrix::from_svec(2, &o.solve(&m.svec()).unwrap()).unwrap();
        assert!((s.get(0, 0) - 2.0).abs() < 1e-12 && s.get(1, 1).abs() < 1e-12);
    }

    #[test]
    fn support_prox_whole_space_is_zero() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let w = SymMatrix::from_upper_fn(3, |_, _| rng.gen_range(-2.0..2.0));
        let z = prox_support_negated(&w, 1.7, &BoxBounds::unbounded(3)).unwrap();
        assert!(z.norm() < 1e-12);
    }

    #[test]
    fn support_prox_nonneg_orthant_keeps_positive_part() {
        let w = SymMatrix::new(DMatrix::from_row_slice(2, 2, &[1.0, -2.0, -2.0, 3.0])).unwrap();
        let z = prox_support_negated(&w, 0.5, &BoxBounds::nonnegative(2)).unwrap();
        assert_eq!(z.get(0, 0), 1.0);
        assert_eq!(z.get(0, 1), 0.0);
        assert_eq!(z.get(1, 1), 3.0);
    }

    #[test]
    fn support_prox_membership() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let lower = SymMatrix::from_upper_fn(3, |_, _| rng.gen_range(-1.0..0.0));
        let upper = SymMatrix::from_upper_fn(3, |_, _| rng.gen_range(0.0..1.0));
        let bounds = BoxBounds::new(3, Some(lower), Some(upper)).unwrap();
        for _ in 0..50 {
            let w = SymMatrix::from_upper_fn(3, |_, _| rng.gen_range(-3.0..3.0));
            let sigma = rng.gen_range(0.1..10.0);
            let z = prox_support_negated(&w, sigma, &bounds).unwrap();
            // X = sigma (Z - W) must lie in N with -Z in its normal cone.
            let x = z.sub(&w).scale(sigma);
            let back = project_box(&x.sub(&z), &bounds).unwrap();
            assert!(x.sub(&back).norm() <= 1e-8 * (1.0 + x.norm()));
        }
    }

    #[test]
    fn product_block_splits_weight() {
        let blk = ProductBlock::new(vec![
            Arc::new(SeparableBlock::plain(ScalarTerm::Nonneg, 2)),
            Arc::new(QuadraticBlock::linear(DVector::from_vec(vec![1.0]))),
        ]);
        let w = WeightOperator::Diagonal(DVector::from_vec(vec![1.0, 2.0, 4.0]));
        let y = blk
            .prox_oracle(&w)
            .unwrap()
            .solve(&DVector::from_vec(vec![-1.0, 4.0, 5.0]))
            .unwrap();
        assert_eq!(y.as_slice(), &[0.0, 2.0, 1.0]);
        let coupled = WeightOperator::Dense(DMatrix::from_element(3, 3, 1.0));
        assert!(blk.prox_oracle(&coupled).is_err());
    }

    #[test]
    fn prox_residual_vanishes_at_optimality() {
        let blk = SeparableBlock::plain(ScalarTerm::Nonneg, 2);
        let y = DVector::from_vec(vec![0.0, 2.0]);
        let v = DVector::from_vec(vec![-1.0, 0.0]);
        assert!(blk.prox_residual(&y, &v).unwrap() < 1e-15);
        let bad = DVector::from_vec(vec![1.0, 0.0]);
        assert!(blk.prox_residual(&y, &bad).unwrap() > 0.5);
    }
}
