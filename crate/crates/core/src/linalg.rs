//! Dense symmetric linear algebra: the space of symmetric matrices with the
//! trace inner product, cone and box projections, and self-adjoint positive
//! semidefinite weight operators.
//!
//! Symmetric matrices are handed to the generic solvers through the isometric
//! `svec` embedding (upper triangle, column-major, off-diagonals scaled by
//! `sqrt(2)`), so `<svec(A), svec(B)> == <A, B>_F`.

use std::f64::consts::SQRT_2;
use std::sync::Arc;

use nalgebra::{Cholesky, DMatrix, DVector, Dyn, SymmetricEigen};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::operators::LinearMap;

/// Relative asymmetry accepted by [`SymMatrix::new`] before symmetrizing.
const SYMMETRY_TOL: f64 = 1e-10;

#[derive(Clone, Debug, PartialEq)]
pub struct SymMatrix {
    data: DMatrix<f64>,
}

impl SymMatrix {
    /// Wraps a square matrix, rejecting it if it is not symmetric up to a
    /// small relative tolerance. The stored matrix is exactly symmetric.
    pub fn new(m: DMatrix<f64>) -> Result<Self> {
        let n = m.nrows();
        if n == 0 || m.ncols() != n {
            return Err(Error::Input(format!(
                "symmetric matrix must be square with n >= 1, got {}x{}",
                m.nrows(),
                m.ncols()
            )));
        }
        let scale = 1.0 + m.iter().filter(|v| v.is_finite()).fold(0.0f64, |a, v| a.max(v.abs()));
        let mut data = m;
        for j in 0..n {
            for i in 0..j {
                let (a, b) = (data[(i, j)], data[(j, i)]);
                if a.is_finite() && b.is_finite() {
                    if (a - b).abs() > SYMMETRY_TOL * scale {
                        return Err(Error::Input(format!(
                            "matrix is not symmetric at ({i},{j}): {a} vs {b}"
                        )));
                    }
                    let mid = 0.5 * (a + b);
                    data[(i, j)] = mid;
                    data[(j, i)] = mid;
                } else if a != b && !(a.is_nan() && b.is_nan()) {
                    return Err(Error::Input(format!(
                        "matrix is not symmetric at ({i},{j}): {a} vs {b}"
                    )));
                }
            }
        }
        Ok(Self { data })
    }

    /// Symmetrizes `(m + m^T) / 2` without checking.
    pub fn symmetrize(m: &DMatrix<f64>) -> Self {
        let data = (m + m.transpose()) * 0.5;
        Self { data }
    }

    pub fn zeros(n: usize) -> Self {
        Self {
            data: DMatrix::zeros(n, n),
        }
    }

    pub fn identity(n: usize) -> Self {
        Self {
            data: DMatrix::identity(n, n),
        }
    }

    pub fn from_diagonal(diag: &[f64]) -> Self {
        Self {
            data: DMatrix::from_diagonal(&DVector::from_column_slice(diag)),
        }
    }

    pub fn filled(n: usize, value: f64) -> Self {
        Self {
            data: DMatrix::from_element(n, n, value),
        }
    }

    /// Builds a matrix from a function of the upper triangle `(i <= j)`.
    pub fn from_upper_fn(n: usize, mut f: impl FnMut(usize, usize) -> f64) -> Self {
        let mut data = DMatrix::zeros(n, n);
        for j in 0..n {
            for i in 0..=j {
                let v = f(i, j);
                data[(i, j)] = v;
                data[(j, i)] = v;
            }
        }
        Self { data }
    }

    pub fn n(&self) -> usize {
        self.data.nrows()
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[(i, j)]
    }

    /// Sets entries `(i, j)` and `(j, i)`.
    pub fn set(&mut self, i: usize, j: usize, value: f64) {
        self.data[(i, j)] = value;
        self.data[(j, i)] = value;
    }

    pub fn as_matrix(&self) -> &DMatrix<f64> {
        &self.data
    }

    pub fn into_matrix(self) -> DMatrix<f64> {
        self.data
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn norm(&self) -> f64 {
        self.data.norm()
    }

    pub fn inner(&self, other: &SymMatrix) -> f64 {
        self.data.dot(&other.data)
    }

    pub fn trace(&self) -> f64 {
        self.data.trace()
    }

    pub fn scale(&self, s: f64) -> SymMatrix {
        Self {
            data: &self.data * s,
        }
    }

    pub fn add(&self, other: &SymMatrix) -> SymMatrix {
        Self {
            data: &self.data + &other.data,
        }
    }

    pub fn sub(&self, other: &SymMatrix) -> SymMatrix {
        Self {
            data: &self.data - &other.data,
        }
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> SymMatrix {
        Self {
            data: self.data.map(f),
        }
    }

    /// Isometric vectorization of the upper triangle.
    pub fn svec(&self) -> DVector<f64> {
        let n = self.n();
        let mut v = DVector::zeros(svec_dim(n));
        for j in 0..n {
            for i in 0..=j {
                let x = self.data[(i, j)];
                v[svec_index(i, j)] = if i == j { x } else { SQRT_2 * x };
            }
        }
        v
    }

    pub fn from_svec(n: usize, v: &DVector<f64>) -> Result<Self> {
        if v.len() != svec_dim(n) {
            return Err(Error::Input(format!(
                "svec length {} does not match order {n}",
                v.len()
            )));
        }
        Ok(Self::from_upper_fn(n, |i, j| {
            let x = v[svec_index(i, j)];
            if i == j {
                x
            } else {
                x / SQRT_2
            }
        }))
    }
}

/// Length of `svec` for order `n`.
pub fn svec_dim(n: usize) -> usize {
    n * (n + 1) / 2
}

/// Position of entry `(i, j)`, `i <= j`, inside `svec`.
pub fn svec_index(i: usize, j: usize) -> usize {
    let (i, j) = if i <= j { (i, j) } else { (j, i) };
    j * (j + 1) / 2 + i
}

/// Recovers the matrix order from an `svec` length.
pub fn svec_order(len: usize) -> Option<usize> {
    let n = ((((8 * len + 1) as f64).sqrt() - 1.0) / 2.0).round() as usize;
    (svec_dim(n) == len).then_some(n)
}

#[derive(Clone, Debug)]
pub struct EigenDecomposition {
    /// Descending.
    pub eigenvalues: DVector<f64>,
    /// Orthonormal eigenvectors stored as columns, matching `eigenvalues`.
    pub eigenvectors: DMatrix<f64>,
}

impl EigenDecomposition {
    /// `V diag(f(lambda)) V^T`.
    pub fn reconstruct_with(&self, f: impl Fn(f64) -> f64) -> SymMatrix {
        let n = self.eigenvalues.len();
        let mut scaled = self.eigenvectors.clone();
        for k in 0..n {
            let w = f(self.eigenvalues[k]);
            scaled.column_mut(k).scale_mut(w);
        }
        SymMatrix::symmetrize(&(scaled * self.eigenvectors.transpose()))
    }

    pub fn reconstruct(&self) -> SymMatrix {
        self.reconstruct_with(|l| l)
    }
}

/// Symmetric eigendecomposition with eigenvalues sorted in descending order.
///
/// Deterministic for a given input: implicit symmetric QR with no randomized
/// start.
pub fn sym_eig(m: &SymMatrix) -> Result<EigenDecomposition> {
    if !m.is_finite() {
        return Err(Error::Input(
            "eigendecomposition of a matrix with non-finite entries".into(),
        ));
    }
    let n = m.n();
    let eig = SymmetricEigen::try_new(m.as_matrix().clone(), f64::EPSILON, 10_000).ok_or_else(
        || {
            Error::Numerical(format!(
                "symmetric eigensolver did not converge (n = {n}, |M|_F = {:.3e})",
                m.norm()
            ))
        },
    )?;
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]));
    let eigenvalues = DVector::from_iterator(n, order.iter().map(|&k| eig.eigenvalues[k]));
    let mut eigenvectors = DMatrix::zeros(n, n);
    for (dst, &src) in order.iter().enumerate() {
        eigenvectors.set_column(dst, &eig.eigenvectors.column(src));
    }
    Ok(EigenDecomposition {
        eigenvalues,
        eigenvectors,
    })
}

/// Frobenius projection onto the PSD cone: eigenvalues clamped at exactly zero.
pub fn project_psd(m: &SymMatrix) -> Result<SymMatrix> {
    let eig = sym_eig(m)?;
    if eig.eigenvalues.iter().all(|&l| l >= 0.0) {
        return Ok(m.clone());
    }
    Ok(eig.reconstruct_with(|l| l.max(0.0)))
}

/// Entrywise box `L <= X <= U`; a missing side is unbounded. Individual
/// entries may also be infinite.
#[derive(Clone, Debug, PartialEq)]
pub struct BoxBounds {
    lower: Option<SymMatrix>,
    upper: Option<SymMatrix>,
    n: usize,
}

impl BoxBounds {
    pub fn new(n: usize, lower: Option<SymMatrix>, upper: Option<SymMatrix>) -> Result<Self> {
        for side in [&lower, &upper].into_iter().flatten() {
            if side.n() != n {
                return Err(Error::Input(format!(
                    "box bound has order {}, expected {n}",
                    side.n()
                )));
            }
        }
        if let (Some(l), Some(u)) = (&lower, &upper) {
            for j in 0..n {
                for i in 0..=j {
                    if l.get(i, j) > u.get(i, j) {
                        return Err(Error::Input(format!(
                            "box bound L > U at ({i},{j}): {} > {}",
                            l.get(i, j),
                            u.get(i, j)
                        )));
                    }
                }
            }
        }
        Ok(Self { lower, upper, n })
    }

    /// `{X : X >= 0}`.
    pub fn nonnegative(n: usize) -> Self {
        Self {
            lower: Some(SymMatrix::zeros(n)),
            upper: None,
            n,
        }
    }

    /// The whole space (no constraint).
    pub fn unbounded(n: usize) -> Self {
        Self {
            lower: None,
            upper: None,
            n,
        }
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn lower(&self, i: usize, j: usize) -> f64 {
        self.lower.as_ref().map_or(f64::NEG_INFINITY, |l| l.get(i, j))
    }

    pub fn upper(&self, i: usize, j: usize) -> f64 {
        self.upper.as_ref().map_or(f64::INFINITY, |u| u.get(i, j))
    }

    pub fn lower_matrix(&self) -> Option<&SymMatrix> {
        self.lower.as_ref()
    }

    pub fn upper_matrix(&self) -> Option<&SymMatrix> {
        self.upper.as_ref()
    }

    /// Support function `sup_{X in N} <W, X>`, `+inf` outside its domain.
    pub fn support(&self, w: &SymMatrix) -> f64 {
        let n = self.n;
        let mut total = 0.0;
        for j in 0..n {
            for i in 0..n {
                let c = w.get(i, j);
                let term = if c > 0.0 {
                    c * self.upper(i, j)
                } else if c < 0.0 {
                    c * self.lower(i, j)
                } else {
                    0.0
                };
                total += term;
            }
        }
        total
    }
}

/// Entrywise clamp into `[L, U]`.
pub fn project_box(m: &SymMatrix, bounds: &BoxBounds) -> Result<SymMatrix> {
    if m.n() != bounds.n() {
        return Err(Error::Input(format!(
            "box projection: matrix order {} vs bounds order {}",
            m.n(),
            bounds.n()
        )));
    }
    Ok(SymMatrix::from_upper_fn(m.n(), |i, j| {
        m.get(i, j).max(bounds.lower(i, j)).min(bounds.upper(i, j))
    }))
}

/// `M D^{-1} M^*` with `M` dense and `D` block diagonal, applied through
/// cached Cholesky factors. Blocks whose column of `M` vanishes carry no
/// factor.
#[derive(Clone, Debug)]
pub struct ComposedOperator {
    upper: DMatrix<f64>,
    offsets: Vec<usize>,
    factors: Vec<Option<Cholesky<f64, Dyn>>>,
}

impl ComposedOperator {
    pub(crate) fn new(
        upper: DMatrix<f64>,
        offsets: Vec<usize>,
        factors: Vec<Option<Cholesky<f64, Dyn>>>,
    ) -> Self {
        Self {
            upper,
            offsets,
            factors,
        }
    }

    pub fn dim(&self) -> usize {
        self.upper.nrows()
    }

    pub fn apply(&self, v: &DVector<f64>) -> DVector<f64> {
        let mut t = self.upper.tr_mul(v);
        for (k, factor) in self.factors.iter().enumerate() {
            let range = self.offsets[k]..self.offsets[k + 1];
            let mut seg = t.rows_mut(range.start, range.len());
            match factor {
                Some(chol) => {
                    let solved = chol.solve(&seg.clone_owned());
                    seg.copy_from(&solved);
                }
                None => seg.fill(0.0),
            }
        }
        &self.upper * t
    }

    pub fn to_dense(&self) -> DMatrix<f64> {
        let d = self.dim();
        let mut out = DMatrix::zeros(d, d);
        for j in 0..d {
            let mut e = DVector::zeros(d);
            e[j] = 1.0;
            out.set_column(j, &self.apply(&e));
        }
        (&out + out.transpose()) * 0.5
    }
}

/// Self-adjoint positive semidefinite linear operator on a flat vector space.
#[derive(Clone, Debug)]
pub enum WeightOperator {
    Zero(usize),
    ScaledIdentity { dim: usize, scale: f64 },
    Diagonal(DVector<f64>),
    Dense(DMatrix<f64>),
    Composed(Arc<ComposedOperator>),
    BlockDiagonal(Vec<WeightOperator>),
}

impl WeightOperator {
    pub fn identity(dim: usize) -> Self {
        WeightOperator::ScaledIdentity { dim, scale: 1.0 }
    }

    pub fn dim(&self) -> usize {
        match self {
            WeightOperator::Zero(d) => *d,
            WeightOperator::ScaledIdentity { dim, .. } => *dim,
            WeightOperator::Diagonal(d) => d.len(),
            WeightOperator::Dense(m) => m.nrows(),
            WeightOperator::Composed(c) => c.dim(),
            WeightOperator::BlockDiagonal(blocks) => blocks.iter().map(|b| b.dim()).sum(),
        }
    }

    pub fn apply(&self, v: &DVector<f64>) -> DVector<f64> {
        match self {
            WeightOperator::Zero(d) => DVector::zeros(*d),
            WeightOperator::ScaledIdentity { scale, .. } => v * *scale,
            WeightOperator::Diagonal(d) => v.component_mul(d),
            WeightOperator::Dense(m) => m * v,
            WeightOperator::Composed(c) => c.apply(v),
            WeightOperator::BlockDiagonal(blocks) => {
                let mut out = DVector::zeros(v.len());
                let mut off = 0;
                for b in blocks {
                    let d = b.dim();
                    let seg = b.apply(&v.rows(off, d).clone_owned());
                    out.rows_mut(off, d).copy_from(&seg);
                    off += d;
                }
                out
            }
        }
    }

    pub fn to_dense(&self) -> DMatrix<f64> {
        match self {
            WeightOperator::Zero(d) => DMatrix::zeros(*d, *d),
            WeightOperator::ScaledIdentity { dim, scale } => DMatrix::identity(*dim, *dim) * *scale,
            WeightOperator::Diagonal(d) => DMatrix::from_diagonal(d),
            WeightOperator::Dense(m) => m.clone(),
            WeightOperator::Composed(c) => c.to_dense(),
            WeightOperator::BlockDiagonal(blocks) => {
                let n = self.dim();
                let mut out = DMatrix::zeros(n, n);
                let mut off = 0;
                for b in blocks {
                    let d = b.dim();
                    out.view_mut((off, off), (d, d)).copy_from(&b.to_dense());
                    off += d;
                }
                out
            }
        }
    }

    pub fn is_zero(&self) -> bool {
        match self {
            WeightOperator::Zero(_) => true,
            WeightOperator::ScaledIdentity { scale, .. } => *scale == 0.0,
            WeightOperator::Diagonal(d) => d.iter().all(|&x| x == 0.0),
            WeightOperator::Dense(m) => m.iter().all(|&x| x == 0.0),
            WeightOperator::Composed(_) => false,
            WeightOperator::BlockDiagonal(blocks) => blocks.iter().all(|b| b.is_zero()),
        }
    }

    pub fn scaled(&self, s: f64) -> WeightOperator {
        match self {
            WeightOperator::Zero(d) => WeightOperator::Zero(*d),
            WeightOperator::ScaledIdentity { dim, scale } => WeightOperator::ScaledIdentity {
                dim: *dim,
                scale: scale * s,
            },
            WeightOperator::Diagonal(d) => WeightOperator::Diagonal(d * s),
            WeightOperator::BlockDiagonal(blocks) => {
                WeightOperator::BlockDiagonal(blocks.iter().map(|b| b.scaled(s)).collect())
            }
            other => WeightOperator::Dense(other.to_dense() * s),
        }
    }

    /// Sum of two operators on the same space; structure is kept where cheap.
    pub fn plus(&self, other: &WeightOperator) -> WeightOperator {
        use WeightOperator::*;
        match (self, other) {
            (Zero(_), b) => b.clone(),
            (a, Zero(_)) => a.clone(),
            (ScaledIdentity { dim, scale: a }, ScaledIdentity { scale: b, .. }) => ScaledIdentity {
                dim: *dim,
                scale: a + b,
            },
            (Diagonal(_) | ScaledIdentity { .. }, Diagonal(_) | ScaledIdentity { .. }) => {
                Diagonal(self.to_dense().diagonal() + other.to_dense().diagonal())
            }
            _ => Dense(self.to_dense() + other.to_dense()),
        }
    }

    /// The scalar `s` when the operator equals `s I` up to `rel_tol`.
    pub fn as_scaled_identity(&self, rel_tol: f64) -> Option<f64> {
        match self {
            WeightOperator::Zero(_) => Some(0.0),
            WeightOperator::ScaledIdentity { scale, .. } => Some(*scale),
            _ => {
                let diag = self.as_diagonal(rel_tol)?;
                let first = *diag.get(0)?;
                let scale = diag.iter().fold(0.0f64, |a, v| a.max(v.abs()));
                diag.iter()
                    .all(|&d| (d - first).abs() <= rel_tol * (1.0 + scale))
                    .then_some(first)
            }
        }
    }

    /// The diagonal when every off-diagonal entry is negligible.
    pub fn as_diagonal(&self, rel_tol: f64) -> Option<DVector<f64>> {
        match self {
            WeightOperator::Zero(d) => Some(DVector::zeros(*d)),
            WeightOperator::ScaledIdentity { dim, scale } => {
                Some(DVector::from_element(*dim, *scale))
            }
            WeightOperator::Diagonal(d) => Some(d.clone()),
            _ => {
                let m = self.to_dense();
                let scale = m.iter().fold(0.0f64, |a, v| a.max(v.abs()));
                let n = m.nrows();
                for j in 0..n {
                    for i in 0..n {
                        if i != j && m[(i, j)].abs() > rel_tol * (1.0 + scale) {
                            return None;
                        }
                    }
                }
                Some(m.diagonal())
            }
        }
    }

    /// Principal sub-block on `start..start + len`.
    pub fn restrict(&self, start: usize, len: usize) -> WeightOperator {
        match self {
            WeightOperator::Zero(_) => WeightOperator::Zero(len),
            WeightOperator::ScaledIdentity { scale, .. } => WeightOperator::ScaledIdentity {
                dim: len,
                scale: *scale,
            },
            WeightOperator::Diagonal(d) => WeightOperator::Diagonal(d.rows(start, len).into()),
            _ => {
                let m = self.to_dense();
                WeightOperator::Dense(m.view((start, start), (len, len)).into())
            }
        }
    }

    /// Largest absolute entry outside the given block-diagonal pattern.
    pub fn off_block_magnitude(&self, offsets: &[usize]) -> f64 {
        match self {
            WeightOperator::Zero(_)
            | WeightOperator::ScaledIdentity { .. }
            | WeightOperator::Diagonal(_) => 0.0,
            _ => {
                let m = self.to_dense();
                let block_of = |idx: usize| offsets.partition_point(|&o| o <= idx) - 1;
                let mut worst = 0.0f64;
                for j in 0..m.ncols() {
                    for i in 0..m.nrows() {
                        if block_of(i) != block_of(j) {
                            worst = worst.max(m[(i, j)].abs());
                        }
                    }
                }
                worst
            }
        }
    }

    /// Smallest sampled Rayleigh quotient `<v, G v> / |v|^2` over `samples`
    /// deterministic random directions.
    pub fn min_sampled_quadratic_form(&self, samples: usize, seed: u64) -> f64 {
        let d = self.dim();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut worst = f64::INFINITY;
        for _ in 0..samples {
            let v = DVector::from_fn(d, |_, _| rng.gen_range(-1.0..1.0));
            let nn = v.norm_squared();
            if nn == 0.0 {
                continue;
            }
            worst = worst.min(v.dot(&self.apply(&v)) / nn);
        }
        worst
    }
}

/// `<v, G v>`.
pub fn weighted_norm_sq(v: &DVector<f64>, g: &WeightOperator) -> Result<f64> {
    if v.len() != g.dim() {
        return Err(Error::Input(format!(
            "weighted norm: vector length {} vs operator dimension {}",
            v.len(),
            g.dim()
        )));
    }
    Ok(v.dot(&g.apply(v)))
}

const POWER_MAX_ITERS: usize = 200;
const POWER_TOL: f64 = 1e-8;

/// Power-method estimate of the operator norm `|A|`. Zero maps return 0.
pub fn spectral_norm_estimate(map: &dyn LinearMap) -> f64 {
    let d = map.in_dim();
    if d == 0 || map.out_dim() == 0 {
        return 0.0;
    }
    let mut rng = ChaCha8Rng::seed_from_u64(0x5eed);
    let mut v = DVector::from_fn(d, |_, _| rng.gen_range(0.5..1.5));
    v /= v.norm();
    let mut rq_prev = f64::NAN;
    let mut rq = 0.0;
    for _ in 0..POWER_MAX_ITERS {
        let av = map.apply(&v);
        rq = av.norm_squared();
        let w = map.adjoint(&av);
        let wn = w.norm();
        if wn == 0.0 || rq == 0.0 {
            return 0.0;
        }
        v = w / wn;
        if (rq - rq_prev).abs() <= POWER_TOL * rq {
            break;
        }
        rq_prev = rq;
    }
    // One more Rayleigh evaluation at the final direction.
    rq.max(map.apply(&v).norm_squared()).sqrt()
}
