//! Linear maps with adjoints, block-structured maps, and the semi-proximal
//! operators induced by symmetric Gauss-Seidel and Jacobi block schedules.

use std::fmt;
use std::sync::Arc;

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};

use crate::error::{Error, Result};
use crate::linalg::{sym_eig, ComposedOperator, SymMatrix, WeightOperator};

/// Linear map `X -> Y` together with its adjoint `Y -> X`.
pub trait LinearMap: Send + Sync + fmt::Debug {
    /// Dimension of the domain `X`.
    fn in_dim(&self) -> usize;
    /// Dimension of the codomain `Y`.
    fn out_dim(&self) -> usize;
    fn apply(&self, x: &DVector<f64>) -> DVector<f64>;
    fn adjoint(&self, y: &DVector<f64>) -> DVector<f64>;
}

/// Dense matrix `M`: `apply = M x`, `adjoint = M^T y`.
#[derive(Clone, Debug)]
pub struct DenseMap {
    matrix: DMatrix<f64>,
}

impl DenseMap {
    pub fn new(matrix: DMatrix<f64>) -> Self {
        Self { matrix }
    }

    /// Materializes any map column by column.
    pub fn from_map(map: &dyn LinearMap) -> Self {
        let (n, m) = (map.in_dim(), map.out_dim());
        let mut matrix = DMatrix::zeros(m, n);
        for j in 0..n {
            let mut e = DVector::zeros(n);
            e[j] = 1.0;
            matrix.set_column(j, &map.apply(&e));
        }
        Self { matrix }
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.matrix
    }
}

impl LinearMap for DenseMap {
    fn in_dim(&self) -> usize {
        self.matrix.ncols()
    }
    fn out_dim(&self) -> usize {
        self.matrix.nrows()
    }
    fn apply(&self, x: &DVector<f64>) -> DVector<f64> {
        &self.matrix * x
    }
    fn adjoint(&self, y: &DVector<f64>) -> DVector<f64> {
        self.matrix.tr_mul(y)
    }
}

/// `scale * I` on `R^dim`.
#[derive(Clone, Copy, Debug)]
pub struct ScaledIdentityMap {
    pub dim: usize,
    pub scale: f64,
}

impl ScaledIdentityMap {
    pub fn identity(dim: usize) -> Self {
        Self { dim, scale: 1.0 }
    }
}

impl LinearMap for ScaledIdentityMap {
    fn in_dim(&self) -> usize {
        self.dim
    }
    fn out_dim(&self) -> usize {
        self.dim
    }
    fn apply(&self, x: &DVector<f64>) -> DVector<f64> {
        x * self.scale
    }
    fn adjoint(&self, y: &DVector<f64>) -> DVector<f64> {
        y * self.scale
    }
}

/// Compressed sparse rows, with the transpose kept alongside for the adjoint.
#[derive(Clone, Debug)]
struct Csr {
    nrows: usize,
    row_ptr: Vec<usize>,
    col_idx: Vec<usize>,
    values: Vec<f64>,
}

impl Csr {
    fn from_sorted(nrows: usize, entries: &[(usize, usize, f64)]) -> Self {
        let mut row_ptr = vec![0usize; nrows + 1];
        for &(r, _, _) in entries {
            row_ptr[r + 1] += 1;
        }
        for r in 0..nrows {
            row_ptr[r + 1] += row_ptr[r];
        }
        Self {
            nrows,
            row_ptr,
            col_idx: entries.iter().map(|e| e.1).collect(),
            values: entries.iter().map(|e| e.2).collect(),
        }
    }

    fn mul(&self, x: &DVector<f64>) -> DVector<f64> {
        DVector::from_fn(self.nrows, |r, _| {
            (self.row_ptr[r]..self.row_ptr[r + 1])
                .map(|k| self.values[k] * x[self.col_idx[k]])
                .sum()
        })
    }
}

/// Sparse `m x n` matrix built from triplets; duplicates are summed.
#[derive(Clone, Debug)]
pub struct SparseMap {
    nrows: usize,
    ncols: usize,
    rows: Csr,
    cols: Csr,
}

impl SparseMap {
    pub fn from_triplets(nrows: usize, ncols: usize, triplets: &[(usize, usize, f64)]) -> Result<Self> {
        let mut entries: Vec<(usize, usize, f64)> = Vec::with_capacity(triplets.len());
        for &(r, c, v) in triplets {
            if r >= nrows || c >= ncols {
                return Err(Error::Input(format!(
                    "sparse entry ({r},{c}) outside {nrows}x{ncols}"
                )));
            }
            if !v.is_finite() {
                return Err(Error::Input(format!("non-finite sparse entry at ({r},{c})")));
            }
            entries.push((r, c, v));
        }
        entries.sort_by_key(|e| (e.0, e.1));
        entries.dedup_by(|next, kept| {
            if next.0 == kept.0 && next.1 == kept.1 {
                kept.2 += next.2;
                true
            } else {
                false
            }
        });
        entries.retain(|e| e.2 != 0.0);
        let rows = Csr::from_sorted(nrows, &entries);
        let mut t: Vec<(usize, usize, f64)> = entries.iter().map(|&(r, c, v)| (c, r, v)).collect();
        t.sort_by_key(|e| (e.0, e.1));
        let cols = Csr::from_sorted(ncols, &t);
        Ok(Self {
            nrows,
            ncols,
            rows,
            cols,
        })
    }

    pub fn nnz(&self) -> usize {
        self.rows.values.len()
    }

    /// Row `r` as `(column, value)` pairs.
    pub fn row(&self, r: usize) -> impl Iterator<Item = (usize, f64)> + '_ {
        (self.rows.row_ptr[r]..self.rows.row_ptr[r + 1])
            .map(move |k| (self.rows.col_idx[k], self.rows.values[k]))
    }

    pub fn scaled(&self, s: f64) -> SparseMap {
        let mut out = self.clone();
        out.rows.values.iter_mut().for_each(|v| *v *= s);
        out.cols.values.iter_mut().for_each(|v| *v *= s);
        out
    }
}

impl LinearMap for SparseMap {
    fn in_dim(&self) -> usize {
        self.ncols
    }
    fn out_dim(&self) -> usize {
        self.nrows
    }
    fn apply(&self, x: &DVector<f64>) -> DVector<f64> {
        self.rows.mul(x)
    }
    fn adjoint(&self, y: &DVector<f64>) -> DVector<f64> {
        self.cols.mul(y)
    }
}

/// Offsets of a product space `V_1 x ... x V_p` flattened into one vector.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct BlockLayout {
    offsets: Vec<usize>,
}

impl BlockLayout {
    pub fn new(dims: &[usize]) -> Self {
        let mut offsets = Vec::with_capacity(dims.len() + 1);
        offsets.push(0);
        for d in dims {
            offsets.push(offsets.last().unwrap() + d);
        }
        Self { offsets }
    }

    pub fn num_blocks(&self) -> usize {
        self.offsets.len() - 1
    }

    pub fn total(&self) -> usize {
        *self.offsets.last().unwrap()
    }

    pub fn dim(&self, i: usize) -> usize {
        self.offsets[i + 1] - self.offsets[i]
    }

    pub fn start(&self, i: usize) -> usize {
        self.offsets[i]
    }

    pub fn offsets(&self) -> &[usize] {
        &self.offsets
    }

    pub fn dims(&self) -> Vec<usize> {
        (0..self.num_blocks()).map(|i| self.dim(i)).collect()
    }

    pub fn block(&self, v: &DVector<f64>, i: usize) -> DVector<f64> {
        v.rows(self.offsets[i], self.dim(i)).clone_owned()
    }

    pub fn set_block(&self, v: &mut DVector<f64>, i: usize, value: &DVector<f64>) {
        v.rows_mut(self.offsets[i], self.dim(i)).copy_from(value);
    }

    pub fn concat(&self, parts: &[DVector<f64>]) -> DVector<f64> {
        let mut out = DVector::zeros(self.total());
        for (i, p) in parts.iter().enumerate() {
            self.set_block(&mut out, i, p);
        }
        out
    }
}

/// Block-structured map `A : X -> Y` with `X = X_1 x ... x X_r` (constraint
/// rows) and `Y = Y_1 x ... x Y_p`. Entry `(row, col)` maps `X_row -> Y_col`,
/// so `A^* y = sum_i A_i^* y_i` with `A_i` the `i`-th block column.
#[derive(Clone, Debug)]
pub struct BlockMap {
    rows: BlockLayout,
    cols: BlockLayout,
    /// `entries[col][row]`
    entries: Vec<Vec<Option<Arc<dyn LinearMap>>>>,
}

impl BlockMap {
    pub fn new(row_dims: &[usize], col_dims: &[usize]) -> Self {
        Self {
            rows: BlockLayout::new(row_dims),
            cols: BlockLayout::new(col_dims),
            entries: vec![vec![None; row_dims.len()]; col_dims.len()],
        }
    }

    /// Single-block wrapper around an arbitrary map.
    pub fn single(map: Arc<dyn LinearMap>) -> Self {
        let mut out = Self::new(&[map.in_dim()], &[map.out_dim()]);
        out.entries[0][0] = Some(map);
        out
    }

    pub fn set(&mut self, row: usize, col: usize, map: Arc<dyn LinearMap>) -> Result<()> {
        if map.in_dim() != self.rows.dim(row) || map.out_dim() != self.cols.dim(col) {
            return Err(Error::Input(format!(
                "block ({row},{col}) expects {}->{}, got {}->{}",
                self.rows.dim(row),
                self.cols.dim(col),
                map.in_dim(),
                map.out_dim()
            )));
        }
        self.entries[col][row] = Some(map);
        Ok(())
    }

    pub fn with(mut self, row: usize, col: usize, map: Arc<dyn LinearMap>) -> Result<Self> {
        self.set(row, col, map)?;
        Ok(self)
    }

    pub fn row_layout(&self) -> &BlockLayout {
        &self.rows
    }

    pub fn col_layout(&self) -> &BlockLayout {
        &self.cols
    }

    pub fn num_blocks(&self) -> usize {
        self.cols.num_blocks()
    }

    pub fn entry(&self, row: usize, col: usize) -> Option<&Arc<dyn LinearMap>> {
        self.entries[col][row].as_ref()
    }

    /// `A_i x`, the `i`-th block of `A x`.
    pub fn apply_block(&self, i: usize, x: &DVector<f64>) -> DVector<f64> {
        let mut out = DVector::zeros(self.cols.dim(i));
        for (r, entry) in self.entries[i].iter().enumerate() {
            if let Some(m) = entry {
                out += m.apply(&self.rows.block(x, r));
            }
        }
        out
    }

    /// `A_i^* y_i`.
    pub fn adjoint_block(&self, i: usize, yi: &DVector<f64>) -> DVector<f64> {
        let mut out = DVector::zeros(self.rows.total());
        self.add_adjoint_block(i, yi, &mut out);
        out
    }

    fn add_adjoint_block(&self, i: usize, yi: &DVector<f64>, out: &mut DVector<f64>) {
        for (r, entry) in self.entries[i].iter().enumerate() {
            if let Some(m) = entry {
                let start = self.rows.start(r);
                let d = self.rows.dim(r);
                let mut seg = out.rows_mut(start, d);
                seg += m.adjoint(yi);
            }
        }
    }

    /// Dense `A_i A_j^* : Y_j -> Y_i`.
    pub fn gram_block(&self, i: usize, j: usize) -> DMatrix<f64> {
        let (di, dj) = (self.cols.dim(i), self.cols.dim(j));
        let mut out = DMatrix::zeros(di, dj);
        for k in 0..dj {
            let mut e = DVector::zeros(dj);
            e[k] = 1.0;
            out.set_column(k, &self.apply_block(i, &self.adjoint_block(j, &e)));
        }
        out
    }

    /// Dense `A A^*` on `Y`.
    pub fn gram(&self) -> DMatrix<f64> {
        let n = self.cols.total();
        let mut out = DMatrix::zeros(n, n);
        for k in 0..n {
            let mut e = DVector::zeros(n);
            e[k] = 1.0;
            out.set_column(k, &self.apply(&self.adjoint(&e)));
        }
        (&out + out.transpose()) * 0.5
    }
}

impl LinearMap for BlockMap {
    fn in_dim(&self) -> usize {
        self.rows.total()
    }
    fn out_dim(&self) -> usize {
        self.cols.total()
    }
    fn apply(&self, x: &DVector<f64>) -> DVector<f64> {
        let parts: Vec<_> = (0..self.num_blocks()).map(|i| self.apply_block(i, x)).collect();
        self.cols.concat(&parts)
    }
    fn adjoint(&self, y: &DVector<f64>) -> DVector<f64> {
        let mut out = DVector::zeros(self.rows.total());
        for i in 0..self.num_blocks() {
            self.add_adjoint_block(i, &self.cols.block(y, i), &mut out);
        }
        out
    }
}

#[derive(Clone, Debug)]
pub struct SemiProximalPair {
    pub s: WeightOperator,
    pub t: WeightOperator,
}

impl SemiProximalPair {
    pub fn zero(y_dim: usize, z_dim: usize) -> Self {
        Self {
            s: WeightOperator::Zero(y_dim),
            t: WeightOperator::Zero(z_dim),
        }
    }

    pub fn is_zero(&self) -> bool {
        self.s.is_zero() && self.t.is_zero()
    }

    /// PSD check with slack `-1e-10 * (1 + scale)`.
    pub fn validate(&self) -> Result<()> {
        for (name, op) in [("S", &self.s), ("T", &self.t)] {
            if op.dim() == 0 {
                continue;
            }
            let dense = op.to_dense();
            let q = min_eigenvalue(&dense)?;
            if q < -1e-10 * (1.0 + dense.amax()) {
                return Err(Error::Config(format!(
                    "semi-proximal operator {name} is not positive semidefinite (min eigenvalue {q:.3e})"
                )));
            }
        }
        Ok(())
    }
}

/// Convex quadratic `1/2 <y, P y> + <l, y> + c0` over a block product space.
#[derive(Clone, Debug)]
pub struct BlockQuadratic {
    layout: BlockLayout,
    hessian: DMatrix<f64>,
    linear: DVector<f64>,
    constant: f64,
}

impl BlockQuadratic {
    pub fn new(
        layout: BlockLayout,
        hessian: DMatrix<f64>,
        linear: DVector<f64>,
        constant: f64,
    ) -> Result<Self> {
        let n = layout.total();
        if hessian.nrows() != n || hessian.ncols() != n || linear.len() != n {
            return Err(Error::Input(format!(
                "block quadratic dimensions disagree with layout total {n}"
            )));
        }
        let sym = SymMatrix::new(hessian)?;
        Ok(Self {
            layout,
            hessian: sym.into_matrix(),
            linear,
            constant,
        })
    }

    pub fn zero(layout: BlockLayout) -> Self {
        let n = layout.total();
        Self {
            layout,
            hessian: DMatrix::zeros(n, n),
            linear: DVector::zeros(n),
            constant: 0.0,
        }
    }

    /// Purely linear `<l, y>`.
    pub fn linear(layout: BlockLayout, linear: DVector<f64>) -> Result<Self> {
        let n = layout.total();
        Self::new(layout, DMatrix::zeros(n, n), linear, 0.0)
    }

    pub fn layout(&self) -> &BlockLayout {
        &self.layout
    }

    pub fn hessian(&self) -> &DMatrix<f64> {
        &self.hessian
    }

    pub fn linear_term(&self) -> &DVector<f64> {
        &self.linear
    }

    pub fn constant(&self) -> f64 {
        self.constant
    }

    pub fn block(&self, i: usize, j: usize) -> DMatrix<f64> {
        let l = &self.layout;
        self.hessian
            .view((l.start(i), l.start(j)), (l.dim(i), l.dim(j)))
            .clone_owned()
    }

    pub fn linear_block(&self, i: usize) -> DVector<f64> {
        self.layout.block(&self.linear, i)
    }

    pub fn has_coupling(&self) -> bool {
        let p = self.layout.num_blocks();
        (0..p).any(|i| (0..p).any(|j| i != j && self.block(i, j).iter().any(|&v| v != 0.0)))
    }

    pub fn eval(&self, y: &DVector<f64>) -> f64 {
        0.5 * y.dot(&(&self.hessian * y)) + self.linear.dot(y) + self.constant
    }
}

/// Smallest eigenvalue of the symmetric part; `+inf` for an empty matrix.
pub fn min_eigenvalue(m: &DMatrix<f64>) -> Result<f64> {
    if m.nrows() == 0 {
        return Ok(f64::INFINITY);
    }
    let eig = sym_eig(&SymMatrix::symmetrize(m))?;
    Ok(eig.eigenvalues[eig.eigenvalues.len() - 1])
}

/// Relative pivot floor for PD certification by Cholesky.
const PIVOT_TOL: f64 = 1e-12;

/// Cholesky factor, failing when the matrix is not numerically positive
/// definite.
pub fn certified_cholesky(m: &DMatrix<f64>, what: &str) -> Result<Cholesky<f64, Dyn>> {
    let scale = m.amax().max(f64::MIN_POSITIVE);
    let sym = (m + m.transpose()) * 0.5;
    let chol = Cholesky::new(sym).ok_or_else(|| {
        Error::Config(format!("{what} is not positive definite (Cholesky failed)"))
    })?;
    let l = chol.l_dirty();
    let min_pivot = (0..m.nrows()).map(|k| l[(k, k)] * l[(k, k)]).fold(f64::INFINITY, f64::min);
    if m.nrows() > 0 && min_pivot <= PIVOT_TOL * scale {
        return Err(Error::Config(format!(
            "{what} is not positive definite (pivot {min_pivot:.3e})"
        )));
    }
    Ok(chol)
}

/// Strictly upper block grid `M_ij`, `i < j`; missing blocks are zero.
pub type UpperBlocks = Vec<Vec<Option<DMatrix<f64>>>>;

/// Builds `S = M D^{-1} M^*` from block-diagonal `D = Diag(D_1..D_p)` and the
/// strictly upper block-triangular `M`. The first block column of `M` is
/// zero, so `D_1` is never inverted and is not factorized.
pub fn build_sgs_operator(diag: &[DMatrix<f64>], upper: &UpperBlocks) -> Result<WeightOperator> {
    let p = diag.len();
    let dims: Vec<usize> = diag.iter().map(|d| d.nrows()).collect();
    let layout = BlockLayout::new(&dims);
    let n = layout.total();
    if p <= 1 {
        return Ok(WeightOperator::Zero(n));
    }
    let mut m = DMatrix::zeros(n, n);
    for i in 0..p {
        for j in (i + 1)..p {
            if let Some(block) = upper.get(i).and_then(|row| row.get(j)).and_then(|b| b.as_ref()) {
                if block.nrows() != dims[i] || block.ncols() != dims[j] {
                    return Err(Error::Input(format!(
                        "M block ({i},{j}) is {}x{}, expected {}x{}",
                        block.nrows(),
                        block.ncols(),
                        dims[i],
                        dims[j]
                    )));
                }
                m.view_mut((layout.start(i), layout.start(j)), (dims[i], dims[j]))
                    .copy_from(block);
            }
        }
    }
    let mut factors = Vec::with_capacity(p);
    factors.push(None);
    for (k, d) in diag.iter().enumerate().skip(1) {
        let chol = certified_cholesky(d, &format!("diagonal block D_{}", k + 1))?;
        factors.push(Some(chol));
    }
    Ok(WeightOperator::Composed(Arc::new(ComposedOperator::new(
        m,
        layout.offsets().to_vec(),
        factors,
    ))))
}

/// `E_i = (tau1 * lambda_max(A_i A_i^*) + eps) I` with
/// `eps = 1e-8 (1 + lambda_max)`.
pub fn choose_default_jacobi_blocks(a: &BlockMap, tau1: f64) -> Result<Vec<WeightOperator>> {
    (0..a.num_blocks())
        .map(|i| {
            let g = a.gram_block(i, i);
            let lmax = if g.nrows() == 0 {
                0.0
            } else {
                sym_eig(&SymMatrix::symmetrize(&g))?.eigenvalues[0].max(0.0)
            };
            let eps = 1e-8 * (1.0 + lmax);
            Ok(WeightOperator::ScaledIdentity {
                dim: g.nrows(),
                scale: tau1 * lmax + eps,
            })
        })
        .collect()
}

fn check_dominance(blocks: &[WeightOperator], map: &BlockMap, tau: f64, what: &str) -> Result<()> {
    for (i, e) in blocks.iter().enumerate() {
        let g = map.gram_block(i, i);
        if e.dim() != g.nrows() {
            return Err(Error::Input(format!(
                "{what}_{} has dimension {}, block has {}",
                i + 1,
                e.dim(),
                g.nrows()
            )));
        }
        let scale = 1.0 + e.to_dense().amax() + tau * g.amax();
        let q = min_eigenvalue(&(e.to_dense() - &g * tau))?;
        if q < -1e-8 * scale {
            return Err(Error::Config(format!(
                "{what}_{} does not dominate tau * A_i A_i^* (min eigenvalue {q:.3e})",
                i + 1
            )));
        }
    }
    Ok(())
}

/// `sigma [ (1 + tau) Diag(blocks) - A A^* ]`, validated PSD.
fn jacobi_operator(
    blocks: &[WeightOperator],
    map: &BlockMap,
    tau: f64,
    sigma: f64,
    what: &str,
) -> Result<WeightOperator> {
    let diag = WeightOperator::BlockDiagonal(blocks.to_vec()).to_dense();
    let op = (diag * (1.0 + tau) - map.gram()) * sigma;
    let scale = 1.0 + op.amax();
    let w = WeightOperator::Dense((&op + op.transpose()) * 0.5);
    let q = min_eigenvalue(&op)?;
    if q < -1e-8 * scale {
        return Err(Error::Config(format!(
            "Jacobi operator {what} is not positive semidefinite (min eigenvalue {q:.3e})"
        )));
    }
    Ok(w)
}

/// `S = sigma[(1 + tau1) E - A A^*]`, `T = sigma[(1 + tau2) H - B B^*]`.
pub fn build_jacobi_pair(
    e: &[WeightOperator],
    h: &[WeightOperator],
    a: &BlockMap,
    b: &BlockMap,
    tau1: f64,
    tau2: f64,
    sigma: f64,
) -> Result<SemiProximalPair> {
    let (p, q) = (a.num_blocks(), b.num_blocks());
    if !(sigma > 0.0) {
        return Err(Error::Config(format!("sigma must be positive, got {sigma}")));
    }
    if tau1 < (p as f64 - 1.0) || tau2 < (q as f64 - 1.0) {
        return Err(Error::Config(format!(
            "Jacobi requires tau1 >= p-1 = {} and tau2 >= q-1 = {}, got {tau1}, {tau2}",
            p.saturating_sub(1),
            q.saturating_sub(1)
        )));
    }
    if e.len() != p || h.len() != q {
        return Err(Error::Input("one proximal block per variable block required".into()));
    }
    check_dominance(e, a, tau1, "E")?;
    check_dominance(h, b, tau2, "H")?;
    Ok(SemiProximalPair {
        s: jacobi_operator(e, a, tau1, sigma, "S")?,
        t: jacobi_operator(h, b, tau2, sigma, "T")?,
    })
}
