//! Multi-block realizations of the GADMM main step: symmetric Gauss-Seidel
//! sweeps and the full Jacobian (parallel) update. Both implement
//! [`Subproblems`], so the solver-core steps drive them unchanged.

use std::sync::Arc;

use nalgebra::{DMatrix, DVector};

use crate::blocks::{ConvexBlock, ProductBlock, ProxOracle, QuadraticBlock, ShiftedBlock};
use crate::error::{Error, Result};
use crate::exec::{map_collect, Execution};
use crate::linalg::WeightOperator;
use crate::operators::{
    build_jacobi_pair, build_sgs_operator, BlockMap, BlockQuadratic, LinearMap, SemiProximalPair,
    UpperBlocks,
};
use crate::solver::{gadmm_step, Constraint, IterateState, Subproblems, Triple, TwoBlockProblem};

/// One side (`y` or `z`) of a multi-block problem:
/// `f(y) = sum_i f_i(y_i) + f2(y)` coupled through `A^* y = sum_i A_i^* y_i`.
#[derive(Clone, Debug)]
pub struct MultiBlockSide {
    pub blocks: Vec<Arc<dyn ConvexBlock>>,
    pub coupling: BlockQuadratic,
    pub maps: BlockMap,
    /// Extra proximal weights `E_i` (unscaled; the step uses `sigma E_i`).
    pub extra: Vec<WeightOperator>,
}

impl MultiBlockSide {
    pub fn new(
        blocks: Vec<Arc<dyn ConvexBlock>>,
        coupling: BlockQuadratic,
        maps: BlockMap,
        extra: Vec<WeightOperator>,
    ) -> Result<Self> {
        let dims: Vec<usize> = blocks.iter().map(|b| b.dim()).collect();
        if maps.col_layout().dims() != dims || coupling.layout().dims() != dims {
            return Err(Error::Input(format!(
                "multi-block side: block dims {dims:?}, map blocks {:?}, coupling blocks {:?}",
                maps.col_layout().dims(),
                coupling.layout().dims()
            )));
        }
        if extra.len() != blocks.len() || extra.iter().zip(&dims).any(|(e, d)| e.dim() != *d) {
            return Err(Error::Input("one extra proximal weight per block required".into()));
        }
        Ok(Self {
            blocks,
            coupling,
            maps,
            extra,
        })
    }

    /// No coupling quadratic and no extra proximal terms.
    pub fn simple(blocks: Vec<Arc<dyn ConvexBlock>>, maps: BlockMap) -> Result<Self> {
        let layout = maps.col_layout().clone();
        let extra = layout.dims().into_iter().map(WeightOperator::Zero).collect();
        Self::new(blocks, BlockQuadratic::zero(layout), maps, extra)
    }

    pub fn num_blocks(&self) -> usize {
        self.blocks.len()
    }

    pub fn dim(&self) -> usize {
        self.maps.col_layout().total()
    }

    /// `sum_i f_i(y_i) + f2(y)`.
    pub fn eval(&self, y: &DVector<f64>) -> Result<f64> {
        let layout = self.maps.col_layout();
        let mut total = self.coupling.eval(y);
        for (i, b) in self.blocks.iter().enumerate() {
            total += b.eval(&layout.block(y, i))?;
        }
        Ok(total)
    }

    /// The whole side as a single convex block on `Y`.
    pub fn joint_block(&self) -> Result<Arc<dyn ConvexBlock>> {
        let layout = self.maps.col_layout();
        let quad: Option<Vec<_>> = self.blocks.iter().map(|b| b.quadratic_form()).collect();
        if let Some(parts) = quad {
            let mut p = self.coupling.hessian().clone();
            let mut l = self.coupling.linear_term().clone();
            for (i, (pi, li)) in parts.iter().enumerate() {
                let (s, d) = (layout.start(i), layout.dim(i));
                let mut view = p.view_mut((s, s), (d, d));
                view += pi;
                let mut seg = l.rows_mut(s, d);
                seg += li;
            }
            return Ok(Arc::new(QuadraticBlock::new(p, l)?));
        }
        if self.coupling.hessian().iter().any(|&v| v != 0.0) {
            return Err(Error::Unsupported(
                "joint block of nonsmooth blocks with a quadratic coupling".into(),
            ));
        }
        let product: Arc<dyn ConvexBlock> = Arc::new(ProductBlock::new(self.blocks.clone()));
        if self.coupling.linear_term().iter().all(|&v| v == 0.0) {
            Ok(product)
        } else {
            Ok(Arc::new(ShiftedBlock::new(product, self.coupling.linear_term().clone())?))
        }
    }

    fn own_hessian(&self, i: usize) -> DMatrix<f64> {
        let d = self.maps.col_layout().dim(i);
        self.blocks[i]
            .quadratic_form()
            .map(|(p, _)| p)
            .unwrap_or_else(|| DMatrix::zeros(d, d))
    }

    /// Gradient of the coupling excluding block `i`'s own diagonal term:
    /// `sum_{j != i} P_ij y_j + l_i`.
    fn coupling_offset(&self, y: &DVector<f64>, i: usize) -> DVector<f64> {
        let layout = self.maps.col_layout();
        let (s, d) = (layout.start(i), layout.dim(i));
        let h = self.coupling.hessian();
        let mut g = self.coupling.linear_block(i);
        if d > 0 && y.len() > 0 {
            g += h.rows(s, d) * y - h.view((s, s), (d, d)) * y.rows(s, d);
        }
        g
    }
}

#[derive(Clone, Debug)]
pub struct MultiBlockProblem {
    pub y_side: MultiBlockSide,
    pub z_side: MultiBlockSide,
    pub c: DVector<f64>,
}

impl MultiBlockProblem {
    pub fn new(y_side: MultiBlockSide, z_side: MultiBlockSide, c: DVector<f64>) -> Result<Self> {
        for (name, side) in [("y", &y_side), ("z", &z_side)] {
            if side.maps.in_dim() != c.len() {
                return Err(Error::Input(format!(
                    "{name}-side maps act on dimension {}, c has length {}",
                    side.maps.in_dim(),
                    c.len()
                )));
            }
        }
        Ok(Self { y_side, z_side, c })
    }

    pub fn constraint(&self) -> Constraint {
        Constraint {
            a: Arc::new(self.y_side.maps.clone()),
            b: Arc::new(self.z_side.maps.clone()),
            c: self.c.clone(),
        }
    }

    /// The same problem with each side collapsed into one block.
    pub fn to_two_block(&self) -> Result<TwoBlockProblem> {
        TwoBlockProblem::new(
            self.y_side.joint_block()?,
            self.z_side.joint_block()?,
            self.constraint(),
        )
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SweepPhase {
    Backward,
    Exact,
    Forward,
}

impl std::fmt::Display for SweepPhase {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            SweepPhase::Backward => "backward sweep",
            SweepPhase::Exact => "exact solve",
            SweepPhase::Forward => "forward sweep",
        })
    }
}

/// Block-solve order of one sweep, for schedule checks.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct SweepTrace {
    pub events: Vec<(SweepPhase, usize)>,
}

/// Per-block oracles and the data needed to assemble block right-hand sides.
struct SideCache {
    oracles: Vec<Box<dyn ProxOracle>>,
    unit: Vec<Box<dyn ProxOracle>>,
}

/// Per-block weight of a sweep: `P_ii + sigma A_i A_i^* + sigma E_i` (block 1
/// takes no extra term).
fn sgs_weight(side: &MultiBlockSide, i: usize, sigma: f64) -> WeightOperator {
    let mut w = WeightOperator::Dense(side.coupling.block(i, i) + side.maps.gram_block(i, i) * sigma);
    if i > 0 {
        w = w.plus(&side.extra[i].scaled(sigma));
    }
    structured(w)
}

/// Recovers scaled-identity or diagonal structure lost in dense sums.
fn structured(w: WeightOperator) -> WeightOperator {
    if let Some(s) = w.as_scaled_identity(0.0) {
        return WeightOperator::ScaledIdentity { dim: w.dim(), scale: s };
    }
    if let Some(d) = w.as_diagonal(0.0) {
        return WeightOperator::Diagonal(d);
    }
    match w {
        WeightOperator::Dense(m) => WeightOperator::Dense((&m + m.transpose()) * 0.5),
        other => other,
    }
}

fn unit_oracles(side: &MultiBlockSide) -> Result<Vec<Box<dyn ProxOracle>>> {
    side.blocks
        .iter()
        .enumerate()
        .map(|(i, b)| {
            b.prox_oracle(&WeightOperator::identity(b.dim()))
                .map_err(|e| e.context(format!("block {}", i + 1)))
        })
        .collect()
}

/// Normalized block-wise KKT residual of one side: for each block,
/// `|y_i - prox_{f_i}(y_i + (A x)_i - grad_i f2(y))|`.
fn side_kkt(side: &MultiBlockSide, unit: &[Box<dyn ProxOracle>], x: &DVector<f64>, y: &DVector<f64>) -> Result<f64> {
    let layout = side.maps.col_layout();
    let ax = side.maps.apply(x);
    let grad = side.coupling.hessian() * y + side.coupling.linear_term();
    let v = &ax - grad;
    let mut sq = 0.0;
    for (i, o) in unit.iter().enumerate() {
        let yi = layout.block(y, i);
        let p = o.solve(&(&yi + layout.block(&v, i)))?;
        sq += (yi - p).norm_squared();
    }
    Ok(sq.sqrt() / (1.0 + y.norm() + ax.norm()))
}

/// Algorithm-1 subproblems realized by symmetric Gauss-Seidel block sweeps.
pub struct SgsSubproblems {
    problem: MultiBlockProblem,
    constraint: Constraint,
    sigma: f64,
    y_cache: SideCache,
    z_cache: SideCache,
}

impl SgsSubproblems {
    pub fn new(problem: MultiBlockProblem, sigma: f64) -> Result<Self> {
        for (name, side) in [("y", &problem.y_side), ("z", &problem.z_side)] {
            if side.extra.first().is_some_and(|e| !e.is_zero()) {
                return Err(Error::Config(format!(
                    "{name}-side block 1 takes no extra proximal term; E_1 must be zero"
                )));
            }
        }
        let constraint = problem.constraint();
        let y_cache = Self::cache(&problem.y_side, sigma)?;
        let z_cache = Self::cache(&problem.z_side, sigma)?;
        Ok(Self {
            problem,
            constraint,
            sigma,
            y_cache,
            z_cache,
        })
    }

    fn cache(side: &MultiBlockSide, sigma: f64) -> Result<SideCache> {
        if !(sigma > 0.0) {
            return Err(Error::Config(format!("sigma must be positive, got {sigma}")));
        }
        let oracles = (0..side.num_blocks())
            .map(|i| {
                side.blocks[i]
                    .prox_oracle(&sgs_weight(side, i, sigma))
                    .map_err(|e| e.context(format!("block {}", i + 1)))
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(SideCache {
            oracles,
            unit: unit_oracles(side)?,
        })
    }

    pub fn problem(&self) -> &MultiBlockProblem {
        &self.problem
    }

    /// `sigma (Diag(E) + M D^{-1} M^*)` for one side, with
    /// `M_ij = sigma^{-1} P_ij + A_i A_j^*` and
    /// `D_i = E_i + sigma^{-1}(P_ii + H_i) + A_i A_i^*`, `H_i` the Hessian of a
    /// quadratic `f_i`.
    pub fn induced_operator(side: &MultiBlockSide, sigma: f64) -> Result<WeightOperator> {
        let p = side.num_blocks();
        let mut diag = Vec::with_capacity(p);
        let mut upper: UpperBlocks = vec![vec![None; p]; p];
        for i in 0..p {
            let mut d = side.maps.gram_block(i, i) + (side.coupling.block(i, i) + side.own_hessian(i)) / sigma;
            if i > 0 {
                d += side.extra[i].to_dense();
            }
            diag.push(d);
            for j in (i + 1)..p {
                upper[i][j] = Some(side.coupling.block(i, j) / sigma + side.maps.gram_block(i, j));
            }
        }
        let mdm = build_sgs_operator(&diag, &upper)?;
        let e = WeightOperator::BlockDiagonal(side.extra.clone());
        Ok(WeightOperator::Dense((mdm.to_dense() + e.to_dense()) * sigma))
    }

    /// Backward sweep `i = p..2`, exact solve of block 1, forward sweep
    /// `i = 2..p`, each block minimizing
    /// `f_i + f2 - <x, A_i^* y_i> + sigma/2 |A^* y + offset|^2 + sigma/2 |y_i - center_i|^2_{E_i}`.
    fn sweep(
        side: &MultiBlockSide,
        cache: &SideCache,
        sigma: f64,
        x: &DVector<f64>,
        offset: &DVector<f64>,
        center: &DVector<f64>,
        mut trace: Option<&mut SweepTrace>,
    ) -> Result<DVector<f64>> {
        let p = side.num_blocks();
        let layout = side.maps.col_layout();
        let mut y = center.clone();
        let mut ay = side.maps.adjoint(&y);
        let ax: Vec<DVector<f64>> = (0..p).map(|i| side.maps.apply_block(i, x)).collect();
        let mut solve = |i: usize, phase: SweepPhase, y: &mut DVector<f64>, ay: &mut DVector<f64>| -> Result<()> {
            let old = layout.block(y, i);
            let others = &*ay - side.maps.adjoint_block(i, &old) + offset;
            let mut q = &ax[i] - side.maps.apply_block(i, &others) * sigma - side.coupling_offset(y, i);
            if i > 0 {
                q += side.extra[i].apply(&layout.block(center, i)) * sigma;
            }
            let new = cache.oracles[i]
                .solve(&q)
                .map_err(|e| e.context(format!("block {} ({phase})", i + 1)))?;
            *ay += side.maps.adjoint_block(i, &(&new - &old));
            layout.set_block(y, i, &new);
            if let Some(t) = trace.as_deref_mut() {
                t.events.push((phase, i + 1));
            }
            Ok(())
        };
        for i in (1..p).rev() {
            solve(i, SweepPhase::Backward, &mut y, &mut ay)?;
        }
        if p > 0 {
            solve(0, SweepPhase::Exact, &mut y, &mut ay)?;
        }
        for i in 1..p {
            solve(i, SweepPhase::Forward, &mut y, &mut ay)?;
        }
        Ok(y)
    }

    /// y-update of the main step from `(x~, y~, z~)`.
    pub fn sgs_y_sweep(
        &self,
        x_tilde: &DVector<f64>,
        y_tilde: &DVector<f64>,
        z_tilde: &DVector<f64>,
        trace: Option<&mut SweepTrace>,
    ) -> Result<DVector<f64>> {
        let offset = self.constraint.b_star(z_tilde) - &self.problem.c;
        Self::sweep(&self.problem.y_side, &self.y_cache, self.sigma, x_tilde, &offset, y_tilde, trace)
    }

    /// z-update of the main step from `(x, y, z~)`.
    pub fn sgs_z_sweep(
        &self,
        x: &DVector<f64>,
        y: &DVector<f64>,
        z_tilde: &DVector<f64>,
        trace: Option<&mut SweepTrace>,
    ) -> Result<DVector<f64>> {
        let offset = self.constraint.a_star(y) - &self.problem.c;
        Self::sweep(&self.problem.z_side, &self.z_cache, self.sigma, x, &offset, z_tilde, trace)
    }
}

impl Subproblems for SgsSubproblems {
    fn constraint(&self) -> &Constraint {
        &self.constraint
    }
    fn sigma(&self) -> f64 {
        self.sigma
    }
    fn set_sigma(&mut self, sigma: f64) -> Result<()> {
        self.y_cache = Self::cache(&self.problem.y_side, sigma)?;
        self.z_cache = Self::cache(&self.problem.z_side, sigma)?;
        self.sigma = sigma;
        Ok(())
    }
    fn proximal(&self) -> Result<SemiProximalPair> {
        Ok(SemiProximalPair {
            s: Self::induced_operator(&self.problem.y_side, self.sigma)?,
            t: Self::induced_operator(&self.problem.z_side, self.sigma)?,
        })
    }
    fn solve_y(&self, x: &DVector<f64>, offset: &DVector<f64>, center: &DVector<f64>) -> Result<DVector<f64>> {
        Self::sweep(&self.problem.y_side, &self.y_cache, self.sigma, x, offset, center, None)
    }
    fn solve_z(&self, x: &DVector<f64>, offset: &DVector<f64>, center: &DVector<f64>) -> Result<DVector<f64>> {
        Self::sweep(&self.problem.z_side, &self.z_cache, self.sigma, x, offset, center, None)
    }
    fn objective(&self, y: &DVector<f64>, z: &DVector<f64>) -> Result<f64> {
        Ok(self.problem.y_side.eval(y)? + self.problem.z_side.eval(z)?)
    }
    fn kkt_residual(&self, w: &Triple) -> Result<f64> {
        let ry = side_kkt(&self.problem.y_side, &self.y_cache.unit, &w.x, &w.y)?;
        let rz = side_kkt(&self.problem.z_side, &self.z_cache.unit, &w.x, &w.z)?;
        let rp = self.constraint.residual(&w.y, &w.z).norm() / (1.0 + self.problem.c.norm());
        Ok(rp.max(ry).max(rz))
    }
}

/// Algorithm 2: sGS y-sweep, multiplier step, sGS z-sweep, relaxation.
pub fn sgs_main_step(sub: &SgsSubproblems, rho: f64, state: &IterateState) -> Result<IterateState> {
    gadmm_step(sub, rho, state)
}

/// Settings of the full Jacobian update.
#[derive(Clone, Debug)]
pub struct JacobiSettings {
    pub tau1: f64,
    pub tau2: f64,
    /// `E_i` for the y-blocks.
    pub e: Vec<WeightOperator>,
    /// `H_j` for the z-blocks.
    pub h: Vec<WeightOperator>,
    pub execution: Execution,
}

/// Algorithm-1 subproblems realized by independent block solves from `w~`.
/// Block `i` carries the proximal weight `sigma[(1+tau1) E_i - A_i A_i^*]`,
/// so the step is Algorithm 1 with `S = sigma[(1+tau1) E - A A^*]`.
pub struct JacobiSubproblems {
    problem: MultiBlockProblem,
    constraint: Constraint,
    settings: JacobiSettings,
    sigma: f64,
    y_oracles: Vec<Box<dyn ProxOracle>>,
    z_oracles: Vec<Box<dyn ProxOracle>>,
    y_unit: Vec<Box<dyn ProxOracle>>,
    z_unit: Vec<Box<dyn ProxOracle>>,
}

impl JacobiSubproblems {
    pub fn new(problem: MultiBlockProblem, settings: JacobiSettings, sigma: f64) -> Result<Self> {
        for (name, side) in [("y", &problem.y_side), ("z", &problem.z_side)] {
            if side.coupling.has_coupling() {
                return Err(Error::Config(format!(
                    "{name}-side coupling quadratic is not block diagonal; use the sGS step"
                )));
            }
        }
        // Validates tau bounds, dominance and PSD of the induced pair.
        build_jacobi_pair(
            &settings.e,
            &settings.h,
            &problem.y_side.maps,
            &problem.z_side.maps,
            settings.tau1,
            settings.tau2,
            sigma,
        )?;
        let constraint = problem.constraint();
        let y_oracles = Self::oracles(&problem.y_side, &settings.e, settings.tau1, sigma)?;
        let z_oracles = Self::oracles(&problem.z_side, &settings.h, settings.tau2, sigma)?;
        let y_unit = unit_oracles(&problem.y_side)?;
        let z_unit = unit_oracles(&problem.z_side)?;
        Ok(Self {
            problem,
            constraint,
            settings,
            sigma,
            y_oracles,
            z_oracles,
            y_unit,
            z_unit,
        })
    }

    fn oracles(side: &MultiBlockSide, e: &[WeightOperator], tau: f64, sigma: f64) -> Result<Vec<Box<dyn ProxOracle>>> {
        (0..side.num_blocks())
            .map(|i| {
                let w = WeightOperator::Dense(side.coupling.block(i, i)).plus(&e[i].scaled(sigma * (1.0 + tau)));
                side.blocks[i]
                    .prox_oracle(&structured(w))
                    .map_err(|err| err.context(format!("block {}", i + 1)))
            })
            .collect()
    }

    pub fn problem(&self) -> &MultiBlockProblem {
        &self.problem
    }

    pub fn set_execution(&mut self, execution: Execution) {
        self.settings.execution = execution;
    }

    /// Visits the blocks in `order`; the result does not depend on it.
    #[allow(clippy::too_many_arguments)]
    fn parallel_solve(
        side: &MultiBlockSide,
        oracles: &[Box<dyn ProxOracle>],
        e: &[WeightOperator],
        tau: f64,
        sigma: f64,
        execution: Execution,
        order: &[usize],
        x: &DVector<f64>,
        offset: &DVector<f64>,
        center: &DVector<f64>,
    ) -> Result<DVector<f64>> {
        let layout = side.maps.col_layout();
        let r = side.maps.adjoint(center) + offset;
        let solved = map_collect(execution, order, |&i| {
            let ci = layout.block(center, i);
            let q = side.maps.apply_block(i, x) - side.maps.apply_block(i, &r) * sigma
                - side.coupling.linear_block(i)
                + e[i].apply(&ci) * (sigma * (1.0 + tau));
            oracles[i]
                .solve(&q)
                .map(|v| (i, v))
                .map_err(|err| err.context(format!("block {}", i + 1)))
        });
        let mut y = DVector::zeros(layout.total());
        for item in solved {
            let (i, v) = item?;
            layout.set_block(&mut y, i, &v);
        }
        Ok(y)
    }

    /// The y-update with the blocks visited in `order` (a permutation).
    pub fn solve_y_ordered(
        &self,
        order: &[usize],
        x: &DVector<f64>,
        offset: &DVector<f64>,
        center: &DVector<f64>,
    ) -> Result<DVector<f64>> {
        Self::parallel_solve(
            &self.problem.y_side,
            &self.y_oracles,
            &self.settings.e,
            self.settings.tau1,
            self.sigma,
            self.settings.execution,
            order,
            x,
            offset,
            center,
        )
    }
}

impl Subproblems for JacobiSubproblems {
    fn constraint(&self) -> &Constraint {
        &self.constraint
    }
    fn sigma(&self) -> f64 {
        self.sigma
    }
    fn set_sigma(&mut self, sigma: f64) -> Result<()> {
        self.y_oracles = Self::oracles(&self.problem.y_side, &self.settings.e, self.settings.tau1, sigma)?;
        self.z_oracles = Self::oracles(&self.problem.z_side, &self.settings.h, self.settings.tau2, sigma)?;
        self.sigma = sigma;
        Ok(())
    }
    fn proximal(&self) -> Result<SemiProximalPair> {
        build_jacobi_pair(
            &self.settings.e,
            &self.settings.h,
            &self.problem.y_side.maps,
            &self.problem.z_side.maps,
            self.settings.tau1,
            self.settings.tau2,
            self.sigma,
        )
    }
    fn solve_y(&self, x: &DVector<f64>, offset: &DVector<f64>, center: &DVector<f64>) -> Result<DVector<f64>> {
        let order: Vec<usize> = (0..self.problem.y_side.num_blocks()).collect();
        self.solve_y_ordered(&order, x, offset, center)
    }
    fn solve_z(&self, x: &DVector<f64>, offset: &DVector<f64>, center: &DVector<f64>) -> Result<DVector<f64>> {
        let order: Vec<usize> = (0..self.problem.z_side.num_blocks()).collect();
        Self::parallel_solve(
            &self.problem.z_side,
            &self.z_oracles,
            &self.settings.h,
            self.settings.tau2,
            self.sigma,
            self.settings.execution,
            &order,
            x,
            offset,
            center,
        )
    }
    fn objective(&self, y: &DVector<f64>, z: &DVector<f64>) -> Result<f64> {
        Ok(self.problem.y_side.eval(y)? + self.problem.z_side.eval(z)?)
    }
    fn kkt_residual(&self, w: &Triple) -> Result<f64> {
        let ry = side_kkt(&self.problem.y_side, &self.y_unit, &w.x, &w.y)?;
        let rz = side_kkt(&self.problem.z_side, &self.z_unit, &w.x, &w.z)?;
        let rp = self.constraint.residual(&w.y, &w.z).norm() / (1.0 + self.problem.c.norm());
        Ok(rp.max(ry).max(rz))
    }
}

/// The full Jacobian main step followed by relaxation.
pub fn jacobi_step(sub: &JacobiSubproblems, rho: f64, state: &IterateState) -> Result<IterateState> {
    gadmm_step(sub, rho, state)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::blocks::{ScalarTerm, SeparableBlock};
    use crate::operators::{BlockLayout, DenseMap, ScaledIdentityMap};
    use crate::solver::ExplicitOperators;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn rand_mat(r: usize, c: usize, rng: &mut ChaCha8Rng) -> DMatrix<f64> {
        DMatrix::from_fn(r, c, |_, _| rng.gen_range(-1.0..1.0))
    }

    fn quad_side(dims: &[usize], x_dim: usize, rng: &mut ChaCha8Rng) -> MultiBlockSide {
        let layout = BlockLayout::new(dims);
        let n = layout.total();
        let g = rand_mat(n, n, rng);
        let p = &g * g.transpose() * 0.3;
        let coupling =
            BlockQuadratic::new(layout, p, DVector::from_fn(n, |_, _| rng.gen_range(-1.0..1.0)), 0.0).unwrap();
        let mut maps = BlockMap::new(&[x_dim], dims);
        let mut blocks: Vec<Arc<dyn ConvexBlock>> = Vec::new();
        for (i, &d) in dims.iter().enumerate() {
            maps.set(0, i, Arc::new(DenseMap::new(rand_mat(d, x_dim, rng)))).unwrap();
            blocks.push(Arc::new(QuadraticBlock::new(DMatrix::identity(d, d) * 0.5, DVector::zeros(d)).unwrap()));
        }
        let extra = dims
            .iter()
            .enumerate()
            .map(|(i, &d)| if i == 0 { WeightOperator::Zero(d) } else { WeightOperator::identity(d).scaled(0.1) })
            .collect();
        MultiBlockSide::new(blocks, coupling, maps, extra).unwrap()
    }

    #[test]
    fn sgs_schedule_order() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let prob = MultiBlockProblem::new(
            quad_side(&[2, 1, 3], 4, &mut rng),
            quad_side(&[2], 4, &mut rng),
            DVector::zeros(4),
        )
        .unwrap();
        let sub = SgsSubproblems::new(prob, 1.0).unwrap();
        let mut trace = SweepTrace::default();
        sub.sgs_y_sweep(&DVector::zeros(4), &DVector::zeros(6), &DVector::zeros(2), Some(&mut trace))
            .unwrap();
        use SweepPhase::*;
        assert_eq!(
            trace.events,
            vec![(Backward, 3), (Backward, 2), (Exact, 1), (Forward, 2), (Forward, 3)]
        );
        let mut single = SweepTrace::default();
        sub.sgs_z_sweep(&DVector::zeros(4), &DVector::zeros(6), &DVector::zeros(2), Some(&mut single))
            .unwrap();
        assert_eq!(single.events, vec![(Exact, 1)]);
    }

    #[test]
    fn sgs_matches_explicit_operator_path() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let prob = MultiBlockProblem::new(
            quad_side(&[2, 3, 1], 5, &mut rng),
            quad_side(&[2, 2], 5, &mut rng),
            DVector::from_fn(5, |_, _| rng.gen_range(-1.0..1.0)),
        )
        .unwrap();
        let sigma = 1.3;
        let sgs = SgsSubproblems::new(prob.clone(), sigma).unwrap();
        let explicit = ExplicitOperators::new(prob.to_two_block().unwrap(), sgs.proximal().unwrap(), sigma).unwrap();
        let mut a = IterateState::zeros(sgs.constraint());
        let mut b = a.clone();
        for _ in 0..25 {
            a = sgs_main_step(&sgs, 1.6, &a).unwrap();
            b = gadmm_step(&explicit, 1.6, &b).unwrap();
            assert!(a.w.max_deviation(&b.w) < 1e-10);
        }
    }

    #[test]
    fn sgs_rejects_extra_term_on_first_block() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut side = quad_side(&[2, 2], 3, &mut rng);
        side.extra[0] = WeightOperator::identity(2);
        let prob = MultiBlockProblem::new(side, quad_side(&[1], 3, &mut rng), DVector::zeros(3)).unwrap();
        assert!(matches!(SgsSubproblems::new(prob, 1.0), Err(Error::Config(_))));
    }

    fn separable_side(dims: &[usize], x_dim: usize, rng: &mut ChaCha8Rng) -> MultiBlockSide {
        let mut maps = BlockMap::new(&[x_dim], dims);
        let mut blocks: Vec<Arc<dyn ConvexBlock>> = Vec::new();
        for (i, &d) in dims.iter().enumerate() {
            maps.set(0, i, Arc::new(DenseMap::new(rand_mat(d, x_dim, rng)))).unwrap();
            let term = [ScalarTerm::Abs(0.3), ScalarTerm::Nonneg, ScalarTerm::Interval(-0.5, 0.5)][i % 3];
            blocks.push(Arc::new(SeparableBlock::plain(term, d)));
        }
        MultiBlockSide::simple(blocks, maps).unwrap()
    }

    #[test]
    fn jacobi_matches_explicit_and_is_order_free() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let prob = MultiBlockProblem::new(
            separable_side(&[2, 3, 2], 4, &mut rng),
            separable_side(&[3], 4, &mut rng),
            DVector::from_fn(4, |_, _| rng.gen_range(-1.0..1.0)),
        )
        .unwrap();
        let e = crate::operators::choose_default_jacobi_blocks(&prob.y_side.maps, 2.0).unwrap();
        let h = crate::operators::choose_default_jacobi_blocks(&prob.z_side.maps, 1.0).unwrap();
        let settings = JacobiSettings {
            tau1: 2.0,
            tau2: 1.0,
            e,
            h,
            execution: Execution::Parallel,
        };
        let sigma = 0.8;
        let jac = JacobiSubproblems::new(prob.clone(), settings, sigma).unwrap();
        let explicit = ExplicitOperators::new(prob.to_two_block().unwrap(), jac.proximal().unwrap(), sigma).unwrap();
        let mut a = IterateState::zeros(jac.constraint());
        let mut b = a.clone();
        for _ in 0..25 {
            a = jacobi_step(&jac, 1.5, &a).unwrap();
            b = gadmm_step(&explicit, 1.5, &b).unwrap();
            assert!(a.w.max_deviation(&b.w) < 1e-10);
        }
        let x = DVector::from_fn(4, |_, _| rng.gen_range(-1.0..1.0));
        let off = DVector::from_fn(4, |_, _| rng.gen_range(-1.0..1.0));
        let ctr = DVector::from_fn(7, |_, _| rng.gen_range(-1.0..1.0));
        let fwd = jac.solve_y_ordered(&[0, 1, 2], &x, &off, &ctr).unwrap();
        let rev = jac.solve_y_ordered(&[2, 0, 1], &x, &off, &ctr).unwrap();
        assert_eq!(fwd, rev);
    }

    #[test]
    fn jacobi_single_block_is_plain_gadmm() {
        let id: Arc<dyn LinearMap> = Arc::new(ScaledIdentityMap::identity(2));
        let side = |l: f64| {
            let blk: Arc<dyn ConvexBlock> =
                Arc::new(QuadraticBlock::new(DMatrix::identity(2, 2), DVector::from_element(2, l)).unwrap());
            MultiBlockSide::simple(vec![blk], BlockMap::single(id.clone())).unwrap()
        };
        let prob = MultiBlockProblem::new(side(1.0), side(-1.0), DVector::from_element(2, 1.0)).unwrap();
        let settings = JacobiSettings {
            tau1: 0.0,
            tau2: 0.0,
            e: vec![WeightOperator::identity(2)],
            h: vec![WeightOperator::identity(2)],
            execution: Execution::Sequential,
        };
        let jac = JacobiSubproblems::new(prob.clone(), settings, 1.0).unwrap();
        let plain = ExplicitOperators::plain(prob.to_two_block().unwrap(), 1.0).unwrap();
        let mut a = IterateState::zeros(jac.constraint());
        let mut b = a.clone();
        for _ in 0..10 {
            a = jacobi_step(&jac, 1.2, &a).unwrap();
            b = gadmm_step(&plain, 1.2, &b).unwrap();
            assert!(a.w.max_deviation(&b.w) < 1e-14);
        }
    }

    #[test]
    fn jacobi_rejects_small_tau() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let prob = MultiBlockProblem::new(
            separable_side(&[1, 1, 1], 3, &mut rng),
            separable_side(&[2], 3, &mut rng),
            DVector::zeros(3),
        )
        .unwrap();
        let settings = JacobiSettings {
            tau1: 1.0,
            tau2: 0.0,
            e: crate::operators::choose_default_jacobi_blocks(&prob.y_side.maps, 1.0).unwrap(),
            h: crate::operators::choose_default_jacobi_blocks(&prob.z_side.maps, 0.0).unwrap(),
            execution: Execution::Sequential,
        };
        assert!(matches!(JacobiSubproblems::new(prob, settings, 1.0), Err(Error::Config(_))));
    }
}
