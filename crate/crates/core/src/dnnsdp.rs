//! Doubly non-negative SDPs
//!
//! ```text
//! min <C, X>  s.t.  A_E X = b_E,  A_I X >= b_I,  X in S^n_+ and N
//! ```
//!
//! solved through the dual with a slack `v` for the inequalities:
//! `y = (S, y_E, y_I)`, `z = (Z, v)`, rows `Z + S + A_E^* y_E + A_I^* y_I = C`
//! and `alpha (v - y_I) = 0`. Matrices live in `svec` coordinates.

use std::sync::Arc;

use nalgebra::{Cholesky, DVector, Dyn};
use serde::{Deserialize, Serialize};

use crate::blocks::{BoxSupportBlock, ConvexBlock, PsdConeBlock, QuadraticBlock, ScalarTerm, SeparableBlock};
use crate::error::{Error, Result};
use crate::linalg::{project_box, project_psd, spectral_norm_estimate, svec_dim, BoxBounds, SymMatrix, WeightOperator};
use crate::multiblock::{MultiBlockProblem, MultiBlockSide, SgsSubproblems};
use crate::operators::{
    certified_cholesky, BlockMap, BlockQuadratic, DenseMap, LinearMap, ScaledIdentityMap, SparseMap,
};
use crate::solver::{run, ConvergenceReport, IterateState, Method, RunHooks, SolverConfig, Triple};

/// Linear map `S^n -> R^m`, `X -> (<A_k, X>)_k`, stored as rows of `svec(A_k)`.
///
/// Entries `(i, j, v)` set `A_ij = A_ji = v`; repeated entries add.
pub fn sym_constraint_map(n: usize, rows: &[Vec<(usize, usize, f64)>]) -> Result<SparseMap> {
    let mut triplets = Vec::new();
    for (k, row) in rows.iter().enumerate() {
        for &(i, j, v) in row {
            if i >= n || j >= n {
                return Err(Error::Input(format!(
                    "constraint {}: entry ({i},{j}) outside order {n}",
                    k + 1
                )));
            }
            let (i, j) = (i.min(j), i.max(j));
            let coef = if i == j { v } else { v * std::f64::consts::SQRT_2 };
            triplets.push((k, crate::linalg::svec_index(i, j), coef));
        }
    }
    SparseMap::from_triplets(rows.len(), svec_dim(n), &triplets)
}

/// `A_k` of a constraint map as a matrix.
pub fn constraint_matrix(map: &SparseMap, k: usize, n: usize) -> Result<SymMatrix> {
    let mut v = DVector::zeros(svec_dim(n));
    for (c, val) in map.row(k) {
        v[c] = val;
    }
    SymMatrix::from_svec(n, &v)
}

#[derive(Clone, Debug)]
pub struct DnnSdpProblem {
    pub c: SymMatrix,
    pub a_e: SparseMap,
    pub b_e: DVector<f64>,
    pub a_i: SparseMap,
    pub b_i: DVector<f64>,
    pub bounds: Arc<BoxBounds>,
}

impl DnnSdpProblem {
    pub fn new(
        c: SymMatrix,
        a_e: SparseMap,
        b_e: DVector<f64>,
        a_i: SparseMap,
        b_i: DVector<f64>,
        bounds: BoxBounds,
    ) -> Result<Self> {
        let d = svec_dim(c.n());
        for (name, map, rhs) in [("A_E", &a_e, &b_e), ("A_I", &a_i, &b_i)] {
            if map.in_dim() != d {
                return Err(Error::Input(format!(
                    "{name} acts on svec dimension {}, C has order {} (svec {d})",
                    map.in_dim(),
                    c.n()
                )));
            }
            if map.out_dim() != rhs.len() {
                return Err(Error::Input(format!(
                    "{name} has {} rows but the right-hand side has {}",
                    map.out_dim(),
                    rhs.len()
                )));
            }
        }
        if bounds.n() != c.n() {
            return Err(Error::Input(format!("box has order {}, C has order {}", bounds.n(), c.n())));
        }
        Ok(Self {
            c,
            a_e,
            b_e,
            a_i,
            b_i,
            bounds: Arc::new(bounds),
        })
    }

    /// Equality constraints only, `N = {X >= 0}`.
    pub fn equality(c: SymMatrix, a_e: SparseMap, b_e: DVector<f64>) -> Result<Self> {
        let n = c.n();
        let a_i = SparseMap::from_triplets(0, svec_dim(n), &[])?;
        Self::new(c, a_e, b_e, a_i, DVector::zeros(0), BoxBounds::nonnegative(n))
    }

    pub fn n(&self) -> usize {
        self.c.n()
    }
    pub fn m_e(&self) -> usize {
        self.b_e.len()
    }
    pub fn m_i(&self) -> usize {
        self.b_i.len()
    }

    pub fn primal_objective(&self, x: &SymMatrix) -> f64 {
        self.c.inner(x)
    }

    /// `-delta*_N(-Z) + <b_E, y_E> + <b_I, y_I>`.
    pub fn dual_objective(&self, it: &DualIterate) -> f64 {
        -self.bounds.support(&it.z.scale(-1.0)) + self.b_e.dot(&it.y_e) + self.b_i.dot(&it.y_i)
    }
}

/// Dual variables, slack and the recovered primal multipliers.
#[derive(Clone, Debug, PartialEq)]
pub struct DualIterate {
    pub z: SymMatrix,
    pub s: SymMatrix,
    pub y_e: DVector<f64>,
    pub y_i: DVector<f64>,
    pub v: DVector<f64>,
    pub x: SymMatrix,
    pub u: DVector<f64>,
}

impl DualIterate {
    /// Reads `(S, y_E, y_I)`, `(Z, v)` and `X = -x_1`, `u = -x_2` from a
    /// solver triple laid out as in [`build_dual_multiblock`].
    pub fn from_triple(p: &DnnSdpProblem, w: &Triple) -> Result<Self> {
        let (n, sv, me, mi) = (p.n(), svec_dim(p.n()), p.m_e(), p.m_i());
        Ok(Self {
            s: SymMatrix::from_svec(n, &w.y.rows(0, sv).clone_owned())?,
            y_e: w.y.rows(sv, me).clone_owned(),
            y_i: w.y.rows(sv + me, mi).clone_owned(),
            z: SymMatrix::from_svec(n, &w.z.rows(0, sv).clone_owned())?,
            v: w.z.rows(sv, mi).clone_owned(),
            x: SymMatrix::from_svec(n, &(-w.x.rows(0, sv)))?,
            u: -w.x.rows(sv, mi),
        })
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct ResidualSet {
    pub eta_d: f64,
    pub eta_x: f64,
    pub eta_z: f64,
    pub eta_p: f64,
    pub eta_s: f64,
    pub eta_i: f64,
    pub eta_sdp: f64,
}

/// `alpha = sqrt(|A_I|) / 2` with `|A_I|` the spectral norm.
pub fn choose_alpha(p: &DnnSdpProblem) -> Result<f64> {
    if p.m_i() == 0 {
        return Err(Error::Unsupported("alpha scales the slack row, which needs inequality constraints".into()));
    }
    Ok(spectral_norm_estimate(&p.a_i).sqrt() / 2.0)
}

/// Cholesky factor of `A_E A_E^* + eps I`.
pub struct GramFactor {
    chol: Cholesky<f64, Dyn>,
}

pub fn factor_gram(a_e: &SparseMap, eps: f64) -> Result<GramFactor> {
    let m = DenseMap::from_map(a_e).matrix().clone();
    let gram = &m * m.transpose() + nalgebra::DMatrix::identity(m.nrows(), m.nrows()) * eps;
    let chol = certified_cholesky(&gram, "A_E A_E^*").map_err(|e| match e {
        Error::Config(msg) => Error::Config(format!(
            "{msg}; the y_E block needs a proximal term E = eps I (eps > 0) for a rank-deficient A_E"
        )),
        other => other,
    })?;
    Ok(GramFactor { chol })
}

/// Exact solve of the `y_E` block system.
pub fn solve_block_ye(rhs: &DVector<f64>, factor: &GramFactor) -> DVector<f64> {
    if rhs.is_empty() {
        return rhs.clone();
    }
    factor.chol.solve(rhs)
}

/// The dual of the DNN-SDP as a multi-block problem with `y = (S, y_E, y_I)`
/// and `z = (Z, v)`. Without inequalities the `y_I`, `v` blocks and the slack
/// row are dropped.
pub fn build_dual_multiblock(p: &DnnSdpProblem, alpha: f64) -> Result<MultiBlockProblem> {
    if !(alpha > 0.0 && alpha.is_finite()) {
        return Err(Error::Config(format!("alpha must be positive, got {alpha}")));
    }
    let (n, sv, me, mi) = (p.n(), svec_dim(p.n()), p.m_e(), p.m_i());
    let ineq = mi > 0;
    let rows: Vec<usize> = if ineq { vec![sv, mi] } else { vec![sv] };

    let id: Arc<dyn LinearMap> = Arc::new(ScaledIdentityMap::identity(sv));
    let a_e: Arc<dyn LinearMap> = Arc::new(p.a_e.clone());
    let mut y_dims = vec![sv, me];
    let mut y_blocks: Vec<Arc<dyn ConvexBlock>> = vec![
        Arc::new(PsdConeBlock::new(n)),
        Arc::new(QuadraticBlock::linear(-&p.b_e)),
    ];
    let mut y_extra = vec![WeightOperator::Zero(sv), WeightOperator::Zero(me)];
    if me > 0 && factor_gram(&p.a_e, 0.0).is_err() {
        let m = DenseMap::from_map(&p.a_e).matrix().clone();
        let eps = 1e-8 * (1.0 + (&m * m.transpose()).norm());
        y_extra[1] = WeightOperator::ScaledIdentity { dim: me, scale: eps };
    }
    if ineq {
        y_dims.push(mi);
        y_blocks.push(Arc::new(QuadraticBlock::linear(-&p.b_i)));
        y_extra.push(WeightOperator::Zero(mi));
    }
    let mut y_maps = BlockMap::new(&rows, &y_dims).with(0, 0, id.clone())?.with(0, 1, a_e)?;
    if ineq {
        y_maps.set(0, 2, Arc::new(p.a_i.clone()))?;
        y_maps.set(1, 2, Arc::new(ScaledIdentityMap { dim: mi, scale: -alpha }))?;
    }

    let mut z_dims = vec![sv];
    let mut z_blocks: Vec<Arc<dyn ConvexBlock>> = vec![Arc::new(BoxSupportBlock::new(p.bounds.clone()))];
    let mut z_maps_entries: Vec<(usize, usize, Arc<dyn LinearMap>)> = vec![(0, 0, id)];
    if ineq {
        z_dims.push(mi);
        z_blocks.push(Arc::new(SeparableBlock::plain(ScalarTerm::Nonneg, mi)));
        z_maps_entries.push((1, 1, Arc::new(ScaledIdentityMap { dim: mi, scale: alpha })));
    }
    let mut z_maps = BlockMap::new(&rows, &z_dims);
    for (r, c, m) in z_maps_entries {
        z_maps.set(r, c, m)?;
    }

    let y_layout = y_maps.col_layout().clone();
    let y_side = MultiBlockSide::new(y_blocks, BlockQuadratic::zero(y_layout), y_maps, y_extra)?;
    let z_side = MultiBlockSide::simple(z_blocks, z_maps)?;
    let mut c = p.c.svec();
    if ineq {
        c = DVector::from_iterator(sv + mi, c.iter().copied().chain(std::iter::repeat(0.0).take(mi)));
    }
    MultiBlockProblem::new(y_side, z_side, c)
}

/// The six normalized residuals of a candidate `(X, Z, S, y_E, y_I)` and
/// their maximum. Without inequalities `eta_I = 0` and `eta_D` has no `A_I^*`
/// term.
pub fn kkt_residuals(p: &DnnSdpProblem, it: &DualIterate) -> Result<ResidualSet> {
    let x = &it.x;
    let xn = x.norm();
    let dual = p.a_e.adjoint(&it.y_e) + p.a_i.adjoint(&it.y_i) + it.s.svec() + it.z.svec() - p.c.svec();
    let eta_d = dual.norm() / (1.0 + p.c.norm());
    let eta_x = x.sub(&project_box(x, &p.bounds)?).norm() / (1.0 + xn);
    let eta_z = x.sub(&project_box(&x.sub(&it.z), &p.bounds)?).norm() / (1.0 + xn + it.z.norm());
    let xs = x.svec();
    let eta_p = (p.a_e.apply(&xs) - &p.b_e).norm() / (1.0 + p.b_e.norm());
    let eta_s = (x.sub(&project_psd(x)?).norm() / (1.0 + xn))
        .max(x.inner(&it.s).abs() / (1.0 + xn + it.s.norm()));
    let eta_i = if p.m_i() == 0 {
        0.0
    } else {
        let slack = p.a_i.apply(&xs) - &p.b_i;
        let yi_norm = it.y_i.norm();
        let neg_y = it.y_i.map(|v| v.min(0.0)).norm() / (1.0 + yi_norm);
        let neg_slack = slack.map(|v| v.min(0.0)).norm() / (1.0 + p.b_i.norm());
        let comp = slack.dot(&it.y_i).abs() / (1.0 + slack.norm() + yi_norm);
        neg_y.max(neg_slack).max(comp)
    };
    let eta_sdp = [eta_d, eta_x, eta_z, eta_p, eta_s, eta_i].into_iter().fold(0.0, f64::max);
    Ok(ResidualSet {
        eta_d,
        eta_x,
        eta_z,
        eta_p,
        eta_s,
        eta_i,
        eta_sdp,
    })
}

#[derive(Clone, Debug, Default)]
pub struct DnnSdpOptions {
    pub solver: SolverConfig,
    /// Overrides `choose_alpha` when set.
    pub alpha: Option<f64>,
}

#[derive(Clone, Debug)]
pub struct DnnSdpSolution {
    pub iterate: DualIterate,
    pub residuals: ResidualSet,
    pub report: ConvergenceReport,
    pub primal_objective: f64,
    pub dual_objective: f64,
    pub alpha: f64,
}

/// Runs the sGS realization of `method` on the dual until `eta_SDP < tol`.
pub fn solve_dnnsdp(p: &DnnSdpProblem, method: Method, options: &DnnSdpOptions) -> Result<DnnSdpSolution> {
    let alpha = match options.alpha {
        Some(a) => a,
        None if p.m_i() > 0 => choose_alpha(p)?,
        None => 1.0,
    };
    let problem = build_dual_multiblock(p, alpha)?;
    let mut sub = SgsSubproblems::new(problem, options.solver.sigma)?;
    let init = IterateState::zeros(crate::solver::Subproblems::constraint(&sub));
    let hooks = RunHooks {
        metric: Some(Box::new(|s: &IterateState| {
            Ok(kkt_residuals(p, &DualIterate::from_triple(p, &s.w)?)?.eta_sdp)
        })),
        ..Default::default()
    };
    let (state, report) = run(&mut sub, &options.solver, method, init, hooks)?;
    let iterate = DualIterate::from_triple(p, &state.w)?;
    let residuals = kkt_residuals(p, &iterate)?;
    Ok(DnnSdpSolution {
        primal_objective: p.primal_objective(&iterate.x),
        dual_objective: p.dual_objective(&iterate),
        iterate,
        residuals,
        report,
        alpha,
    })
}
