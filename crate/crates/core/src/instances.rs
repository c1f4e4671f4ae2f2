//! Instance generation and file formats: BIQ relaxations, random DNN-SDPs,
//! quadratic two-block problems with a known saddle point, the BIQ text
//! format, single-block SDPA sparse files and JSON snapshots.

use std::fmt::Write as _;
use std::path::Path;
use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::blocks::QuadraticBlock;
use crate::dnnsdp::{constraint_matrix, sym_constraint_map, DnnSdpProblem};
use crate::error::{Error, Result};
use crate::linalg::{svec_dim, BoxBounds, SymMatrix};
use crate::operators::{DenseMap, LinearMap, SparseMap};
use crate::solver::{Constraint, TwoBlockProblem, Triple};

/// `min 1/2 x^T Q x + c^T x` over `x in {0,1}^n_vars`.
#[derive(Clone, Debug, PartialEq)]
pub struct BiqData {
    pub n_vars: usize,
    pub q: DMatrix<f64>,
    pub c: DVector<f64>,
}

impl BiqData {
    pub fn new(q: DMatrix<f64>, c: DVector<f64>) -> Result<Self> {
        let n = c.len();
        if q.shape() != (n, n) {
            return Err(Error::Input(format!("Q is {}x{}, c has length {n}", q.nrows(), q.ncols())));
        }
        if (&q - q.transpose()).amax() > 0.0 {
            return Err(Error::Input("Q is not symmetric".into()));
        }
        Ok(Self { n_vars: n, q, c })
    }

    pub fn objective(&self, x: &DVector<f64>) -> f64 {
        0.5 * x.dot(&(&self.q * x)) + self.c.dot(x)
    }

    /// Minimum over all binary vectors, by enumeration.
    pub fn binary_optimum(&self) -> Result<(f64, DVector<f64>)> {
        if self.n_vars > 24 {
            return Err(Error::Unsupported(format!(
                "enumeration over 2^{} binary vectors",
                self.n_vars
            )));
        }
        let mut best = (f64::INFINITY, DVector::zeros(self.n_vars));
        for mask in 0u32..(1u32 << self.n_vars) {
            let x = binary_vector(self.n_vars, mask);
            let v = self.objective(&x);
            if v < best.0 {
                best = (v, x);
            }
        }
        Ok(best)
    }
}

pub fn binary_vector(n: usize, mask: u32) -> DVector<f64> {
    DVector::from_fn(n, |i, _| ((mask >> i) & 1) as f64)
}

/// Pairs `(i, j)` covered by the triangle cuts.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CutRange {
    /// `i < j`, `j = 2..n-1` with `n` the order of `X`: every pair of variables.
    #[default]
    AllPairs,
    /// The same range read with `n` the number of variables: pairs with
    /// `j < n_vars`, leaving out the last variable.
    ExcludeLast,
    /// No cuts.
    None,
}

impl std::str::FromStr for CutRange {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "all" | "all-pairs" => Ok(CutRange::AllPairs),
            "exclude-last" => Ok(CutRange::ExcludeLast),
            "none" => Ok(CutRange::None),
            other => Err(Error::Input(format!("unknown cut range '{other}'"))),
        }
    }
}

/// `X = [[Xbar, x], [x^T, 1]]` of order `n_vars + 1` with
/// `<C, X> = 1/2 <Q, Xbar> + <c, x>`, `diag(Xbar) = x`, `X_nn = 1`, the
/// triangle cuts over `cuts`, `X >= 0`.
pub fn biq_to_dnnsdp(b: &BiqData, cuts: CutRange) -> Result<DnnSdpProblem> {
    let nv = b.n_vars;
    if nv < 2 {
        return Err(Error::Input(format!("BIQ relaxation needs at least 2 variables, got {nv}")));
    }
    let n = nv + 1;
    let last = nv;
    let c = SymMatrix::from_upper_fn(n, |i, j| {
        if j == last {
            if i == last {
                0.0
            } else {
                0.5 * b.c[i]
            }
        } else {
            0.5 * b.q[(i, j)]
        }
    });
    let mut eq: Vec<Vec<(usize, usize, f64)>> = (0..nv).map(|i| vec![(i, i, 1.0), (i, last, -0.5)]).collect();
    eq.push(vec![(last, last, 1.0)]);
    let mut b_e = DVector::zeros(nv + 1);
    b_e[nv] = 1.0;

    let jmax = match cuts {
        CutRange::AllPairs => nv,
        CutRange::ExcludeLast => nv - 1,
        CutRange::None => 0,
    };
    let mut ineq = Vec::new();
    let mut b_i = Vec::new();
    for j in 1..jmax {
        for i in 0..j {
            ineq.push(vec![(i, last, 0.5), (i, j, -0.5)]);
            b_i.push(0.0);
            ineq.push(vec![(j, last, 0.5), (i, j, -0.5)]);
            b_i.push(0.0);
            ineq.push(vec![(i, j, 0.5), (i, last, -0.5), (j, last, -0.5)]);
            b_i.push(-1.0);
        }
    }
    DnnSdpProblem::new(
        c,
        sym_constraint_map(n, &eq)?,
        b_e,
        sym_constraint_map(n, &ineq)?,
        DVector::from_vec(b_i),
        BoxBounds::nonnegative(n),
    )
}

/// `[x; 1][x; 1]^T`.
pub fn binary_embed(x: &DVector<f64>) -> SymMatrix {
    let n = x.len() + 1;
    let v = DVector::from_fn(n, |i, _| if i < x.len() { x[i] } else { 1.0 });
    SymMatrix::symmetrize(&(&v * v.transpose()))
}

/// BIQ text: header `n m`, then `m` lines `i j value` (1-indexed). Diagonal
/// entries are linear costs, off-diagonal entries set `Q_ij = Q_ji`.
pub fn parse_biq(text: &str) -> Result<BiqData> {
    let mut lines = text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty());
    let (hl, header) = lines.next().ok_or_else(|| Error::parse(1, "missing header 'n m'"))?;
    let head = fields(header);
    if head.len() != 2 {
        return Err(Error::parse(hl + 1, "header must be 'n m'"));
    }
    let n: usize = parse_num(head[0], hl + 1, "variable count")?;
    let m: usize = parse_num(head[1], hl + 1, "entry count")?;
    let mut q = DMatrix::zeros(n, n);
    let mut c = DVector::zeros(n);
    let mut count = 0;
    for (ln, line) in lines {
        let f = fields(line);
        if f.len() != 3 {
            return Err(Error::parse(ln + 1, format!("expected 'i j value', got '{}'", line.trim())));
        }
        let i: usize = parse_num(f[0], ln + 1, "row index")?;
        let j: usize = parse_num(f[1], ln + 1, "column index")?;
        let v: f64 = parse_num(f[2], ln + 1, "value")?;
        if i == 0 || j == 0 || i > n || j > n {
            return Err(Error::parse(ln + 1, format!("index ({i},{j}) outside 1..={n}")));
        }
        if !v.is_finite() {
            return Err(Error::parse(ln + 1, "non-finite value"));
        }
        let (i, j) = (i - 1, j - 1);
        if i == j {
            c[i] += v;
        } else {
            q[(i, j)] += v;
            q[(j, i)] += v;
        }
        count += 1;
    }
    if count != m {
        return Err(Error::parse(hl + 1, format!("header announces {m} entries, found {count}")));
    }
    BiqData::new(q, c)
}

pub fn read_biq_file(path: impl AsRef<Path>) -> Result<BiqData> {
    parse_biq(&std::fs::read_to_string(path)?)
}

pub fn format_biq(b: &BiqData) -> String {
    let mut entries = Vec::new();
    for i in 0..b.n_vars {
        if b.c[i] != 0.0 {
            entries.push((i, i, b.c[i]));
        }
        for j in (i + 1)..b.n_vars {
            if b.q[(i, j)] != 0.0 {
                entries.push((i, j, b.q[(i, j)]));
            }
        }
    }
    let mut out = format!("{} {}\n", b.n_vars, entries.len());
    for (i, j, v) in entries {
        let _ = writeln!(out, "{} {} {v:?}", i + 1, j + 1);
    }
    out
}

pub fn write_biq(path: impl AsRef<Path>, b: &BiqData) -> Result<()> {
    std::fs::write(path, format_biq(b))?;
    Ok(())
}

/// Random `Q`, `c` with integer entries in `-range..=range`.
pub fn gen_random_biq(n_vars: usize, range: i32, seed: u64) -> BiqData {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut q = DMatrix::zeros(n_vars, n_vars);
    for j in 0..n_vars {
        for i in 0..j {
            let v = rng.gen_range(-range..=range) as f64;
            q[(i, j)] = v;
            q[(j, i)] = v;
        }
    }
    let c = DVector::from_fn(n_vars, |_, _| rng.gen_range(-range..=range) as f64);
    BiqData { n_vars, q, c }
}

fn fields(line: &str) -> Vec<&str> {
    line.split(|ch: char| ch.is_whitespace() || ch == ',' || ch == '{' || ch == '}' || ch == '(' || ch == ')')
        .filter(|s| !s.is_empty())
        .collect()
}

fn parse_num<T: std::str::FromStr>(s: &str, line: usize, what: &str) -> Result<T> {
    s.parse().map_err(|_| Error::parse(line, format!("invalid {what} '{s}'")))
}

/// Single-block SDPA sparse (`.dat-s`) text, read as
/// `min <C, X> s.t. <F_k, X> = c_k, X psd` with `C = -F_0`. With
/// `nonnegative`, `X >= 0` is added; otherwise the box is the whole space.
pub fn parse_sdpa_sparse(text: &str, nonnegative: bool) -> Result<DnnSdpProblem> {
    let mut lines = text
        .lines()
        .enumerate()
        .filter(|(_, l)| {
            let t = l.trim_start();
            !t.is_empty() && !t.starts_with('"') && !t.starts_with('*')
        })
        .map(|(i, l)| (i + 1, l));
    let mut next = |what: &str| lines.next().ok_or_else(|| Error::parse(0, format!("unexpected end of file, expected {what}")));

    let (ln, l) = next("constraint count")?;
    let m: usize = parse_num(first_field(l, ln)?, ln, "constraint count")?;
    if m == 0 {
        return Err(Error::parse(ln, "empty constraint list"));
    }
    let (ln, l) = next("block count")?;
    let nblocks: usize = parse_num(first_field(l, ln)?, ln, "block count")?;
    if nblocks != 1 {
        return Err(Error::Unsupported(format!(
            "SDPA files with {nblocks} blocks (only a single semidefinite block is read)"
        )));
    }
    let (ln, l) = next("block sizes")?;
    let size: i64 = parse_num(first_field(l, ln)?, ln, "block size")?;
    if size <= 0 {
        return Err(Error::Unsupported("diagonal (LP) blocks".into()));
    }
    let n = size as usize;

    let (mut ln, l) = next("objective vector")?;
    let mut b: Vec<f64> = Vec::with_capacity(m);
    let mut pending = fields(l);
    loop {
        for f in pending.drain(..) {
            b.push(parse_num(f, ln, "objective coefficient")?);
        }
        if b.len() >= m {
            break;
        }
        let (l2, text2) = next("objective vector")?;
        ln = l2;
        pending = fields(text2);
    }
    if b.len() != m {
        return Err(Error::parse(ln, format!("expected {m} objective coefficients, got {}", b.len())));
    }

    let mut c_entries = SymMatrix::zeros(n);
    let mut rows: Vec<Vec<(usize, usize, f64)>> = vec![Vec::new(); m];
    for (ln, l) in lines {
        let f = fields(l);
        if f.len() != 5 {
            return Err(Error::parse(ln, format!("expected 'mat block i j value', got '{}'", l.trim())));
        }
        let k: usize = parse_num(f[0], ln, "matrix number")?;
        let blk: usize = parse_num(f[1], ln, "block number")?;
        let i: usize = parse_num(f[2], ln, "row index")?;
        let j: usize = parse_num(f[3], ln, "column index")?;
        let v: f64 = parse_num(f[4], ln, "value")?;
        if k > m {
            return Err(Error::parse(ln, format!("matrix number {k} exceeds {m}")));
        }
        if blk != 1 {
            return Err(Error::parse(ln, format!("block number {blk} in a single-block file")));
        }
        if i == 0 || j == 0 || i > n || j > n {
            return Err(Error::parse(ln, format!("index ({i},{j}) outside 1..={n}")));
        }
        if !v.is_finite() {
            return Err(Error::parse(ln, "non-finite value"));
        }
        let (i, j) = (i - 1, j - 1);
        if k == 0 {
            c_entries.set(i, j, c_entries.get(i, j) - v);
        } else {
            rows[k - 1].push((i, j, v));
        }
    }
    let bounds = if nonnegative {
        BoxBounds::nonnegative(n)
    } else {
        BoxBounds::unbounded(n)
    };
    DnnSdpProblem::new(
        c_entries,
        sym_constraint_map(n, &rows)?,
        DVector::from_vec(b),
        SparseMap::from_triplets(0, svec_dim(n), &[])?,
        DVector::zeros(0),
        bounds,
    )
}

fn first_field(line: &str, ln: usize) -> Result<&str> {
    fields(line).first().copied().ok_or_else(|| Error::parse(ln, "empty line"))
}

pub fn read_sdpa_sparse(path: impl AsRef<Path>, nonnegative: bool) -> Result<DnnSdpProblem> {
    parse_sdpa_sparse(&std::fs::read_to_string(path)?, nonnegative)
}

/// Equality-only DNN-SDP with a witness `X0` that is positive definite,
/// entrywise nonnegative and satisfies `A_E X0 = b_E`. `C` is the sum of a PSD
/// and a nonnegative matrix, so the dual is feasible too.
pub fn gen_random_dnnsdp(n: usize, m_e: usize, seed: u64) -> Result<(DnnSdpProblem, SymMatrix)> {
    if m_e > svec_dim(n) {
        return Err(Error::Input(format!("m_E = {m_e} exceeds n(n+1)/2 = {}", svec_dim(n))));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let d0 = DMatrix::from_fn(n, n, |_, _| rng.gen_range(0.0..1.0));
    let g = &d0 * d0.transpose();
    let x0 = SymMatrix::symmetrize(&(&g / g.norm() + DMatrix::identity(n, n) * 0.05));

    let mut rows = Vec::with_capacity(m_e);
    for k in 0..m_e {
        let mut row = vec![(k % n, k % n, rng.gen_range(0.5..1.5))];
        for _ in 0..n.min(3) {
            let (i, j) = (rng.gen_range(0..n), rng.gen_range(0..n));
            row.push((i, j, rng.gen_range(-1.0..1.0)));
        }
        rows.push(row);
    }
    let a_e = sym_constraint_map(n, &rows)?;
    let b_e = a_e.apply(&x0.svec());

    let h = DMatrix::from_fn(n, n, |_, _| rng.gen_range(-1.0..1.0));
    let psd = &h * h.transpose() / n as f64;
    let nonneg = SymMatrix::from_upper_fn(n, |_, _| rng.gen_range(0.0..0.5));
    let c = SymMatrix::symmetrize(&psd).add(&nonneg);
    Ok((DnnSdpProblem::equality(c, a_e, b_e)?, x0))
}

/// Dimensions `(x, y, z)` of a two-block test problem.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct TwoBlockDims {
    pub x: usize,
    pub y: usize,
    pub z: usize,
}

/// Strongly convex quadratic `f`, `g` with dense random `A`, `B`, `c`, and the
/// unique saddle point from the linear KKT system.
pub fn gen_known_saddle_twoblock(dims: TwoBlockDims, seed: u64) -> Result<(TwoBlockProblem, Triple)> {
    const RETRIES: usize = 10;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let TwoBlockDims { x: nx, y: ny, z: nz } = dims;
    for _ in 0..RETRIES {
        let spd = |n: usize, rng: &mut ChaCha8Rng| {
            let g = DMatrix::from_fn(n, n, |_, _| rng.gen_range(-1.0..1.0));
            let m = &g * g.transpose() / n.max(1) as f64 + DMatrix::identity(n, n) * 0.5;
            (&m + m.transpose()) * 0.5
        };
        let p = spd(ny, &mut rng);
        let q = spd(nz, &mut rng);
        let a = DMatrix::from_fn(ny, nx, |_, _| rng.gen_range(-1.0..1.0));
        let b = DMatrix::from_fn(nz, nx, |_, _| rng.gen_range(-1.0..1.0));
        let lf = DVector::from_fn(ny, |_, _| rng.gen_range(-1.0..1.0));
        let lg = DVector::from_fn(nz, |_, _| rng.gen_range(-1.0..1.0));
        let c = DVector::from_fn(nx, |_, _| rng.gen_range(-1.0..1.0));

        // [P 0 -A; 0 Q -B; A^T B^T 0] [y; z; x] = [-l_f; -l_g; c]
        let dim = ny + nz + nx;
        let mut k = DMatrix::zeros(dim, dim);
        k.view_mut((0, 0), (ny, ny)).copy_from(&p);
        k.view_mut((ny, ny), (nz, nz)).copy_from(&q);
        k.view_mut((0, ny + nz), (ny, nx)).copy_from(&(-&a));
        k.view_mut((ny, ny + nz), (nz, nx)).copy_from(&(-&b));
        k.view_mut((ny + nz, 0), (nx, ny)).copy_from(&a.transpose());
        k.view_mut((ny + nz, ny), (nx, nz)).copy_from(&b.transpose());
        let rhs = DVector::from_iterator(
            dim,
            (-&lf).iter().chain((-&lg).iter()).chain(c.iter()).copied(),
        );
        let Some(sol) = k.clone().lu().solve(&rhs) else { continue };
        if (&k * &sol - &rhs).amax() > 1e-12 * (1.0 + rhs.amax()) {
            continue;
        }
        let saddle = Triple::new(
            sol.rows(ny + nz, nx).clone_owned(),
            sol.rows(0, ny).clone_owned(),
            sol.rows(ny, nz).clone_owned(),
        );
        let constraint = Constraint::new(
            Arc::new(DenseMap::new(a)),
            Arc::new(DenseMap::new(b)),
            c,
        )?;
        let problem = TwoBlockProblem::new(
            Arc::new(QuadraticBlock::new(p, lf)?),
            Arc::new(QuadraticBlock::new(q, lg)?),
            constraint,
        )?;
        return Ok((problem, saddle));
    }
    Err(Error::Numerical(format!(
        "no nonsingular KKT system after {RETRIES} draws for dims {dims:?}"
    )))
}

pub const SNAPSHOT_FORMAT: &str = "gadmm-dnnsdp";
pub const SNAPSHOT_VERSION: u32 = 1;

/// Versioned JSON form of a [`DnnSdpProblem`]. Matrices are lists of upper
/// triangle entries `[i, j, value]` (0-indexed); box bounds are dense upper
/// triangles with `null` for an infinite entry.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Snapshot {
    pub format: String,
    pub version: u32,
    pub n: usize,
    pub c: Vec<(usize, usize, f64)>,
    pub a_e: Vec<Vec<(usize, usize, f64)>>,
    pub b_e: Vec<f64>,
    pub a_i: Vec<Vec<(usize, usize, f64)>>,
    pub b_i: Vec<f64>,
    pub lower: Option<Vec<Option<f64>>>,
    pub upper: Option<Vec<Option<f64>>>,
}

fn upper_entries(m: &SymMatrix) -> Vec<(usize, usize, f64)> {
    let mut out = Vec::new();
    for j in 0..m.n() {
        for i in 0..=j {
            if m.get(i, j) != 0.0 {
                out.push((i, j, m.get(i, j)));
            }
        }
    }
    out
}

fn map_rows(map: &SparseMap, n: usize) -> Result<Vec<Vec<(usize, usize, f64)>>> {
    (0..map.out_dim()).map(|k| Ok(upper_entries(&constraint_matrix(map, k, n)?))).collect()
}

fn dense_upper(m: &SymMatrix) -> Vec<Option<f64>> {
    let mut out = Vec::new();
    for j in 0..m.n() {
        for i in 0..=j {
            let v = m.get(i, j);
            out.push(v.is_finite().then_some(v));
        }
    }
    out
}

fn from_dense_upper(n: usize, vals: &[Option<f64>], missing: f64) -> Result<SymMatrix> {
    if vals.len() != svec_dim(n) {
        return Err(Error::Input(format!(
            "box bound has {} entries, expected {}",
            vals.len(),
            svec_dim(n)
        )));
    }
    let mut it = vals.iter();
    Ok(SymMatrix::from_upper_fn(n, |_, _| it.next().copied().flatten().unwrap_or(missing)))
}

impl Snapshot {
    pub fn from_problem(p: &DnnSdpProblem) -> Result<Self> {
        let n = p.n();
        Ok(Self {
            format: SNAPSHOT_FORMAT.into(),
            version: SNAPSHOT_VERSION,
            n,
            c: upper_entries(&p.c),
            a_e: map_rows(&p.a_e, n)?,
            b_e: p.b_e.iter().copied().collect(),
            a_i: map_rows(&p.a_i, n)?,
            b_i: p.b_i.iter().copied().collect(),
            lower: p.bounds.lower_matrix().map(dense_upper),
            upper: p.bounds.upper_matrix().map(dense_upper),
        })
    }

    pub fn to_problem(&self) -> Result<DnnSdpProblem> {
        if self.format != SNAPSHOT_FORMAT || self.version != SNAPSHOT_VERSION {
            return Err(Error::Input(format!(
                "unsupported snapshot {} v{} (expected {SNAPSHOT_FORMAT} v{SNAPSHOT_VERSION})",
                self.format, self.version
            )));
        }
        let n = self.n;
        let mut c = SymMatrix::zeros(n);
        for &(i, j, v) in &self.c {
            if i >= n || j >= n {
                return Err(Error::Input(format!("C entry ({i},{j}) outside order {n}")));
            }
            c.set(i, j, v);
        }
        let lower = self
            .lower
            .as_ref()
            .map(|l| from_dense_upper(n, l, f64::NEG_INFINITY))
            .transpose()?;
        let upper = self.upper.as_ref().map(|u| from_dense_upper(n, u, f64::INFINITY)).transpose()?;
        DnnSdpProblem::new(
            c,
            sym_constraint_map(n, &self.a_e)?,
            DVector::from_vec(self.b_e.clone()),
            sym_constraint_map(n, &self.a_i)?,
            DVector::from_vec(self.b_i.clone()),
            BoxBounds::new(n, lower, upper)?,
        )
    }
}

pub fn write_snapshot(path: impl AsRef<Path>, p: &DnnSdpProblem) -> Result<()> {
    let json = serde_json::to_string_pretty(&Snapshot::from_problem(p)?)?;
    std::fs::write(path, json)?;
    Ok(())
}

pub fn read_snapshot(path: impl AsRef<Path>) -> Result<DnnSdpProblem> {
    let s: Snapshot = serde_json::from_str(&std::fs::read_to_string(path)?)?;
    s.to_problem()
}

/// Loads a problem by extension: `.json` snapshot, `.dat-s` SDPA (with
/// `X >= 0`), anything else as BIQ text relaxed with `cuts`.
pub fn load_problem(path: impl AsRef<Path>, cuts: CutRange) -> Result<DnnSdpProblem> {
    let path = path.as_ref();
    let name = path.to_string_lossy();
    if name.ends_with(".json") {
        read_snapshot(path)
    } else if name.ends_with(".dat-s") {
        read_sdpa_sparse(path, true)
    } else {
        biq_to_dnnsdp(&read_biq_file(path)?, cuts)
    }
}
