//! Acceptance suite: one PASS/FAIL line per criterion.
//!
//! Runs without the libtest harness, so `cargo test` always shows the report.
//! Criteria known to be unattainable print `FAIL (known)` and do not fail the
//! target; every other failure exits with status 1.

use std::sync::Arc;
use std::time::Instant;

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use gadmm_core::bench::{run_suite, RecordStatus, SuiteInstance};
use gadmm_core::blocks::{prox_support_negated, ConvexBlock, QuadraticBlock, ScalarTerm, SeparableBlock};
use gadmm_core::dnnsdp::{solve_dnnsdp, DnnSdpOptions};
use gadmm_core::exec::Execution;
use gadmm_core::instances::{
    biq_to_dnnsdp, gen_known_saddle_twoblock, gen_random_biq, parse_sdpa_sparse, CutRange, TwoBlockDims,
};
use gadmm_core::linalg::{project_box, project_psd, sym_eig, BoxBounds, SymMatrix, WeightOperator};
use gadmm_core::multiblock::{
    jacobi_step, sgs_main_step, JacobiSettings, JacobiSubproblems, MultiBlockProblem, MultiBlockSide,
    SgsSubproblems,
};
use gadmm_core::operators::{choose_default_jacobi_blocks, BlockLayout, BlockMap, BlockQuadratic, DenseMap, SemiProximalPair};
use gadmm_core::solver::{
    gadmm_step, run, scheme12_step, scheme13_step, spadmm_step, spadmm_zfirst_step, ExplicitOperators,
    IterateState, Method, RunHooks, SolverConfig, Status, Subproblems, Triple,
};

struct Verdict {
    name: &'static str,
    pass: bool,
    known: Option<String>,
    detail: String,
    seconds: f64,
}

fn timed(name: &'static str, limit_s: Option<f64>, f: impl FnOnce() -> (bool, String)) -> Verdict {
    let start = Instant::now();
    let (pass, mut detail) = f();
    let seconds = start.elapsed().as_secs_f64();
    let in_time = limit_s.is_none_or(|l| seconds < l);
    if let Some(l) = limit_s {
        detail.push_str(&format!("; {seconds:.2}s (limit {l}s)"));
    }
    Verdict { name, pass: pass && in_time, known: None, detail, seconds }
}

fn rand_mat(r: usize, c: usize, rng: &mut ChaCha8Rng) -> DMatrix<f64> {
    DMatrix::from_fn(r, c, |_, _| rng.gen_range(-1.0..1.0))
}

fn rand_vec(n: usize, rng: &mut ChaCha8Rng) -> DVector<f64> {
    DVector::from_fn(n, |_, _| rng.gen_range(-1.0..1.0))
}

fn rand_sym(n: usize, rng: &mut ChaCha8Rng) -> SymMatrix {
    let scale = rng.gen_range(0.1..10.0);
    SymMatrix::from_upper_fn(n, |_, _| scale * rng.gen_range(-1.0..1.0))
}

fn saddle_dims(seed: u64) -> TwoBlockDims {
    TwoBlockDims { x: 4, y: 3 + (seed as usize % 3), z: 3 }
}

fn plain_ops(seed: u64) -> ExplicitOperators {
    let (p, _) = gen_known_saddle_twoblock(saddle_dims(seed), seed).unwrap();
    ExplicitOperators::plain(p, 1.0).unwrap()
}

fn equivalence_a() -> (bool, String) {
    let mut worst: f64 = 0.0;
    for seed in 0..10 {
        let ops = plain_ops(seed);
        let rho = 0.3 + 0.15 * seed as f64;
        let mut rng = ChaCha8Rng::seed_from_u64(seed + 100);
        let c = ops.constraint();
        let start = Triple::new(rand_vec(c.x_dim(), &mut rng), rand_vec(c.y_dim(), &mut rng), rand_vec(c.z_dim(), &mut rng));
        let mut s13 = scheme13_step(&ops, rho, &IterateState::new(start)).unwrap();
        let w0 = s13.w.clone();
        let mut s12 = IterateState::new(Triple::new(w0.x.clone(), rand_vec(c.y_dim(), &mut rng), w0.z.clone()));
        for _ in 0..50 {
            let prev_y = s13.w.y.clone();
            s13 = scheme13_step(&ops, rho, &s13).unwrap();
            s12 = scheme12_step(&ops, rho, &s12).unwrap();
            let expected = Triple::new(s13.w.x.clone(), prev_y, s13.w.z.clone());
            worst = worst.max(s12.w.max_deviation(&expected));
        }
    }
    (worst <= 1e-12, format!("max deviation {worst:.2e} (tol 1e-12), 10 instances x 50 iterations"))
}

/// Returns (literal deviation, shifted z-first deviation).
fn equivalence_b() -> (f64, f64) {
    let mut literal: f64 = 0.0;
    let mut shifted: f64 = 0.0;
    for seed in 0..10 {
        let ops = plain_ops(seed);
        let init = IterateState::zeros(ops.constraint());
        let mut g = init.clone();
        let mut s = init.clone();
        for _ in 0..100 {
            g = gadmm_step(&ops, 1.0, &g).unwrap();
            s = spadmm_step(&ops, 1.0, &s).unwrap();
            literal = literal.max(g.w.max_deviation(&s.w));
        }

        let mut g = gadmm_step(&ops, 1.0, &init).unwrap();
        let mut zf = IterateState::new(Triple::new(g.w.x.clone(), g.w.y.clone(), init.tilde.z.clone()));
        for _ in 0..100 {
            let z_prev = g.w.z.clone();
            g = gadmm_step(&ops, 1.0, &g).unwrap();
            zf = spadmm_zfirst_step(&ops, 1.0, &zf).unwrap();
            let expected = Triple::new(g.w.x.clone(), g.w.y.clone(), z_prev);
            shifted = shifted.max(zf.w.max_deviation(&expected));
        }
    }
    (literal, shifted)
}

fn quad_side(dims: &[usize], x_dim: usize, rng: &mut ChaCha8Rng) -> MultiBlockSide {
    let layout = BlockLayout::new(dims);
    let n = layout.total();
    let g = rand_mat(n, n, rng);
    let coupling = BlockQuadratic::new(layout, &g * g.transpose() * 0.3, rand_vec(n, rng), 0.0).unwrap();
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

fn block_dims(count: usize, rng: &mut ChaCha8Rng) -> Vec<usize> {
    (0..count).map(|_| rng.gen_range(1..=3)).collect()
}

fn equivalence_c() -> (bool, String) {
    let mut worst: f64 = 0.0;
    for seed in 0..20u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (p, q) = (rng.gen_range(1..=4), rng.gen_range(1..=4));
        let x_dim = rng.gen_range(3..=6);
        let (yd, zd) = (block_dims(p, &mut rng), block_dims(q, &mut rng));
        let prob = MultiBlockProblem::new(
            quad_side(&yd, x_dim, &mut rng),
            quad_side(&zd, x_dim, &mut rng),
            rand_vec(x_dim, &mut rng),
        )
        .unwrap();
        let sigma = rng.gen_range(0.5..2.0);
        let rho = rng.gen_range(0.2..1.95);
        let sgs = SgsSubproblems::new(prob.clone(), sigma).unwrap();
        let explicit = ExplicitOperators::new(prob.to_two_block().unwrap(), sgs.proximal().unwrap(), sigma).unwrap();
        let mut a = IterateState::zeros(sgs.constraint());
        let mut b = a.clone();
        for _ in 0..25 {
            a = sgs_main_step(&sgs, rho, &a).unwrap();
            b = gadmm_step(&explicit, rho, &b).unwrap();
            worst = worst.max(a.w.max_deviation(&b.w));
        }
    }
    (worst <= 1e-10, format!("max deviation {worst:.2e} (tol 1e-10), 20 instances x 25 iterations"))
}

fn equivalence_d() -> (bool, String) {
    let mut worst: f64 = 0.0;
    for seed in 0..20u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed + 500);
        let (p, q) = (rng.gen_range(1..=4), rng.gen_range(1..=4));
        let x_dim = rng.gen_range(3..=6);
        let (yd, zd) = (block_dims(p, &mut rng), block_dims(q, &mut rng));
        let prob = MultiBlockProblem::new(
            separable_side(&yd, x_dim, &mut rng),
            separable_side(&zd, x_dim, &mut rng),
            rand_vec(x_dim, &mut rng),
        )
        .unwrap();
        let tau1 = (p - 1).max(1) as f64 + rng.gen_range(0.0..1.0);
        let tau2 = (q - 1).max(1) as f64 + rng.gen_range(0.0..1.0);
        let settings = JacobiSettings {
            tau1,
            tau2,
            e: choose_default_jacobi_blocks(&prob.y_side.maps, tau1).unwrap(),
            h: choose_default_jacobi_blocks(&prob.z_side.maps, tau2).unwrap(),
            execution: Execution::Parallel,
        };
        let sigma = rng.gen_range(0.5..2.0);
        let rho = rng.gen_range(0.2..1.95);
        let jac = JacobiSubproblems::new(prob.clone(), settings, sigma).unwrap();
        let explicit = ExplicitOperators::new(prob.to_two_block().unwrap(), jac.proximal().unwrap(), sigma).unwrap();
        let mut a = IterateState::zeros(jac.constraint());
        let mut b = a.clone();
        for _ in 0..25 {
            a = jacobi_step(&jac, rho, &a).unwrap();
            b = gadmm_step(&explicit, rho, &b).unwrap();
            worst = worst.max(a.w.max_deviation(&b.w));
        }
    }
    (worst <= 1e-10, format!("max deviation {worst:.2e} (tol 1e-10), 20 instances x 25 iterations"))
}

fn random_pair(dims: TwoBlockDims, seed: u64) -> SemiProximalPair {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let g = rand_mat(dims.y, 2, &mut rng);
    let h = rand_mat(dims.z, 2, &mut rng);
    SemiProximalPair {
        s: WeightOperator::Dense(&g * g.transpose()),
        t: WeightOperator::Dense(&h * h.transpose()),
    }
}

fn lyapunov() -> (bool, String) {
    let mut worst: f64 = f64::NEG_INFINITY;
    let mut final_phi: f64 = 0.0;
    for seed in 0..20u64 {
        let dims = saddle_dims(seed);
        for rho in [0.5, 1.0, 1.5, 1.9] {
            let (p, saddle) = gen_known_saddle_twoblock(dims, seed).unwrap();
            let pair = if seed % 2 == 0 { random_pair(dims, seed) } else { SemiProximalPair::zero(dims.y, dims.z) };
            let mut ops = ExplicitOperators::new(p, pair, 1.0).unwrap();
            let init = IterateState::zeros(ops.constraint());
            let config = SolverConfig { rho, tol: 1e-14, max_iter: 2000, ..Default::default() };
            let hooks = RunHooks { saddle: Some(saddle), ..Default::default() };
            let (_, report) = run(&mut ops, &config, Method::Gadmm, init, hooks).unwrap();
            let phi = &report.phi_history;
            for k in 1..phi.len() {
                worst = worst.max((phi[k] - phi[k - 1]) / (1.0 + phi[0]));
            }
            final_phi = final_phi.max(*phi.last().unwrap());
        }
    }
    (
        worst <= 1e-9 && final_phi < 1e-8,
        format!("worst relative increase {worst:.2e} (tol 1e-9), largest final phi {final_phi:.2e} (tol 1e-8)"),
    )
}

fn theorem1() -> (bool, String) {
    let mut most = 0;
    let mut failed = 0;
    for seed in 0..20u64 {
        let dims = saddle_dims(seed);
        for rho in [0.5, 1.0, 1.5, 1.9] {
            let (p, _) = gen_known_saddle_twoblock(dims, seed).unwrap();
            let pair = if seed % 2 == 0 { random_pair(dims, seed) } else { SemiProximalPair::zero(dims.y, dims.z) };
            let mut ops = ExplicitOperators::new(p, pair, 1.0).unwrap();
            let init = IterateState::zeros(ops.constraint());
            let config = SolverConfig { rho, tol: 1e-8, max_iter: 20_000, ..Default::default() };
            let (_, report) = run(&mut ops, &config, Method::Gadmm, init, RunHooks::default()).unwrap();
            if report.status == Status::Converged {
                most = most.max(report.iterations);
            } else {
                failed += 1;
            }
        }
    }
    (failed == 0, format!("{failed} of 80 runs missed KKT < 1e-8; slowest took {most} iterations (limit 20000)"))
}

const TOY: &str = "1\n1\n2\n1.0\n0 1 1 1 -1.0\n0 1 2 2 -1.0\n1 1 1 1 1.0\n1 1 2 2 1.0\n";

fn dnn_options() -> DnnSdpOptions {
    DnnSdpOptions {
        solver: SolverConfig { rho: 1.8, tol: 1e-6, max_iter: 100_000, ..Default::default() },
        alpha: None,
    }
}

fn dnn_end_to_end() -> (bool, String) {
    let toy = parse_sdpa_sparse(TOY, true).unwrap();
    let sol = solve_dnnsdp(&toy, Method::Gadmm, &dnn_options()).unwrap();
    let toy_ok = sol.report.status == Status::Converged
        && sol.residuals.eta_sdp < 1e-6
        && (sol.primal_objective - 1.0).abs() <= 1e-6;
    let mut notes = vec![format!("toy value {:.8} eta {:.1e}", sol.primal_objective, sol.residuals.eta_sdp)];
    let mut all_ok = toy_ok;
    let mut worst_gap: f64 = 0.0;
    let mut worst_excess = f64::NEG_INFINITY;
    let mut most = 0;
    for (k, nv) in [4usize, 6, 8, 10].into_iter().enumerate() {
        let biq = gen_random_biq(nv, 100, 2000 + k as u64);
        let (opt, _) = biq.binary_optimum().unwrap();
        for cuts in [CutRange::AllPairs, CutRange::None] {
            let p = biq_to_dnnsdp(&biq, cuts).unwrap();
            let sol = solve_dnnsdp(&p, Method::Gadmm, &dnn_options()).unwrap();
            let scale = 1.0 + sol.primal_objective.abs();
            let gap = (sol.primal_objective - sol.dual_objective).abs() / scale;
            let excess = (sol.primal_objective - opt) / (1.0 + opt.abs());
            worst_gap = worst_gap.max(gap);
            worst_excess = worst_excess.max(excess);
            most = most.max(sol.report.iterations);
            all_ok &= sol.report.status == Status::Converged
                && sol.residuals.eta_sdp < 1e-6
                && sol.report.iterations <= 100_000
                && gap <= 1e-5
                && excess <= 1e-5;
        }
    }
    notes.push(format!(
        "8 BIQ solves: max {most} iterations, relative gap {worst_gap:.1e} (tol 1e-5), bound minus binary optimum {worst_excess:.1e} relative (slack 1e-5)"
    ));
    (all_ok, notes.join("; "))
}

fn rho_sweep() -> (bool, String) {
    let instances: Vec<SuiteInstance> = (0..20u64)
        .map(|s| {
            let b = gen_random_biq(10, 100, 1000 + s);
            SuiteInstance::problem(format!("biq{s}"), biq_to_dnnsdp(&b, CutRange::AllPairs).unwrap())
        })
        .collect();
    let grid = [(Method::Gadmm, 1.0), (Method::Gadmm, 1.8)];
    let base = DnnSdpOptions { solver: SolverConfig { tol: 1e-6, ..Default::default() }, alpha: None };
    let records = run_suite(&instances, &grid, &base, Execution::Parallel);
    let converged = records.iter().all(|r| r.status == RecordStatus::Converged);
    let iters = |param: f64| -> Vec<usize> {
        records.iter().filter(|r| r.param == param).map(|r| r.iterations).collect()
    };
    let (plain, relaxed) = (iters(1.0), iters(1.8));
    let wins = plain.iter().zip(&relaxed).filter(|(a, b)| b < a).count();
    let median = |v: &[usize]| {
        let mut s = v.to_vec();
        s.sort_unstable();
        (s[s.len() / 2 - 1] + s[s.len() / 2]) as f64 / 2.0
    };
    let (m1, m18) = (median(&plain), median(&relaxed));
    (
        converged && m18 < m1 && wins * 10 >= 6 * plain.len(),
        format!("median iterations {m18} (rho 1.8) vs {m1} (rho 1.0); rho 1.8 wins {wins}/20"),
    )
}

fn projections() -> (bool, String) {
    let mut rng = ChaCha8Rng::seed_from_u64(42);
    let mut fails: Vec<&str> = Vec::new();
    let mut check = |ok: bool, what: &'static str| {
        if !ok && !fails.contains(&what) {
            fails.push(what);
        }
    };
    for _ in 0..1000 {
        let n = rng.gen_range(1..=8);
        let a = rand_sym(n, &mut rng);
        let b = rand_sym(n, &mut rng);
        let tol = 1e-9 * (1.0 + a.norm() + b.norm());

        let pa = project_psd(&a).unwrap();
        let pb = project_psd(&b).unwrap();
        check(project_psd(&pa).unwrap().sub(&pa).norm() <= tol, "psd idempotence");
        check(pa.sub(&pb).norm() <= a.sub(&b).norm() + tol, "psd nonexpansiveness");
        check(pa.inner(&pa.sub(&a)).abs() <= tol * (1.0 + a.norm()), "psd orthogonality");
        let neg = project_psd(&a.scale(-1.0)).unwrap();
        check(pa.sub(&neg).sub(&a).norm() <= tol, "psd moreau decomposition");
        check(sym_eig(&pa).unwrap().eigenvalues.iter().all(|&l| l >= -tol), "psd membership");

        let lower = SymMatrix::from_upper_fn(n, |_, _| rng.gen_range(-1.0..0.5));
        let width = SymMatrix::from_upper_fn(n, |_, _| rng.gen_range(0.0..1.0));
        let upper = lower.add(&width);
        let bounds = BoxBounds::new(n, Some(lower), Some(upper)).unwrap();
        let ba = project_box(&a, &bounds).unwrap();
        let bb = project_box(&b, &bounds).unwrap();
        check(project_box(&ba, &bounds).unwrap().sub(&ba).norm() <= tol, "box idempotence");
        check(ba.sub(&bb).norm() <= a.sub(&b).norm() + tol, "box nonexpansiveness");
        check(a.sub(&ba).inner(&bb.sub(&ba)) <= tol * (1.0 + a.norm()), "box variational inequality");

        let sigma = rng.gen_range(0.1..10.0);
        let za = prox_support_negated(&a, sigma, &bounds).unwrap();
        let zb = prox_support_negated(&b, sigma, &bounds).unwrap();
        let u = za.sub(&a).scale(sigma);
        check(project_box(&u, &bounds).unwrap().sub(&u).norm() <= tol * sigma, "prox moreau membership");
        let support = bounds.support(&za.scale(-1.0));
        check((support - u.inner(&za.scale(-1.0))).abs() <= tol * sigma * (1.0 + za.norm()), "prox optimality");
        check(za.sub(&zb).norm() <= a.sub(&b).norm() + tol, "prox nonexpansiveness");
    }
    let detail = if fails.is_empty() {
        "psd, box and prox suites held on 1000 samples each".to_string()
    } else {
        format!("violated: {}", fails.join(", "))
    };
    (fails.is_empty(), detail)
}

fn main() {
    let mut verdicts = vec![timed("Equivalence A (relaxed scheme vs z-first GADMM)", Some(5.0), equivalence_a)];

    let start = Instant::now();
    let (literal, shifted) = equivalence_b();
    let seconds = start.elapsed().as_secs_f64();
    let mut b = Verdict {
        name: "Equivalence B (GADMM rho=1 vs sPADMM tau=1)",
        pass: literal <= 1e-12 && seconds < 5.0,
        known: None,
        detail: format!(
            "literal deviation {literal:.2e} (tol 1e-12); shifted z-first correspondence {shifted:.2e}; {seconds:.2}s"
        ),
        seconds,
    };
    if !b.pass && shifted <= 1e-12 {
        b.known = Some(
            "the two methods differ by a linear term in the z-subproblem; the identity holds only against \
             the z-first sPADMM with a one-step shift in z"
                .into(),
        );
    }
    verdicts.push(b);

    verdicts.push(timed("Equivalence C (sGS sweep vs explicit proximal terms)", Some(30.0), equivalence_c));
    verdicts.push(timed("Equivalence D (Jacobi step vs explicit proximal terms)", Some(30.0), equivalence_d));
    verdicts.push(timed("Lyapunov descent", Some(60.0), lyapunov));
    verdicts.push(timed("Theorem 1 convergence", None, theorem1));
    verdicts.push(timed("DNN-SDP end-to-end", Some(600.0), dnn_end_to_end));
    verdicts.push(timed("rho-sweep direction", None, rho_sweep));
    verdicts.push(timed("Projection and prox oracles", Some(30.0), projections));

    for v in &verdicts {
        let tag = match (v.pass, &v.known) {
            (true, _) => "PASS".to_string(),
            (false, Some(_)) => "FAIL (known)".to_string(),
            (false, None) => "FAIL".to_string(),
        };
        println!("{tag:<12} {:<56} {}", v.name, v.detail);
        if let (false, Some(why)) = (v.pass, &v.known) {
            println!("{:<12} {:<56} {why}", "", "");
        }
    }
    let total: f64 = verdicts.iter().map(|v| v.seconds).sum();
    println!("total {total:.1}s");

    let unexpected: Vec<&str> = verdicts.iter().filter(|v| !v.pass && v.known.is_none()).map(|v| v.name).collect();
    if !unexpected.is_empty() {
        eprintln!("failed criteria: {unexpected:?}");
        std::process::exit(1);
    }
}
