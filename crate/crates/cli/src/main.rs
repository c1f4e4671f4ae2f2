use std::fs::File;
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use clap::{Args, Parser, Subcommand, ValueEnum};

use gadmm_core::bench::{
    default_grid, method_label, performance_profile, read_records_csv, run_suite, write_profile_csv,
    write_records_csv, ProfileMetric, SolveReport, SuiteInstance,
};
use gadmm_core::dnnsdp::{solve_dnnsdp, DnnSdpOptions};
use gadmm_core::exec::Execution;
use gadmm_core::instances::{
    format_biq, gen_random_biq, gen_random_dnnsdp, load_problem, write_snapshot, CutRange,
};
use gadmm_core::solver::{Method, SolverConfig, Status};
use gadmm_core::Error;

/// Generalized ADMM solvers for doubly non-negative SDPs.
#[derive(Parser, Debug)]
#[command(name = "gadmm", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Solve one instance and print its residuals and objective.
    Solve(SolveArgs),
    /// Run a method/parameter grid over instances and write run records.
    Sweep(SweepArgs),
    /// Turn run records into performance-profile curves.
    Profile(ProfileArgs),
    /// Generate an instance.
    Gen(GenArgs),
}

#[derive(Args, Debug)]
struct SolverArgs {
    #[arg(long, default_value_t = 1.0)]
    sigma: f64,
    #[arg(long, default_value_t = 1e-6)]
    tol: f64,
    #[arg(long = "max-iter", default_value_t = 500_000)]
    max_iter: usize,
    /// Slack-row scaling; defaults to sqrt(|A_I|)/2.
    #[arg(long)]
    alpha: Option<f64>,
    /// Triangle cuts for BIQ input: all, exclude-last or none.
    #[arg(long, default_value = "all")]
    cuts: String,
    /// Double/halve sigma on primal-dual residual imbalance.
    #[arg(long)]
    adaptive_sigma: bool,
}

impl SolverArgs {
    fn options(&self) -> DnnSdpOptions {
        DnnSdpOptions {
            solver: SolverConfig {
                sigma: self.sigma,
                tol: self.tol,
                max_iter: self.max_iter,
                adaptive_sigma: self.adaptive_sigma,
                ..SolverConfig::default()
            },
            alpha: self.alpha,
        }
    }
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum MethodArg {
    Gadmm,
    Spadmm,
    Scheme12,
}

impl From<MethodArg> for Method {
    fn from(m: MethodArg) -> Self {
        match m {
            MethodArg::Gadmm => Method::Gadmm,
            MethodArg::Spadmm => Method::Spadmm,
            MethodArg::Scheme12 => Method::Scheme12,
        }
    }
}

#[derive(Args, Debug)]
struct SolveArgs {
    /// Instance: .json snapshot, .dat-s SDPA file, or BIQ text.
    #[arg(long)]
    file: PathBuf,
    #[arg(long, value_enum, default_value = "gadmm")]
    method: MethodArg,
    #[arg(long, default_value_t = 1.8)]
    rho: f64,
    #[arg(long, default_value_t = 1.0)]
    tau: f64,
    #[command(flatten)]
    solver: SolverArgs,
    /// Write the JSON report here.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct SweepArgs {
    /// Instance files (repeatable).
    #[arg(long, required = true)]
    file: Vec<PathBuf>,
    /// Restrict the grid to these methods (repeatable).
    #[arg(long, value_enum)]
    method: Vec<MethodArg>,
    /// Relaxation parameters (repeatable); replaces the default grid.
    #[arg(long)]
    rho: Vec<f64>,
    /// sPADMM step lengths (repeatable); replaces the default grid.
    #[arg(long)]
    tau: Vec<f64>,
    #[command(flatten)]
    solver: SolverArgs,
    /// Run cells one at a time.
    #[arg(long)]
    sequential: bool,
    /// Records CSV (stdout when absent).
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct ProfileArgs {
    /// Records CSV from `sweep`.
    #[arg(long = "in")]
    input: PathBuf,
    #[arg(long, default_value = "time")]
    metric: String,
    /// Curves CSV (stdout when absent).
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum GenKind {
    /// Random BIQ data in the BIQ text format.
    Biq,
    /// Random equality-constrained DNN-SDP as a JSON snapshot.
    Random,
}

#[derive(Args, Debug)]
struct GenArgs {
    #[arg(long, value_enum)]
    kind: GenKind,
    /// Variables (BIQ) or matrix order (random).
    #[arg(long)]
    n: usize,
    /// Equality constraints of a random instance.
    #[arg(long = "m-e", default_value_t = 1)]
    m_e: usize,
    /// Entry range of random BIQ data.
    #[arg(long, default_value_t = 100)]
    range: i32,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
}

enum Failure {
    Usage(String),
    Solve(String),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        match e {
            Error::Config(_) | Error::Input(_) | Error::Parse { .. } | Error::Io(_) | Error::Json(_) => {
                Failure::Usage(e.to_string())
            }
            Error::Numerical(_) | Error::Unsupported(_) => Failure::Solve(e.to_string()),
        }
    }
}

impl From<io::Error> for Failure {
    fn from(e: io::Error) -> Self {
        Failure::Usage(e.to_string())
    }
}

fn output(path: &Option<PathBuf>) -> io::Result<Box<dyn Write>> {
    Ok(match path {
        Some(p) => Box::new(BufWriter::new(File::create(p)?)),
        None => Box::new(io::stdout().lock()),
    })
}

fn solve(args: SolveArgs) -> Result<(), Failure> {
    let cuts: CutRange = args.solver.cuts.parse()?;
    let method: Method = args.method.into();
    let mut options = args.solver.options();
    options.solver.rho = args.rho;
    options.solver.tau = args.tau;
    options.solver.validate()?;
    let problem = load_problem(&args.file, cuts)?;
    let start = Instant::now();
    let sol = solve_dnnsdp(&problem, method, &options)?;
    let elapsed = start.elapsed().as_secs_f64();
    let param = if method == Method::Spadmm { args.tau } else { args.rho };
    let r = &sol.residuals;
    println!("instance   {}", args.file.display());
    println!("method     {}", method_label(method, param));
    println!("status     {}", sol.report.status);
    println!("iterations {}", sol.report.iterations);
    println!("objective  {:.10e} (dual {:.10e})", sol.primal_objective, sol.dual_objective);
    println!(
        "eta_sdp    {:.3e}  [D {:.2e} X {:.2e} Z {:.2e} P {:.2e} S {:.2e} I {:.2e}]",
        r.eta_sdp, r.eta_d, r.eta_x, r.eta_z, r.eta_p, r.eta_s, r.eta_i
    );
    println!("time_s     {elapsed:.3}");
    if let Some(path) = &args.out {
        let id = args.file.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
        let report = SolveReport::new(&id, method, param, &sol, elapsed);
        std::fs::write(path, serde_json::to_string_pretty(&report).map_err(Error::from)?)?;
    }
    if sol.report.status == Status::Converged {
        Ok(())
    } else {
        Err(Failure::Solve(format!("solver stopped with status {}", sol.report.status)))
    }
}

fn sweep(args: SweepArgs) -> Result<(), Failure> {
    let cuts: CutRange = args.solver.cuts.parse()?;
    let options = args.solver.options();
    let methods: Vec<Method> = args.method.iter().map(|&m| m.into()).collect();
    let wanted = |m: Method| methods.is_empty() || methods.contains(&m);
    let grid: Vec<(Method, f64)> = if args.rho.is_empty() && args.tau.is_empty() {
        default_grid().into_iter().filter(|&(m, _)| wanted(m)).collect()
    } else {
        let rho_method = if methods.contains(&Method::Scheme12) { Method::Scheme12 } else { Method::Gadmm };
        args.rho
            .iter()
            .map(|&r| (rho_method, r))
            .chain(args.tau.iter().map(|&t| (Method::Spadmm, t)))
            .collect()
    };
    for &(m, p) in &grid {
        gadmm_core::bench::cell_options(&options, m, p).solver.validate()?;
    }
    let instances: Vec<SuiteInstance> = args.file.iter().map(|f| SuiteInstance::file(f, cuts)).collect();
    let exec = if args.sequential { Execution::Sequential } else { Execution::Parallel };
    let records = run_suite(&instances, &grid, &options, exec);
    write_records_csv(output(&args.out)?, &records)?;
    let failed = records.iter().filter(|r| r.status != gadmm_core::bench::RecordStatus::Converged).count();
    eprintln!("{} records, {failed} not converged", records.len());
    Ok(())
}

fn profile(args: ProfileArgs) -> Result<(), Failure> {
    let metric: ProfileMetric = args.metric.parse()?;
    let records = read_records_csv(File::open(&args.input)?)?;
    let profile = performance_profile(&records, metric)?;
    for inst in &profile.dropped {
        eprintln!("warning: no method converged on '{inst}'; dropped from the profile");
    }
    write_profile_csv(output(&args.out)?, &profile)?;
    Ok(())
}

fn gen(args: GenArgs) -> Result<(), Failure> {
    match args.kind {
        GenKind::Biq => {
            let b = gen_random_biq(args.n, args.range, args.seed);
            if is_json(&args.out) {
                write_snapshot(&args.out, &gadmm_core::instances::biq_to_dnnsdp(&b, CutRange::AllPairs)?)?;
            } else {
                std::fs::write(&args.out, format_biq(&b))?;
            }
        }
        GenKind::Random => {
            let (p, _) = gen_random_dnnsdp(args.n, args.m_e, args.seed)?;
            write_snapshot(&args.out, &p)?;
        }
    }
    Ok(())
}

fn is_json(p: &Path) -> bool {
    p.extension().is_some_and(|e| e == "json")
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    let result = match cli.command {
        Command::Solve(a) => solve(a),
        Command::Sweep(a) => sweep(a),
        Command::Profile(a) => profile(a),
        Command::Gen(a) => gen(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Usage(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(1)
        }
        Err(Failure::Solve(msg)) => {
            eprintln!("solve failed: {msg}");
            ExitCode::from(2)
        }
    }
}
