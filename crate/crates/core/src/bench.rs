//! Experiment harness: method/parameter sweeps over instance suites, run
//! records and Dolan-More performance profiles.

use std::collections::BTreeMap;
use std::io::{Read, Write};
use std::path::PathBuf;
use std::sync::Arc;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::dnnsdp::{solve_dnnsdp, DnnSdpOptions, DnnSdpProblem, DnnSdpSolution, ResidualSet};
use crate::error::{Error, Result};
use crate::exec::{map_collect, with_workers, Execution};
use crate::instances::{load_problem, CutRange};
use crate::solver::{Method, Status};

/// Worker-count environment variable for [`run_suite`].
pub const WORKERS_ENV: &str = "GADMM_WORKERS";

/// Column order of the records CSV.
pub const RECORD_COLUMNS: [&str; 7] = ["instance", "method", "param", "iterations", "eta_sdp", "time_s", "status"];

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RecordStatus {
    Converged,
    MaxIter,
    Diverged,
    Error,
}

impl From<Status> for RecordStatus {
    fn from(s: Status) -> Self {
        match s {
            Status::Converged => RecordStatus::Converged,
            Status::MaxIter => RecordStatus::MaxIter,
            Status::Diverged => RecordStatus::Diverged,
        }
    }
}

/// One `(instance, method, parameter)` cell. `param` is `rho` for GADMM and
/// the relaxed scheme, `tau` for sPADMM.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub instance: String,
    pub method: Method,
    pub param: f64,
    pub iterations: usize,
    pub eta_sdp: f64,
    pub time_s: f64,
    pub status: RecordStatus,
}

impl RunRecord {
    pub fn label(&self) -> String {
        method_label(self.method, self.param)
    }
}

pub fn method_label(method: Method, param: f64) -> String {
    format!("{method}({param})")
}

#[derive(Clone, Debug)]
pub enum InstanceSource {
    Problem(Arc<DnnSdpProblem>),
    File { path: PathBuf, cuts: CutRange },
}

#[derive(Clone, Debug)]
pub struct SuiteInstance {
    pub id: String,
    pub source: InstanceSource,
}

impl SuiteInstance {
    pub fn problem(id: impl Into<String>, p: DnnSdpProblem) -> Self {
        Self {
            id: id.into(),
            source: InstanceSource::Problem(Arc::new(p)),
        }
    }

    pub fn file(path: impl Into<PathBuf>, cuts: CutRange) -> Self {
        let path = path.into();
        Self {
            id: path.file_stem().map_or_else(|| path.display().to_string(), |s| s.to_string_lossy().into_owned()),
            source: InstanceSource::File { path, cuts },
        }
    }

    fn load(&self) -> Result<Arc<DnnSdpProblem>> {
        match &self.source {
            InstanceSource::Problem(p) => Ok(p.clone()),
            InstanceSource::File { path, cuts } => Ok(Arc::new(load_problem(path, *cuts)?)),
        }
    }
}

/// GADMM with `rho = 1.0, 1.1, ..., 1.9` and sPADMM with `tau = 1, 1.618`.
pub fn default_grid() -> Vec<(Method, f64)> {
    let mut grid: Vec<(Method, f64)> = (10..=19).map(|k| (Method::Gadmm, k as f64 / 10.0)).collect();
    grid.push((Method::Spadmm, 1.0));
    grid.push((Method::Spadmm, 1.618));
    grid
}

/// Options with the cell's parameter applied.
pub fn cell_options(base: &DnnSdpOptions, method: Method, param: f64) -> DnnSdpOptions {
    let mut o = base.clone();
    match method {
        Method::Spadmm => o.solver.tau = param,
        Method::Gadmm | Method::Scheme12 => o.solver.rho = param,
    }
    o
}

/// Solves one cell from a cold start; the wall time excludes loading.
pub fn run_cell(
    instance: &SuiteInstance,
    method: Method,
    param: f64,
    base: &DnnSdpOptions,
) -> (RunRecord, Option<DnnSdpSolution>) {
    let mut record = RunRecord {
        instance: instance.id.clone(),
        method,
        param,
        iterations: 0,
        eta_sdp: f64::NAN,
        time_s: 0.0,
        status: RecordStatus::Error,
    };
    let Ok(problem) = instance.load() else {
        return (record, None);
    };
    let options = cell_options(base, method, param);
    let start = Instant::now();
    let outcome = solve_dnnsdp(&problem, method, &options);
    record.time_s = start.elapsed().as_secs_f64();
    match outcome {
        Ok(sol) => {
            record.iterations = sol.report.iterations;
            record.eta_sdp = sol.residuals.eta_sdp;
            record.status = sol.report.status.into();
            (record, Some(sol))
        }
        Err(_) => (record, None),
    }
}

/// Worker count from [`WORKERS_ENV`], if set to a positive integer.
pub fn workers_from_env() -> Option<usize> {
    std::env::var(WORKERS_ENV).ok().and_then(|v| v.trim().parse().ok()).filter(|&n| n > 0)
}

/// One record per `(instance, method, param)` in row-major order. Failing
/// cells are recorded with status `error`.
pub fn run_suite(
    instances: &[SuiteInstance],
    grid: &[(Method, f64)],
    base: &DnnSdpOptions,
    execution: Execution,
) -> Vec<RunRecord> {
    let cells: Vec<(usize, Method, f64)> = instances
        .iter()
        .enumerate()
        .flat_map(|(i, _)| grid.iter().map(move |&(m, p)| (i, m, p)))
        .collect();
    with_workers(workers_from_env(), || {
        map_collect(execution, &cells, |&(i, m, p)| run_cell(&instances[i], m, p, base).0)
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ProfileMetric {
    Time,
    Iterations,
}

impl std::str::FromStr for ProfileMetric {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "time" => Ok(ProfileMetric::Time),
            "iterations" => Ok(ProfileMetric::Iterations),
            other => Err(Error::Input(format!("unknown metric '{other}' (time or iterations)"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ProfileCurve {
    pub label: String,
    pub theta: Vec<f64>,
    pub fraction: Vec<f64>,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct Profile {
    pub curves: Vec<ProfileCurve>,
    /// Instances dropped because no solver converged on them.
    pub dropped: Vec<String>,
}

fn metric_value(r: &RunRecord, metric: ProfileMetric) -> f64 {
    if r.status != RecordStatus::Converged {
        return f64::INFINITY;
    }
    match metric {
        ProfileMetric::Time => r.time_s.max(1e-9),
        ProfileMetric::Iterations => (r.iterations as f64).max(1.0),
    }
}

/// Performance ratios `r_{i,s} = m_{i,s} / min_s' m_{i,s'}` and, per solver,
/// the fraction of instances with `r <= theta` on the grid of all finite
/// ratios. Unsolved cells have ratio `+inf`.
pub fn performance_profile(records: &[RunRecord], metric: ProfileMetric) -> Result<Profile> {
    let mut labels: Vec<String> = Vec::new();
    let mut table: BTreeMap<String, BTreeMap<String, f64>> = BTreeMap::new();
    for r in records {
        let label = r.label();
        if !labels.contains(&label) {
            labels.push(label.clone());
        }
        table.entry(r.instance.clone()).or_default().insert(label, metric_value(r, metric));
    }
    if labels.is_empty() {
        return Err(Error::Input("performance profile needs at least one record".into()));
    }
    let mut dropped = Vec::new();
    let mut ratios: Vec<Vec<f64>> = vec![Vec::new(); labels.len()];
    for (inst, row) in &table {
        let best = row.values().copied().fold(f64::INFINITY, f64::min);
        if !best.is_finite() {
            dropped.push(inst.clone());
            continue;
        }
        for (s, label) in labels.iter().enumerate() {
            ratios[s].push(row.get(label).map_or(f64::INFINITY, |m| m / best));
        }
    }
    let mut grid: Vec<f64> = ratios.iter().flatten().copied().filter(|r| r.is_finite()).collect();
    grid.push(1.0);
    grid.sort_by(f64::total_cmp);
    grid.dedup();
    let total = table.len() - dropped.len();
    let curves = labels
        .into_iter()
        .zip(ratios)
        .map(|(label, rs)| {
            let fraction = grid
                .iter()
                .map(|&t| {
                    if total == 0 {
                        0.0
                    } else {
                        rs.iter().filter(|&&r| r <= t).count() as f64 / total as f64
                    }
                })
                .collect();
            ProfileCurve {
                label,
                theta: grid.clone(),
                fraction,
            }
        })
        .collect();
    Ok(Profile { curves, dropped })
}

pub fn write_records_csv<W: Write>(out: W, records: &[RunRecord]) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    for r in records {
        w.serialize(r).map_err(csv_error)?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_records_csv<R: Read>(input: R) -> Result<Vec<RunRecord>> {
    let mut rd = csv::Reader::from_reader(input);
    let header: Vec<String> = rd.headers().map_err(csv_error)?.iter().map(str::to_owned).collect();
    if header != RECORD_COLUMNS {
        return Err(Error::parse(1, format!("expected columns {}", RECORD_COLUMNS.join(","))));
    }
    rd.deserialize()
        .enumerate()
        .map(|(i, r)| r.map_err(|e| Error::parse(i + 2, e.to_string())))
        .collect()
}

pub fn write_profile_csv<W: Write>(out: W, profile: &Profile) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["method", "theta", "fraction"]).map_err(csv_error)?;
    for c in &profile.curves {
        for (t, f) in c.theta.iter().zip(&c.fraction) {
            w.write_record([c.label.clone(), t.to_string(), f.to_string()]).map_err(csv_error)?;
        }
    }
    w.flush()?;
    Ok(())
}

fn csv_error(e: csv::Error) -> Error {
    let line = e.position().map_or(0, |p| p.line() as usize);
    match e.into_kind() {
        csv::ErrorKind::Io(io) => Error::Io(io),
        other => Error::parse(line, format!("{other:?}")),
    }
}

pub const REPORT_SCHEMA: &str = "gadmm-report";
pub const REPORT_VERSION: u32 = 1;

/// Full JSON report of one solve.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SolveReport {
    pub schema: String,
    pub version: u32,
    pub instance: String,
    pub method: Method,
    pub param: f64,
    pub status: Status,
    pub iterations: usize,
    pub residuals: ResidualSet,
    pub primal_objective: f64,
    pub dual_objective: f64,
    pub alpha: f64,
    pub sigma: f64,
    pub time_s: f64,
}

impl SolveReport {
    pub fn new(instance: &str, method: Method, param: f64, sol: &DnnSdpSolution, time_s: f64) -> Self {
        Self {
            schema: REPORT_SCHEMA.into(),
            version: REPORT_VERSION,
            instance: instance.into(),
            method,
            param,
            status: sol.report.status,
            iterations: sol.report.iterations,
            residuals: sol.residuals,
            primal_objective: sol.primal_objective,
            dual_objective: sol.dual_objective,
            alpha: sol.alpha,
            sigma: sol.report.sigma,
            time_s,
        }
    }
}
