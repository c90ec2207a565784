//! Command-line front end and the on-disk formats.
//!
//! A problem directory holds `Q.mtx` (MatrixMarket coordinate, real symmetric, lower triangle,
//! 1-based), `r.txt`, `l.txt`, `u.txt` (one value per line, `inf`/`-inf` for infinite bounds) and
//! `manifest.json`. Exit codes: 0 success, 2 solver failure, 3 input error.

use std::ffi::OsString;
use std::fmt::Write as _;
use std::fs;
use std::io::{self, Write as _};
use std::path::{Path, PathBuf};
use std::time::Instant;

use clap::{Args, Parser, Subcommand, ValueEnum};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::apg::{apg_solve, estimate_lipschitz, ApgParams, ApgStop, BqpProblem};
use crate::error::BqpError;
use crate::linalg::SymMatrix;
use crate::pas::{apg_pas_solve, kkt_residual, pas_from_approximation, KktResidual, PasParams};
use crate::ppa::{appa_solve, ppa_solve, PpaParams, SolverReport};
use crate::problems::{
    gen_deblur, gen_pde, gen_random_ncbqp, gen_random_nnls, gen_saddle, KernelSpec, PdeParams, ProblemKind,
    ProblemManifest,
};

pub const EXIT_OK: i32 = 0;
pub const EXIT_SOLVER: i32 = 2;
pub const EXIT_INPUT: i32 = 3;

/// Fixed header of benchmark tables.
pub const CSV_HEADER: &str = "problem,algorithm,n,status,time_s,outer_iters,apg_iters,pas_steps,appa_steps,g_inf,sign_violation,objective,chol_flops,chol_flops_unsorted";

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Input(String),
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: io::Error },
    #[error("solver failed: {0}")]
    Solver(#[from] BqpError),
    #[error("KKT residual {0:.3e} above tolerance {1:.3e}")]
    Kkt(f64, f64),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Input(_) | CliError::Io { .. } => EXIT_INPUT,
            CliError::Solver(BqpError::InvalidInput(_) | BqpError::DimensionMismatch { .. }) => EXIT_INPUT,
            CliError::Solver(_) | CliError::Kkt(..) => EXIT_SOLVER,
        }
    }
}

type CliResult<T> = std::result::Result<T, CliError>;

fn io_err(path: &Path) -> impl FnOnce(io::Error) -> CliError + '_ {
    move |source| CliError::Io { path: path.to_path_buf(), source }
}

fn fmt_f64(v: f64) -> String {
    if v == f64::INFINITY {
        "inf".into()
    } else if v == f64::NEG_INFINITY {
        "-inf".into()
    } else {
        format!("{v:.16e}")
    }
}

/// One value per line in scientific notation with 17 significant digits.
pub fn write_vector(path: &Path, v: &[f64]) -> CliResult<()> {
    let mut s = String::with_capacity(v.len() * 24);
    for &x in v {
        s.push_str(&fmt_f64(x));
        s.push('\n');
    }
    fs::write(path, s).map_err(io_err(path))
}

pub fn read_vector(path: &Path) -> CliResult<Vec<f64>> {
    let text = fs::read_to_string(path).map_err(io_err(path))?;
    text.lines()
        .map(str::trim)
        .filter(|l| !l.is_empty() && !l.starts_with('%') && !l.starts_with('#'))
        .enumerate()
        .map(|(k, l)| {
            l.parse::<f64>().map_err(|e| CliError::Input(format!("{}: value {}: {e}", path.display(), k + 1)))
        })
        .collect()
}

/// MatrixMarket coordinate, real symmetric, lower-triangle entries, zeros omitted.
pub fn write_matrix_market(path: &Path, m: &SymMatrix) -> CliResult<()> {
    let n = m.dim();
    let mut body = String::new();
    let mut nnz = 0usize;
    for i in 0..n {
        for (j, &v) in m.row(i)[..=i].iter().enumerate() {
            if v != 0.0 {
                nnz += 1;
                let _ = writeln!(body, "{} {} {}", i + 1, j + 1, fmt_f64(v));
            }
        }
    }
    let text = format!("%%MatrixMarket matrix coordinate real symmetric\n{n} {n} {nnz}\n{body}");
    fs::write(path, text).map_err(io_err(path))
}

/// Reads `symmetric` (either triangle) or `general` coordinate real matrices.
pub fn read_matrix_market(path: &Path) -> CliResult<SymMatrix> {
    let bad = |msg: String| CliError::Input(format!("{}: {msg}", path.display()));
    let text = fs::read_to_string(path).map_err(io_err(path))?;
    let mut lines = text.lines();
    let header = lines.next().ok_or_else(|| bad("empty file".into()))?.to_ascii_lowercase();
    let fields: Vec<&str> = header.split_whitespace().collect();
    if fields.len() < 5
        || fields[0] != "%%matrixmarket"
        || fields[1] != "matrix"
        || fields[2] != "coordinate"
        || fields[3] != "real"
    {
        return Err(bad(format!("unsupported header '{header}'")));
    }
    let symmetric = match fields[4] {
        "symmetric" => true,
        "general" => false,
        other => return Err(bad(format!("unsupported symmetry '{other}'"))),
    };
    let mut body = lines.map(str::trim).filter(|l| !l.is_empty() && !l.starts_with('%'));
    let size: Vec<usize> = body
        .next()
        .ok_or_else(|| bad("missing size line".into()))?
        .split_whitespace()
        .map(|t| t.parse().map_err(|e| bad(format!("size line: {e}"))))
        .collect::<CliResult<_>>()?;
    if size.len() != 3 || size[0] != size[1] {
        return Err(bad("expected a square size line 'n n nnz'".into()));
    }
    let (n, nnz) = (size[0], size[2]);
    let mut dense = vec![0.0; n * n];
    let mut count = 0;
    for line in body {
        let t: Vec<&str> = line.split_whitespace().collect();
        if t.len() != 3 {
            return Err(bad(format!("malformed entry '{line}'")));
        }
        let i: usize = t[0].parse().map_err(|e| bad(format!("row index: {e}")))?;
        let j: usize = t[1].parse().map_err(|e| bad(format!("column index: {e}")))?;
        let v: f64 = t[2].parse().map_err(|e| bad(format!("value: {e}")))?;
        if i == 0 || j == 0 || i > n || j > n {
            return Err(bad(format!("index ({i}, {j}) out of range")));
        }
        dense[(i - 1) * n + (j - 1)] = v;
        if symmetric {
            dense[(j - 1) * n + (i - 1)] = v;
        }
        count += 1;
    }
    if count != nnz {
        return Err(bad(format!("expected {nnz} entries, found {count}")));
    }
    SymMatrix::from_dense(n, dense).map_err(|e| bad(e.to_string()))
}

pub fn write_problem_dir(dir: &Path, p: &BqpProblem, manifest: &ProblemManifest) -> CliResult<()> {
    fs::create_dir_all(dir).map_err(io_err(dir))?;
    write_matrix_market(&dir.join("Q.mtx"), p.h())?;
    write_vector(&dir.join("r.txt"), p.f())?;
    write_vector(&dir.join("l.txt"), p.lower())?;
    write_vector(&dir.join("u.txt"), p.upper())?;
    let path = dir.join("manifest.json");
    let json = serde_json::to_string_pretty(manifest).expect("manifest serializes");
    fs::write(&path, json + "\n").map_err(io_err(&path))
}

/// Reads a problem directory; the manifest is optional.
pub fn read_problem_dir(dir: &Path) -> CliResult<(BqpProblem, Option<ProblemManifest>)> {
    let h = read_matrix_market(&dir.join("Q.mtx"))?;
    let f = read_vector(&dir.join("r.txt"))?;
    let l = read_vector(&dir.join("l.txt"))?;
    let u = read_vector(&dir.join("u.txt"))?;
    let p = BqpProblem::new(h, f, l, u).map_err(|e| CliError::Input(format!("{}: {e}", dir.display())))?;
    let path = dir.join("manifest.json");
    let manifest = if path.exists() {
        let text = fs::read_to_string(&path).map_err(io_err(&path))?;
        Some(serde_json::from_str(&text).map_err(|e| CliError::Input(format!("{}: {e}", path.display())))?)
    } else {
        None
    };
    Ok((p, manifest))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum GenKind {
    Nnls,
    Deblur,
    /// Dense random indefinite problem.
    NcbqpD,
    /// Sparse random indefinite problem (density 0.01 unless given).
    NcbqpS,
    ObstacleA,
    ObstacleB,
    Torsion,
    Journal,
    Saddle,
}

/// Generator parameters, shared by `generate` and benchmark suites.
#[derive(Debug, Clone, PartialEq, Args, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GenerateSpec {
    #[arg(long, value_enum)]
    pub kind: GenKind,
    /// Rows of the least-squares matrix (default 2n).
    #[arg(long)]
    #[serde(default)]
    pub m: Option<usize>,
    /// Number of variables for random families.
    #[arg(long)]
    #[serde(default)]
    pub n: Option<usize>,
    #[arg(long)]
    #[serde(default)]
    pub density: Option<f64>,
    /// Diagonal shift of indefinite problems.
    #[arg(long)]
    #[serde(default)]
    pub lambda: Option<f64>,
    /// Tikhonov weight.
    #[arg(long)]
    #[serde(default)]
    pub beta: Option<f64>,
    #[arg(long)]
    #[serde(default)]
    pub nx: Option<usize>,
    #[arg(long)]
    #[serde(default)]
    pub ny: Option<usize>,
    /// Constant load of grid problems.
    #[arg(long)]
    #[serde(default)]
    pub c: Option<f64>,
    /// Journal bearing eccentricity.
    #[arg(long)]
    #[serde(default)]
    pub eps: Option<f64>,
    /// Journal bearing half-height.
    #[arg(long)]
    #[serde(default)]
    pub b: Option<f64>,
    /// Deblurring image side.
    #[arg(long)]
    #[serde(default)]
    pub side: Option<usize>,
    /// Blur kernel standard deviation (0 is the identity).
    #[arg(long)]
    #[serde(default)]
    pub sigma: Option<f64>,
    /// Blur kernel radius.
    #[arg(long)]
    #[serde(default)]
    pub radius: Option<usize>,
    /// Observation noise level.
    #[arg(long)]
    #[serde(default)]
    pub noise: Option<f64>,
    #[arg(long, default_value_t = 0)]
    #[serde(default)]
    pub seed: u64,
}

impl GenerateSpec {
    pub fn build(&self) -> CliResult<(BqpProblem, ProblemManifest)> {
        let need_n = || self.n.ok_or_else(|| CliError::Input(format!("--n is required for {:?}", self.kind)));
        let grid = |kind: ProblemKind| -> CliResult<(BqpProblem, ProblemManifest)> {
            let nx = self.nx.ok_or_else(|| CliError::Input("--nx is required for grid problems".into()))?;
            let ny = self.ny.unwrap_or(nx);
            let params = PdeParams { c: self.c, eccentricity: self.eps, half_height: self.b };
            Ok(gen_pde(kind, nx, ny, params)?)
        };
        Ok(match self.kind {
            GenKind::Nnls => {
                let n = need_n()?;
                let inst = gen_random_nnls(
                    self.m.unwrap_or(2 * n),
                    n,
                    self.density.unwrap_or(1.0),
                    self.seed,
                    self.beta.unwrap_or(0.0),
                )?;
                (inst.problem, inst.manifest)
            }
            GenKind::NcbqpD | GenKind::NcbqpS => {
                let default_density = if self.kind == GenKind::NcbqpD { 1.0 } else { 0.01 };
                gen_random_ncbqp(
                    need_n()?,
                    self.density.unwrap_or(default_density),
                    self.lambda.unwrap_or(0.0),
                    self.seed,
                )?
            }
            GenKind::Deblur => {
                let kernel = KernelSpec { sigma: self.sigma.unwrap_or(1.5), radius: self.radius.unwrap_or(3) };
                let inst = gen_deblur(
                    self.side.unwrap_or(16),
                    kernel,
                    self.noise.unwrap_or(0.0),
                    self.beta.unwrap_or(1e-3),
                    self.seed,
                )?;
                (inst.problem, inst.manifest)
            }
            GenKind::ObstacleA => grid(ProblemKind::ObstacleA)?,
            GenKind::ObstacleB => grid(ProblemKind::ObstacleB)?,
            GenKind::Torsion => grid(ProblemKind::Torsion)?,
            GenKind::Journal => grid(ProblemKind::Journal)?,
            GenKind::Saddle => gen_saddle(),
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Algorithm {
    ApgOnly,
    PasOnly,
    ApgPas,
    Ppa,
    Appa,
}

impl Algorithm {
    fn name(self) -> &'static str {
        match self {
            Algorithm::ApgOnly => "apg-only",
            Algorithm::PasOnly => "pas-only",
            Algorithm::ApgPas => "apg-pas",
            Algorithm::Ppa => "ppa",
            Algorithm::Appa => "appa",
        }
    }

    fn is_proximal(self) -> bool {
        matches!(self, Algorithm::Ppa | Algorithm::Appa)
    }

    fn uses_pas(self) -> bool {
        self != Algorithm::ApgOnly
    }
}

/// Solver settings; unset fields keep the library defaults.
#[derive(Debug, Clone, PartialEq, Args, Serialize, Deserialize, Default)]
#[serde(default, deny_unknown_fields)]
pub struct SolverOptions {
    /// Gradient step constant (default: power-iteration estimate).
    #[arg(long)]
    pub lipschitz: Option<f64>,
    #[arg(long)]
    pub s_max: Option<usize>,
    #[arg(long)]
    pub eps1: Option<f64>,
    #[arg(long)]
    pub eps2: Option<f64>,
    #[arg(long)]
    pub max_iter: Option<usize>,
    /// Filtration threshold.
    #[arg(long)]
    pub eta: Option<f64>,
    /// Complementarity margin of the homotopy start.
    #[arg(long)]
    pub pas_delta: Option<f64>,
    /// Initialize the working set in ascending index order instead of by bound margin.
    #[arg(long)]
    pub no_sort: bool,
    /// Proximal shift margin.
    #[arg(long)]
    pub delta: Option<f64>,
    /// Fixed proximal shift.
    #[arg(long)]
    pub gamma: Option<f64>,
    /// Outer step tolerance.
    #[arg(long)]
    pub tol: Option<f64>,
    /// Sufficient-decrease threshold.
    #[arg(long)]
    pub f_eps: Option<f64>,
    /// Always finish each proximal subproblem with the active-set stage.
    #[arg(long)]
    pub no_early_exit: bool,
    #[arg(long)]
    pub switch_eps: Option<f64>,
    #[arg(long)]
    pub switch_window: Option<usize>,
    #[arg(long)]
    pub max_outer: Option<usize>,
    /// KKT tolerance for a successful exit.
    #[arg(long)]
    pub kkt_tol: Option<f64>,
}

impl SolverOptions {
    /// Rejects options the algorithm would ignore.
    pub fn check(&self, algo: Algorithm) -> CliResult<()> {
        let proximal = [
            ("--delta", self.delta.is_some()),
            ("--gamma", self.gamma.is_some()),
            ("--tol", self.tol.is_some()),
            ("--f-eps", self.f_eps.is_some()),
            ("--no-early-exit", self.no_early_exit),
            ("--max-outer", self.max_outer.is_some()),
        ];
        let accel = [("--switch-eps", self.switch_eps.is_some()), ("--switch-window", self.switch_window.is_some())];
        let pas =
            [("--eta", self.eta.is_some()), ("--pas-delta", self.pas_delta.is_some()), ("--no-sort", self.no_sort)];
        let reject = |set: &[(&str, bool)]| match set.iter().find(|(_, on)| *on) {
            Some((flag, _)) => Err(CliError::Input(format!("{flag} does not apply to --algo {}", algo.name()))),
            None => Ok(()),
        };
        if !algo.is_proximal() {
            reject(&proximal)?;
        }
        if algo != Algorithm::Appa {
            reject(&accel)?;
        }
        if !algo.uses_pas() {
            reject(&pas)?;
        }
        if let Some(t) = self.kkt_tol {
            if !(t >= 0.0) {
                return Err(CliError::Input(format!("--kkt-tol must be non-negative, got {t}")));
            }
        }
        if algo.is_proximal() && self.lipschitz.is_some() {
            return Err(CliError::Input("--lipschitz does not apply to proximal algorithms".into()));
        }
        Ok(())
    }

    fn apg(&self, lipschitz: f64) -> ApgParams {
        let d = ApgParams::with_lipschitz(lipschitz);
        ApgParams {
            lipschitz,
            s_max: self.s_max.unwrap_or(d.s_max),
            eps1: self.eps1.unwrap_or(d.eps1),
            eps2: self.eps2.unwrap_or(d.eps2),
            max_iter: self.max_iter.unwrap_or(d.max_iter),
        }
    }

    fn pas(&self) -> PasParams {
        let d = PasParams::default();
        PasParams { eta: self.eta.unwrap_or(d.eta), delta: self.pas_delta.unwrap_or(d.delta), sort: !self.no_sort, ..d }
    }

    fn ppa(&self) -> PpaParams {
        let d = PpaParams::default();
        PpaParams {
            delta: self.delta,
            gamma: self.gamma,
            tol: self.tol.unwrap_or(d.tol),
            f_eps: self.f_eps,
            early_exit: !self.no_early_exit,
            switch_eps: self.switch_eps.unwrap_or(d.switch_eps),
            switch_window: self.switch_window.unwrap_or(d.switch_window),
            max_outer: self.max_outer.unwrap_or(d.max_outer),
            apg: self.apg(1.0),
            pas: self.pas(),
            record_iterates: false,
        }
    }

    pub fn kkt_tolerance(&self) -> f64 {
        self.kkt_tol.unwrap_or(1e-8)
    }
}

/// Outcome of one solver run as written to JSON.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub problem: String,
    pub algorithm: Algorithm,
    pub options: SolverOptions,
    pub status: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub apg_stop_reason: Option<ApgStop>,
    pub report: SolverReport,
}

fn empty_report(x: Vec<f64>) -> SolverReport {
    SolverReport {
        x_star: x,
        outer_iters: 0,
        inner_apg_iters: 0,
        pas_steps: 0,
        appa_accelerated_steps: 0,
        objective: 0.0,
        kkt: KktResidual::default(),
        chol_update_flops: 0,
        wall_time: 0.0,
        gamma: 0.0,
        early_exits: 0,
        step_norms: Vec::new(),
        objective_history: Vec::new(),
        accelerated: Vec::new(),
        iterates: Vec::new(),
    }
}

/// Runs one algorithm; `x0` defaults to the projection of zero.
pub fn run_algorithm(
    p: &BqpProblem,
    x0: Option<&[f64]>,
    algo: Algorithm,
    opts: &SolverOptions,
) -> Result<(SolverReport, Option<ApgStop>), BqpError> {
    let start = Instant::now();
    let zero = vec![0.0; p.dim()];
    let x0 = p.project(x0.unwrap_or(&zero));
    let lipschitz = || opts.lipschitz.unwrap_or_else(|| estimate_lipschitz(p.h(), 1e-6));
    let (mut report, stop) = match algo {
        Algorithm::Ppa => (ppa_solve(p.h(), p.f(), p.lower(), p.upper(), &x0, &opts.ppa())?, None),
        Algorithm::Appa => (appa_solve(p.h(), p.f(), p.lower(), p.upper(), &x0, &opts.ppa())?, None),
        Algorithm::ApgOnly => {
            let out = apg_solve(p, &x0, &opts.apg(lipschitz()))?;
            let mut r = empty_report(out.y);
            r.inner_apg_iters = out.iterations;
            (r, Some(out.stop_reason))
        }
        Algorithm::PasOnly => {
            let out = pas_from_approximation(p, &x0, &opts.pas())?;
            let mut r = empty_report(out.z);
            r.pas_steps = out.steps;
            r.chol_update_flops = out.update_flops;
            (r, None)
        }
        Algorithm::ApgPas => {
            let out = apg_pas_solve(p, &x0, &opts.apg(lipschitz()), &opts.pas())?;
            let mut r = empty_report(out.z);
            r.inner_apg_iters = out.apg.iterations;
            r.pas_steps = out.pas.steps;
            r.chol_update_flops = out.pas.update_flops;
            (r, Some(out.apg.stop_reason))
        }
    };
    if !algo.is_proximal() {
        report.objective = p.objective(&report.x_star);
        report.kkt = kkt_residual(p, &report.x_star);
        report.wall_time = start.elapsed().as_secs_f64();
    }
    Ok((report, stop))
}

#[derive(Debug, Parser)]
#[command(name = "bqp", version, about = "Box-constrained quadratic programming solvers")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Write a generated problem directory.
    Generate {
        #[command(flatten)]
        spec: GenerateSpec,
        #[arg(long)]
        out: PathBuf,
    },
    /// Solve a problem directory and write a JSON report.
    Solve {
        problem: PathBuf,
        #[arg(long, value_enum, default_value = "apg-pas")]
        algo: Algorithm,
        /// Starting point (vector file).
        #[arg(long)]
        x0: Option<PathBuf>,
        #[command(flatten)]
        options: SolverOptions,
        /// Report path (default: standard output).
        #[arg(long)]
        report: Option<PathBuf>,
        /// Write the solution vector here.
        #[arg(long)]
        solution: Option<PathBuf>,
    },
    /// Run a suite of problems × algorithms and write a CSV table.
    Bench {
        suite: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
}

/// Benchmark suite file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Suite {
    pub problems: Vec<SuiteProblem>,
    pub algorithms: Vec<Algorithm>,
    #[serde(default)]
    pub options: SolverOptions,
    /// Also record update flops with the ascending-index working set.
    #[serde(default)]
    pub compare_sort: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SuiteProblem {
    pub name: String,
    /// Problem directory, relative to the suite file.
    #[serde(default)]
    pub dir: Option<PathBuf>,
    #[serde(default)]
    pub generate: Option<GenerateSpec>,
}

/// One benchmark table row.
#[derive(Debug, Clone, PartialEq)]
pub struct BenchRow {
    pub problem: String,
    pub algorithm: Algorithm,
    pub n: usize,
    pub status: String,
    pub report: Option<SolverReport>,
    pub unsorted_flops: Option<u64>,
}

impl BenchRow {
    pub fn to_csv(&self) -> String {
        let status = self.status.replace([',', '\n'], ";");
        let mut s = format!("{},{},{},{}", self.problem, self.algorithm.name(), self.n, status);
        match &self.report {
            Some(r) => {
                let _ = write!(
                    s,
                    ",{},{},{},{},{},{},{},{},{}",
                    fmt_f64(r.wall_time),
                    r.outer_iters,
                    r.inner_apg_iters,
                    r.pas_steps,
                    r.appa_accelerated_steps,
                    fmt_f64(r.kkt.g_inf),
                    fmt_f64(r.kkt.sign_violation),
                    fmt_f64(r.objective),
                    r.chol_update_flops
                );
            }
            None => s.push_str(",,,,,,,,,"),
        }
        s.push(',');
        if let Some(f) = self.unsorted_flops {
            let _ = write!(s, "{f}");
        }
        s
    }
}

/// Runs every (problem, algorithm) cell, in parallel when allowed; rows come back in suite order.
pub fn run_suite(suite: &Suite, base: &Path) -> CliResult<Vec<BenchRow>> {
    if suite.problems.is_empty() || suite.algorithms.is_empty() {
        return Err(CliError::Input("suite needs at least one problem and one algorithm".into()));
    }
    let problems: Vec<(String, CliResult<BqpProblem>)> = suite
        .problems
        .iter()
        .map(|sp| {
            let p = match (&sp.dir, &sp.generate) {
                (Some(dir), None) => read_problem_dir(&base.join(dir)).map(|(p, _)| p),
                (None, Some(spec)) => spec.build().map(|(p, _)| p),
                _ => Err(CliError::Input(format!("problem '{}' needs exactly one of dir or generate", sp.name))),
            };
            (sp.name.clone(), p)
        })
        .collect();
    let cells: Vec<(usize, Algorithm)> =
        (0..problems.len()).flat_map(|i| suite.algorithms.iter().map(move |&a| (i, a))).collect();
    let run_cell = |&(i, algo): &(usize, Algorithm)| -> BenchRow {
        let (name, problem) = &problems[i];
        let mut row = BenchRow {
            problem: name.clone(),
            algorithm: algo,
            n: 0,
            status: String::new(),
            report: None,
            unsorted_flops: None,
        };
        let p = match problem {
            Ok(p) => p,
            Err(e) => {
                row.status = format!("input error: {e}");
                return row;
            }
        };
        row.n = p.dim();
        if let Err(e) = suite.options.check(algo) {
            row.status = format!("input error: {e}");
            return row;
        }
        match run_algorithm(p, None, algo, &suite.options) {
            Ok((rep, _)) => {
                let ok = algo == Algorithm::ApgOnly || rep.kkt.max() <= suite.options.kkt_tolerance();
                row.status = if ok { "ok".into() } else { "kkt_failed".into() };
                row.report = Some(rep);
            }
            Err(e) => row.status = format!("error: {e}"),
        }
        if suite.compare_sort && algo.uses_pas() && row.report.is_some() {
            let opts = SolverOptions { no_sort: true, ..suite.options.clone() };
            row.unsorted_flops = run_algorithm(p, None, algo, &opts).ok().map(|(r, _)| r.chol_update_flops);
        }
        row
    };
    let threads = std::env::var("BQP_THREADS").ok().and_then(|v| v.parse::<usize>().ok()).unwrap_or(0);
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build()
        .map_err(|e| CliError::Input(format!("thread pool: {e}")))?;
    Ok(pool.install(|| cells.par_iter().map(run_cell).collect()))
}

pub fn render_csv(rows: &[BenchRow]) -> String {
    let mut s = String::from(CSV_HEADER);
    s.push('\n');
    for r in rows {
        s.push_str(&r.to_csv());
        s.push('\n');
    }
    s
}

fn cmd_generate(spec: &GenerateSpec, out: &Path) -> CliResult<String> {
    let (p, manifest) = spec.build()?;
    write_problem_dir(out, &p, &manifest)?;
    Ok(format!("wrote {} (n = {}, checksum {})\n", out.display(), p.dim(), manifest.checksum))
}

fn cmd_solve(
    problem: &Path,
    algo: Algorithm,
    x0: Option<&Path>,
    options: &SolverOptions,
    report: Option<&Path>,
    solution: Option<&Path>,
) -> CliResult<String> {
    options.check(algo)?;
    let (p, _) = read_problem_dir(problem)?;
    let x0 = x0.map(read_vector).transpose()?;
    if let Some(x) = &x0 {
        if x.len() != p.dim() {
            return Err(CliError::Input(format!("--x0 has {} values, problem has {}", x.len(), p.dim())));
        }
    }
    let (rep, stop) = run_algorithm(&p, x0.as_deref(), algo, options)?;
    let tol = options.kkt_tolerance();
    let kkt_ok = algo == Algorithm::ApgOnly || rep.kkt.max() <= tol;
    let run = RunReport {
        problem: problem.display().to_string(),
        algorithm: algo,
        options: options.clone(),
        status: if kkt_ok { "ok".into() } else { "kkt_failed".into() },
        apg_stop_reason: stop,
        report: rep,
    };
    if let Some(path) = solution {
        write_vector(path, &run.report.x_star)?;
    }
    let json = serde_json::to_string_pretty(&run).expect("report serializes") + "\n";
    let out = match report {
        Some(path) => {
            fs::write(path, &json).map_err(io_err(path))?;
            String::new()
        }
        None => json,
    };
    if kkt_ok {
        Ok(out)
    } else {
        print!("{out}");
        Err(CliError::Kkt(run.report.kkt.max(), tol))
    }
}

fn cmd_bench(suite_path: &Path, out: &Path) -> CliResult<String> {
    let text = fs::read_to_string(suite_path).map_err(io_err(suite_path))?;
    let suite: Suite =
        serde_json::from_str(&text).map_err(|e| CliError::Input(format!("{}: {e}", suite_path.display())))?;
    let base = suite_path.parent().unwrap_or(Path::new("."));
    let rows = run_suite(&suite, base)?;
    fs::write(out, render_csv(&rows)).map_err(io_err(out))?;
    let failed = rows.iter().filter(|r| r.status != "ok").count();
    Ok(format!("wrote {} rows to {} ({failed} not ok)\n", rows.len(), out.display()))
}

/// Parses arguments, runs the command and returns the process exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_INPUT } else { EXIT_OK };
        }
    };
    let result = match &cli.command {
        Command::Generate { spec, out } => cmd_generate(spec, out),
        Command::Solve { problem, algo, x0, options, report, solution } => {
            cmd_solve(problem, *algo, x0.as_deref(), options, report.as_deref(), solution.as_deref())
        }
        Command::Bench { suite, out } => cmd_bench(suite, out),
    };
    match result {
        Ok(msg) => {
            print!("{msg}");
            let _ = io::stdout().flush();
            EXIT_OK
        }
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn vector_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("v.txt");
        let v = vec![0.1, -1e-300, 1.0 / 3.0, f64::INFINITY, f64::NEG_INFINITY, 0.0, 123456789.12345679];
        write_vector(&path, &v).unwrap();
        assert_eq!(read_vector(&path).unwrap(), v);
    }

    #[test]
    fn matrix_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.mtx");
        let m = SymMatrix::from_dense(3, vec![2.0, 0.1, 0.0, 0.1, 1.0 / 3.0, -7.5, 0.0, -7.5, 1e-17]).unwrap();
        write_matrix_market(&path, &m).unwrap();
        assert_eq!(read_matrix_market(&path).unwrap(), m);
    }

    #[test]
    fn general_matrix_market_accepted() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("g.mtx");
        fs::write(&path, "%%MatrixMarket matrix coordinate real general\n% c\n2 2 4\n1 1 1\n1 2 2\n2 1 2\n2 2 5\n")
            .unwrap();
        let m = read_matrix_market(&path).unwrap();
        assert_eq!(m.get(0, 1), 2.0);
        fs::write(&path, "%%MatrixMarket matrix coordinate real general\n2 2 2\n1 2 2\n2 1 3\n").unwrap();
        assert!(read_matrix_market(&path).is_err());
    }

    #[test]
    fn options_checked_against_algorithm() {
        let opts = SolverOptions { gamma: Some(1.0), ..SolverOptions::default() };
        assert!(opts.check(Algorithm::ApgPas).is_err());
        assert!(opts.check(Algorithm::Ppa).is_ok());
        let opts = SolverOptions { switch_window: Some(2), ..SolverOptions::default() };
        assert!(opts.check(Algorithm::Ppa).is_err());
        assert!(opts.check(Algorithm::Appa).is_ok());
        let opts = SolverOptions { no_sort: true, ..SolverOptions::default() };
        assert!(opts.check(Algorithm::ApgOnly).is_err());
    }

    #[test]
    fn csv_row_layout() {
        let row = BenchRow {
            problem: "p".into(),
            algorithm: Algorithm::Ppa,
            n: 3,
            status: "error: a, b".into(),
            report: None,
            unsorted_flops: None,
        };
        let line = row.to_csv();
        assert_eq!(line.split(',').count(), CSV_HEADER.split(',').count());
        assert!(line.starts_with("p,ppa,3,error: a; b,"));
    }
}
