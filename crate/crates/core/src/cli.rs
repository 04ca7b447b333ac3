//! Command-line front end: `fit`, `simulate` and `moments`.
//!
//! Exit codes: 0 on success, 1 on validation or runtime failure, 2 on usage errors.

use std::fmt::Write as _;
use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};
use rayon::prelude::*;

use crate::inference::{infer, InferOptions, QpeInference};
use crate::jackknife::{bias_correct_from, CorrectedFit};
use crate::kernels::{compute_moments, BaseKernel, BoxGeometry, KernelSpec, MomentSet};
use crate::model::{read_panel_csv, EvalSpec, PanelData};
use crate::qr_core::{fit_llqr, Estimator, FitResult, SolverOptions};
use crate::simulate::{run_monte_carlo, write_report, DgpSpec, ErrorDist, Family, McConfig, McEstimator, ReportFormat};
use crate::sqr_core::fit_llsqr;

/// Environment variable read when `--threads` is absent.
pub const THREADS_ENV: &str = "PANEL_QPE_THREADS";

#[derive(Debug, Parser)]
#[command(name = "panel-qpe", version, about = "Quantile partial effects in fixed-effects panels")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Fit LLQR / LLSQR on a panel file.
    Fit(FitArgs),
    /// Run the Monte Carlo experiment and write a bias/MSE report.
    Simulate(SimulateArgs),
    /// Print kernel moment constants for a geometry.
    Moments(MomentsArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum EstimatorChoice {
    Llqr,
    Llsqr,
    Both,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum OutFormat {
    Csv,
    Kv,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum SimFormat {
    Csv,
    Kv,
    Table,
}

#[derive(Debug, Args)]
#[command(allow_negative_numbers = true)]
pub struct FitArgs {
    /// Long-format panel with header `id,t,y,x1,...,xd`.
    #[arg(long)]
    pub input: PathBuf,
    /// Field delimiter of the input file.
    #[arg(long, default_value = ",")]
    pub delimiter: char,
    /// Quantile levels, comma separated.
    #[arg(long, value_delimiter = ',', required = true)]
    pub tau: Vec<f64>,
    /// Evaluation points, comma separated; coordinates of one point joined by `:`.
    #[arg(long, value_delimiter = ',', required = true, allow_hyphen_values = true)]
    pub x: Vec<String>,
    #[arg(long)]
    pub h: f64,
    #[arg(long, default_value_t = 0.5)]
    pub b: f64,
    #[arg(long, value_enum, default_value_t = EstimatorChoice::Both)]
    pub estimator: EstimatorChoice,
    /// Add the split-panel jackknife estimate.
    #[arg(long)]
    pub bias_correct: bool,
    /// Regressor support `LO..HI`, once per dimension; inferred from the data otherwise.
    #[arg(long, value_parser = parse_range, allow_hyphen_values = true)]
    pub support: Vec<(f64, f64)>,
    /// Estimate curvature and report b1 at boundary points.
    #[arg(long)]
    pub curvature: bool,
    /// Residual-density bandwidth (normal-reference rule by default).
    #[arg(long)]
    pub pilot_bw: Option<f64>,
    /// Localization kernel (epanechnikov, uniform, biweight).
    #[arg(long, default_value = "epanechnikov")]
    pub kernel: String,
    #[arg(long, value_enum, default_value_t = OutFormat::Csv)]
    pub format: OutFormat,
    #[arg(long, env = THREADS_ENV)]
    pub threads: Option<usize>,
}

#[derive(Debug, Args)]
#[command(allow_negative_numbers = true)]
pub struct SimulateArgs {
    #[arg(long, default_value = "location-scale")]
    pub dgp: String,
    #[arg(long, default_value = "normal")]
    pub error: String,
    #[arg(long, default_value_t = 100)]
    pub n: usize,
    #[arg(long, default_value_t = 100)]
    pub t: usize,
    #[arg(long, default_value_t = 500)]
    pub reps: usize,
    #[arg(long, default_value_t = 1)]
    pub seed: u64,
    /// Quantile levels: a comma list or `start:step:end`.
    #[arg(long, default_value = "0.25")]
    pub tau: String,
    /// Evaluation points: a comma list or `start:step:end`.
    #[arg(long, default_value = "-2:0.4:2", allow_hyphen_values = true)]
    pub x_grid: String,
    #[arg(long, default_value_t = 0.8)]
    pub h: f64,
    #[arg(long, default_value_t = 0.5)]
    pub b: f64,
    /// Estimators, comma separated (llqr, llqr_bc, llsqr, llsqr_bc).
    #[arg(long, value_delimiter = ',', default_value = "llqr,llqr_bc,llsqr,llsqr_bc")]
    pub estimators: Vec<String>,
    /// Slope of the Example 1/2 designs.
    #[arg(long, default_value_t = 1.0)]
    pub beta: f64,
    #[arg(long, default_value_t = 1.0)]
    pub gamma: f64,
    #[arg(long, default_value_t = 0.0)]
    pub theta: f64,
    /// Localization kernel (epanechnikov, uniform, biweight).
    #[arg(long, default_value = "epanechnikov")]
    pub kernel: String,
    #[arg(long, value_enum, default_value_t = SimFormat::Csv)]
    pub format: SimFormat,
    /// Report path; standard output when absent.
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long, env = THREADS_ENV)]
    pub threads: Option<usize>,
}

#[derive(Debug, Args)]
#[command(allow_negative_numbers = true)]
pub struct MomentsArgs {
    #[arg(long, default_value = "epanechnikov")]
    pub kernel: String,
    #[arg(long, default_value_t = 1)]
    pub dim: usize,
    /// Clip of the kernel support `LO..HI`, once per dimension.
    #[arg(long, value_parser = parse_range, allow_hyphen_values = true)]
    pub clip: Vec<(f64, f64)>,
    #[arg(long, value_enum, default_value_t = OutFormat::Csv)]
    pub format: OutFormat,
}

/// Parses `LO..HI`.
pub fn parse_range(s: &str) -> Result<(f64, f64), String> {
    let (lo, hi) = s.split_once("..").ok_or_else(|| format!("expected LO..HI, got `{s}`"))?;
    let lo: f64 = lo.trim().parse().map_err(|_| format!("bad lower bound in `{s}`"))?;
    let hi: f64 = hi.trim().parse().map_err(|_| format!("bad upper bound in `{s}`"))?;
    Ok((lo, hi))
}

/// Parses `a,b,c` or `start:step:end` (inclusive, to within half a step).
pub fn parse_grid(s: &str) -> Result<Vec<f64>, String> {
    let s = s.trim();
    if s.is_empty() {
        return Ok(Vec::new());
    }
    let parts: Vec<&str> = s.split(':').collect();
    if parts.len() == 3 && !s.contains(',') {
        let v: Vec<f64> = parts
            .iter()
            .map(|p| p.trim().parse::<f64>().map_err(|_| format!("bad number in grid `{s}`")))
            .collect::<Result<_, _>>()?;
        let (start, step, end) = (v[0], v[1], v[2]);
        if !(step > 0.0) || !(end >= start) {
            return Err(format!("grid `{s}` needs step > 0 and end >= start"));
        }
        let count = ((end - start) / step + 0.5).floor() as usize;
        return Ok((0..=count).map(|k| ((start + step * k as f64) * 1e12).round() / 1e12).collect());
    }
    s.split(',')
        .map(|p| p.trim().parse::<f64>().map_err(|_| format!("bad number `{p}` in list `{s}`")))
        .collect()
}

fn parse_point(s: &str) -> Result<Vec<f64>, String> {
    s.split(':')
        .map(|c| c.trim().parse::<f64>().map_err(|_| format!("bad coordinate `{c}` in point `{s}`")))
        .collect()
}

/// Runs the CLI on `args` (including the program name), writing to the given streams.
pub fn run_with<I, T>(args: I, stdout: &mut dyn std::io::Write, stderr: &mut dyn std::io::Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let text = e.render().to_string();
            if code == 0 {
                let _ = stdout.write_all(text.as_bytes());
            } else {
                let _ = stderr.write_all(text.as_bytes());
            }
            return code;
        }
    };
    let result = match cli.command {
        Command::Fit(a) => with_threads(a.threads, || cmd_fit(&a)),
        Command::Simulate(a) => with_threads(a.threads, || cmd_simulate(&a)),
        Command::Moments(a) => cmd_moments(&a),
    };
    match result {
        Ok(text) => {
            let _ = stdout.write_all(text.as_bytes());
            0
        }
        Err(msg) => {
            let _ = writeln!(stderr, "error: {msg}");
            1
        }
    }
}

/// Entry point used by the binary.
pub fn main() -> i32 {
    let mut out = std::io::stdout().lock();
    let mut err = std::io::stderr().lock();
    run_with(std::env::args_os(), &mut out, &mut err)
}

fn with_threads(threads: Option<usize>, f: impl FnOnce() -> Result<String, String> + Send) -> Result<String, String> {
    let mut builder = rayon::ThreadPoolBuilder::new();
    if let Some(n) = threads {
        if n == 0 {
            return Err("--threads must be at least 1".into());
        }
        builder = builder.num_threads(n);
    }
    let pool = builder.build().map_err(|e| e.to_string())?;
    pool.install(f)
}

/// One estimator at one (x, tau).
struct PointResult {
    x: Vec<f64>,
    tau: f64,
    estimator: Estimator,
    fit: FitResult,
    inference: QpeInference,
    corrected: Option<CorrectedFit>,
}

fn cmd_fit(a: &FitArgs) -> Result<String, String> {
    if !a.delimiter.is_ascii() {
        return Err("delimiter must be a single ASCII character".into());
    }
    let panel = read_panel_csv(&a.input, a.delimiter as u8).map_err(|e| format!("{}: {e}", a.input.display()))?;
    let d = panel.dim();
    let points: Vec<Vec<f64>> = a.x.iter().map(|s| parse_point(s)).collect::<Result<_, _>>()?;
    if let Some(bad) = points.iter().find(|p| p.len() != d) {
        return Err(format!("evaluation point has {} coordinates, the panel has {d} regressors", bad.len()));
    }
    if !a.support.is_empty() && a.support.len() != d {
        return Err(format!("--support given {} times, expected once per regressor ({d})", a.support.len()));
    }
    let mut specs = Vec::new();
    for x in &points {
        for &tau in &a.tau {
            let spec = if a.support.is_empty() {
                EvalSpec::inferred(&panel, x.clone(), tau, a.h, a.b)
            } else {
                let lo = a.support.iter().map(|r| r.0).collect();
                let hi = a.support.iter().map(|r| r.1).collect();
                EvalSpec::new(x.clone(), tau, a.h, a.b, lo, hi)
            }
            .map_err(|e| e.to_string())?;
            specs.push(spec);
        }
    }
    let opts = SolverOptions {
        kernel: a.kernel.parse()?,
        ..SolverOptions::default()
    };
    let iopts = InferOptions {
        pilot_bw: a.pilot_bw,
        curvature: a.curvature,
    };
    let per_point: Vec<Result<Vec<PointResult>, String>> = specs
        .par_iter()
        .map(|spec| fit_point(&panel, spec, a, &opts, &iopts))
        .collect();
    let mut rows = Vec::new();
    for r in per_point {
        rows.extend(r?);
    }
    Ok(match a.format {
        OutFormat::Csv => fit_csv(&rows),
        OutFormat::Kv => fit_kv(&rows),
    })
}

fn fit_point(
    panel: &PanelData,
    spec: &EvalSpec,
    a: &FitArgs,
    opts: &SolverOptions,
    iopts: &InferOptions,
) -> Result<Vec<PointResult>, String> {
    let at = |e: &dyn std::fmt::Display| format!("x = {}, tau = {}: {e}", join(&spec.x, ":"), spec.tau);
    let qr = fit_llqr(panel, spec, opts).map_err(|e| at(&e))?;
    let mut fits = Vec::new();
    if a.estimator != EstimatorChoice::Llsqr {
        fits.push((Estimator::Llqr, qr.clone()));
    }
    if a.estimator != EstimatorChoice::Llqr {
        let s = fit_llsqr(panel, spec, opts, Some(&qr)).map_err(|e| at(&e))?;
        fits.push((Estimator::Llsqr, s));
    }
    let mut out = Vec::new();
    for (estimator, fit) in fits {
        let inference = infer(panel, spec, &fit, opts, iopts).map_err(|e| at(&e))?;
        let corrected = if a.bias_correct {
            Some(bias_correct_from(panel, spec, estimator, opts, fit.clone()).map_err(|e| at(&e))?)
        } else {
            None
        };
        out.push(PointResult {
            x: spec.x.clone(),
            tau: spec.tau,
            estimator,
            fit,
            inference,
            corrected,
        });
    }
    Ok(out)
}

fn join(v: &[f64], sep: &str) -> String {
    v.iter().map(|x| x.to_string()).collect::<Vec<_>>().join(sep)
}

fn opt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

const FIT_HEADER: [&str; 13] = [
    "x", "tau", "estimator", "coef", "beta", "se", "boundary", "b1", "b2", "beta_bc", "converged", "iterations", "sigma",
];

fn fit_csv(rows: &[PointResult]) -> String {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(FIT_HEADER).expect("in-memory write");
    for r in rows {
        for k in 0..r.fit.beta.len() {
            let converged = r.fit.converged && r.corrected.as_ref().is_none_or(|c| c.converged());
            w.write_record([
                join(&r.x, ":"),
                r.tau.to_string(),
                r.estimator.name().to_string(),
                (k + 1).to_string(),
                r.fit.beta[k].to_string(),
                r.inference.se[k].to_string(),
                r.inference.boundary.to_string(),
                opt(r.inference.b1.as_ref().map(|v| v[k])),
                opt(r.inference.b2.as_ref().map(|v| v[k])),
                opt(r.corrected.as_ref().map(|c| c.beta_bc[k])),
                converged.to_string(),
                r.fit.iterations.to_string(),
                r.inference.sigma_x.to_string(),
            ])
            .expect("in-memory write");
        }
    }
    String::from_utf8(w.into_inner().expect("flush")).expect("utf8")
}

fn fit_kv(rows: &[PointResult]) -> String {
    let mut s = String::new();
    for (n, r) in rows.iter().enumerate() {
        if n > 0 {
            s.push('\n');
        }
        let list = |v: &[f64]| join(v, " ");
        let _ = writeln!(s, "[fit]");
        let _ = writeln!(s, "x = {}", list(&r.x));
        let _ = writeln!(s, "tau = {}", r.tau);
        let _ = writeln!(s, "estimator = {}", r.estimator.name());
        let _ = writeln!(s, "beta = {}", list(&r.fit.beta));
        let _ = writeln!(s, "se = {}", list(&r.inference.se));
        let _ = writeln!(s, "boundary = {}", r.inference.boundary);
        if let Some(b1) = &r.inference.b1 {
            let _ = writeln!(s, "b1 = {}", list(b1));
        }
        if let Some(b2) = &r.inference.b2 {
            let _ = writeln!(s, "b2 = {}", list(b2));
        }
        if let Some(c) = &r.corrected {
            let _ = writeln!(s, "beta_bc = {}", list(&c.beta_bc));
            let _ = writeln!(s, "beta_half1 = {}", list(&c.half1.beta));
            let _ = writeln!(s, "beta_half2 = {}", list(&c.half2.beta));
        }
        let _ = writeln!(s, "sigma = {}", r.inference.sigma_x);
        let _ = writeln!(s, "fx = {}", r.inference.densities.fx);
        let _ = writeln!(s, "fu0 = {}", r.inference.densities.fu0);
        let _ = writeln!(s, "pilot_bw = {}", r.inference.pilot_bw);
        let _ = writeln!(s, "objective = {}", r.fit.objective);
        let _ = writeln!(s, "iterations = {}", r.fit.iterations);
        let _ = writeln!(s, "converged = {}", r.fit.converged);
        let _ = writeln!(s, "dropped_units = {}", r.fit.dropped_units.len());
    }
    s
}

fn cmd_simulate(a: &SimulateArgs) -> Result<String, String> {
    let family: Family = a.dgp.parse()?;
    let error: ErrorDist = a.error.parse()?;
    let dgp = DgpSpec::new(family, a.beta, a.gamma, a.theta, error);
    let estimators: Vec<McEstimator> = a.estimators.iter().map(|s| s.parse()).collect::<Result<_, _>>()?;
    let mut cfg = McConfig::table_defaults(dgp, a.seed);
    cfg.n = a.n;
    cfg.t = a.t;
    cfg.reps = a.reps;
    cfg.tau_grid = parse_grid(&a.tau)?;
    cfg.x_grid = parse_grid(&a.x_grid)?;
    cfg.h = a.h;
    cfg.b = a.b;
    cfg.estimators = estimators;
    cfg.solver.kernel = a.kernel.parse()?;
    cfg.validate().map_err(|e| e.to_string())?;
    let report = run_monte_carlo(&cfg).map_err(|e| e.to_string())?;
    let format = match a.format {
        SimFormat::Csv => ReportFormat::Csv,
        SimFormat::Kv => ReportFormat::Kv,
        SimFormat::Table => ReportFormat::Table,
    };
    let mut buf = Vec::new();
    write_report(&report, format, &mut buf).map_err(|e| e.to_string())?;
    match &a.out {
        Some(path) => {
            std::fs::write(path, &buf).map_err(|e| format!("{}: {e}", path.display()))?;
            Ok(String::new())
        }
        None => String::from_utf8(buf).map_err(|e| e.to_string()),
    }
}

fn moment_entries(m: &MomentSet) -> Vec<(String, f64)> {
    let mut out = vec![("c0".to_string(), m.c0)];
    let vec_entries = |name: &str, v: &nalgebra::DVector<f64>, out: &mut Vec<(String, f64)>| {
        for i in 0..v.len() {
            out.push((format!("{name}[{}]", i + 1), v[i]));
        }
    };
    let mat_entries = |name: &str, a: &nalgebra::DMatrix<f64>, out: &mut Vec<(String, f64)>| {
        for i in 0..a.nrows() {
            for j in 0..a.ncols() {
                out.push((format!("{name}[{},{}]", i + 1, j + 1), a[(i, j)]));
            }
        }
    };
    vec_entries("C1", &m.c1, &mut out);
    mat_entries("C2", &m.c2, &mut out);
    out.push(("d0".to_string(), m.d0));
    vec_entries("D1", &m.d1, &mut out);
    mat_entries("K1", &m.k1, &mut out);
    mat_entries("K2", &m.k2, &mut out);
    mat_entries("C", &m.c, &mut out);
    mat_entries("Omega", &m.omega, &mut out);
    out
}

fn cmd_moments(a: &MomentsArgs) -> Result<String, String> {
    let base: BaseKernel = a.kernel.parse()?;
    if a.dim == 0 {
        return Err("--dim must be at least 1".into());
    }
    let kernel = KernelSpec::new(base, a.dim);
    let geometry = if a.clip.is_empty() {
        BoxGeometry::interior(a.dim)
    } else if a.clip.len() == a.dim {
        BoxGeometry::clipped(a.clip.iter().map(|r| r.0).collect(), a.clip.iter().map(|r| r.1).collect())
    } else {
        return Err(format!("--clip given {} times, expected {}", a.clip.len(), a.dim));
    };
    let m = compute_moments(&kernel, &geometry).map_err(|e| e.to_string())?;
    let entries = moment_entries(&m);
    Ok(match a.format {
        OutFormat::Csv => {
            let mut w = csv::Writer::from_writer(Vec::new());
            w.write_record(["constant", "value"]).expect("in-memory write");
            for (k, v) in &entries {
                w.write_record([k.clone(), v.to_string()]).expect("in-memory write");
            }
            String::from_utf8(w.into_inner().expect("flush")).expect("utf8")
        }
        OutFormat::Kv => {
            let mut s = format!("kernel = {}\ndim = {}\nlo = {}\nhi = {}\n", base.name(), a.dim, join(&geometry.lo, " "), join(&geometry.hi, " "));
            for (k, v) in &entries {
                let _ = writeln!(s, "{k} = {v}");
            }
            s
        }
    })
}
