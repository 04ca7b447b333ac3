//! Seeded Monte Carlo over an (x, tau, estimator) grid.
//!
//! Replication `r` draws its panel from streams keyed by `(seed, r)` and fits
//! every cell on that one panel. Replications run on the rayon pool; results
//! are collected in replication order and reduced sequentially, so the report
//! does not depend on the number of threads.

use std::fmt::Write as _;
use std::io;

use rayon::prelude::*;

use super::dgp::{gen_panel_keyed, true_qpe, DgpSpec, X_BOUND};
use crate::error::SimError;
use crate::jackknife::bias_correct_from;
use crate::model::{EvalSpec, PanelData};
use crate::qr_core::{fit_llqr, Estimator, FitResult, SolverOptions};
use crate::sqr_core::fit_llsqr;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum McEstimator {
    Llqr,
    LlqrBc,
    Llsqr,
    LlsqrBc,
}

impl McEstimator {
    pub const ALL: [McEstimator; 4] = [McEstimator::Llqr, McEstimator::LlqrBc, McEstimator::Llsqr, McEstimator::LlsqrBc];

    pub fn name(self) -> &'static str {
        match self {
            McEstimator::Llqr => "llqr",
            McEstimator::LlqrBc => "llqr_bc",
            McEstimator::Llsqr => "llsqr",
            McEstimator::LlsqrBc => "llsqr_bc",
        }
    }

    fn label(self) -> &'static str {
        match self {
            McEstimator::Llqr => "LLQR",
            McEstimator::LlqrBc => "LLQR-bc",
            McEstimator::Llsqr => "LLSQR",
            McEstimator::LlsqrBc => "LLSQR-bc",
        }
    }
}

impl std::str::FromStr for McEstimator {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().replace('-', "_").as_str() {
            "llqr" => Ok(McEstimator::Llqr),
            "llqr_bc" => Ok(McEstimator::LlqrBc),
            "llsqr" => Ok(McEstimator::Llsqr),
            "llsqr_bc" => Ok(McEstimator::LlsqrBc),
            other => Err(format!("unknown estimator `{other}` (llqr|llqr_bc|llsqr|llsqr_bc)")),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct McConfig {
    pub dgp: DgpSpec,
    pub n: usize,
    pub t: usize,
    pub x_grid: Vec<f64>,
    pub tau_grid: Vec<f64>,
    pub estimators: Vec<McEstimator>,
    pub h: f64,
    pub b: f64,
    pub reps: usize,
    pub seed: u64,
    pub solver: SolverOptions,
}

impl McConfig {
    /// N = T = 100, h = 0.8, b = 0.5, 500 replications, tau = 0.25 on x = -2, -1.6, ..., 2.
    pub fn table_defaults(dgp: DgpSpec, seed: u64) -> Self {
        Self {
            dgp,
            n: 100,
            t: 100,
            x_grid: (0..=10).map(|k| -2.0 + 0.4 * k as f64).map(round12).collect(),
            tau_grid: vec![0.25],
            estimators: McEstimator::ALL.to_vec(),
            h: 0.8,
            b: 0.5,
            reps: 500,
            seed,
            solver: SolverOptions::default(),
        }
    }

    pub fn validate(&self) -> Result<(), SimError> {
        if self.reps == 0 {
            return Err(SimError::InvalidConfig("reps must be at least 1".into()));
        }
        if self.n == 0 || self.t < 2 {
            return Err(SimError::InvalidConfig(format!(
                "need N >= 1 and T >= 2, got N = {}, T = {}",
                self.n, self.t
            )));
        }
        if !(self.h > 0.0 && self.h.is_finite() && self.b > 0.0 && self.b.is_finite()) {
            return Err(SimError::InvalidConfig("bandwidths must be positive".into()));
        }
        if let Some(x) = self.x_grid.iter().find(|x| !(x.abs() <= X_BOUND)) {
            return Err(SimError::InvalidGrid(format!("x = {x} outside [-{X_BOUND}, {X_BOUND}]")));
        }
        if let Some(t) = self.tau_grid.iter().find(|t| !(**t > 0.0 && **t < 1.0)) {
            return Err(SimError::InvalidGrid(format!("tau = {t} outside (0, 1)")));
        }
        if self.estimators.is_empty() {
            return Err(SimError::InvalidGrid("no estimators requested".into()));
        }
        Ok(())
    }

    /// Cells in report order: x outer, tau inner, estimator innermost.
    fn cells(&self) -> Vec<(f64, f64, McEstimator)> {
        let mut est = self.estimators.clone();
        est.sort();
        est.dedup();
        let mut out = Vec::new();
        for &x in &self.x_grid {
            for &tau in &self.tau_grid {
                for &e in &est {
                    out.push((x, tau, e));
                }
            }
        }
        out
    }
}

fn round12(v: f64) -> f64 {
    (v * 1e12).round() / 1e12
}

#[derive(Debug, Clone, PartialEq)]
pub struct McCell {
    pub x: f64,
    pub tau: f64,
    pub estimator: McEstimator,
    pub true_beta: f64,
    /// mean(beta_hat) - true_beta over successful replications.
    pub mean_bias: f64,
    pub mse: f64,
    /// Monte Carlo standard error of `mean_bias`.
    pub bias_se: f64,
    pub n_reps: usize,
    pub n_failed: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct McReport {
    pub config: McConfig,
    pub cells: Vec<McCell>,
}

/// Slope estimates of one replication, indexed like `McConfig::cells`.
fn replicate(cfg: &McConfig, cells: &[(f64, f64, McEstimator)], rep: u64) -> Vec<Option<f64>> {
    let panel = gen_panel_keyed(&cfg.dgp, cfg.n, cfg.t, cfg.seed, rep);
    let mut out = vec![None; cells.len()];
    let mut k = 0;
    while k < cells.len() {
        // all estimators of one (x, tau) are adjacent
        let (x, tau, _) = cells[k];
        let mut end = k;
        while end < cells.len() && cells[end].0 == x && cells[end].1 == tau {
            end += 1;
        }
        let wanted: Vec<McEstimator> = cells[k..end].iter().map(|c| c.2).collect();
        let got = fit_point(cfg, &panel, x, tau, &wanted);
        out[k..end].copy_from_slice(&got);
        k = end;
    }
    out
}

fn fit_point(cfg: &McConfig, panel: &PanelData, x: f64, tau: f64, wanted: &[McEstimator]) -> Vec<Option<f64>> {
    let spec = match EvalSpec::new(vec![x], tau, cfg.h, cfg.b, vec![-X_BOUND], vec![X_BOUND]) {
        Ok(s) => s,
        Err(_) => return vec![None; wanted.len()],
    };
    let opts = &cfg.solver;
    let needs_sqr = wanted.iter().any(|e| matches!(e, McEstimator::Llsqr | McEstimator::LlsqrBc));
    let qr = fit_llqr(panel, &spec, opts).ok();
    let sqr: Option<FitResult> = if needs_sqr {
        qr.as_ref().and_then(|q| fit_llsqr(panel, &spec, opts, Some(q)).ok())
    } else {
        None
    };
    let bc = |est: Estimator, full: &Option<FitResult>| -> Option<f64> {
        let full = full.clone()?;
        bias_correct_from(panel, &spec, est, opts, full).ok().map(|c| c.beta_bc[0])
    };
    wanted
        .iter()
        .map(|e| match e {
            McEstimator::Llqr => qr.as_ref().map(|f| f.beta[0]),
            McEstimator::LlqrBc => bc(Estimator::Llqr, &qr),
            McEstimator::Llsqr => sqr.as_ref().map(|f| f.beta[0]),
            McEstimator::LlsqrBc => bc(Estimator::Llsqr, &sqr),
        })
        .map(|v| v.filter(|b| b.is_finite()))
        .collect()
}

/// Runs every replication and aggregates bias and MSE per cell.
pub fn run_monte_carlo(cfg: &McConfig) -> Result<McReport, SimError> {
    cfg.validate()?;
    let cells = cfg.cells();
    let truths: Vec<f64> = cells
        .iter()
        .map(|&(x, tau, _)| true_qpe(&cfg.dgp, x, tau))
        .collect::<Result<_, _>>()?;

    let draws: Vec<Vec<Option<f64>>> = (0..cfg.reps as u64)
        .into_par_iter()
        .map(|r| replicate(cfg, &cells, r))
        .collect();

    let mut out = Vec::with_capacity(cells.len());
    for (c, &(x, tau, estimator)) in cells.iter().enumerate() {
        let truth = truths[c];
        let (mut n_ok, mut s1, mut s2) = (0usize, 0.0, 0.0);
        for rep in &draws {
            if let Some(b) = rep[c] {
                let e = b - truth;
                n_ok += 1;
                s1 += e;
                s2 += e * e;
            }
        }
        let (bias, mse, se) = if n_ok > 0 {
            let m = n_ok as f64;
            let bias = s1 / m;
            let mse = s2 / m;
            let se = if n_ok > 1 {
                ((mse - bias * bias).max(0.0) * m / (m - 1.0) / m).sqrt()
            } else {
                f64::NAN
            };
            (bias, mse, se)
        } else {
            (f64::NAN, f64::NAN, f64::NAN)
        };
        out.push(McCell {
            x,
            tau,
            estimator,
            true_beta: truth,
            mean_bias: bias,
            mse,
            bias_se: se,
            n_reps: cfg.reps,
            n_failed: cfg.reps - n_ok,
        });
    }
    Ok(McReport {
        config: cfg.clone(),
        cells: out,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ReportFormat {
    /// Long comma-delimited table with a header row.
    Csv,
    /// Key-value document.
    Kv,
    /// Wide table: one row per x, bias and MSE per estimator.
    Table,
}

impl std::str::FromStr for ReportFormat {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "csv" => Ok(ReportFormat::Csv),
            "kv" => Ok(ReportFormat::Kv),
            "table" => Ok(ReportFormat::Table),
            other => Err(format!("unknown format `{other}` (csv|kv|table)")),
        }
    }
}

pub const CSV_HEADER: [&str; 8] = ["x", "tau", "estimator", "true_beta", "bias", "mse", "n_reps", "n_failed"];

/// Renders the cells; the configuration echo is added by [`write_report`].
pub fn summarize(report: &McReport, format: ReportFormat) -> String {
    match format {
        ReportFormat::Csv => summarize_csv(report),
        ReportFormat::Kv => summarize_kv(report),
        ReportFormat::Table => summarize_table(report),
    }
}

fn summarize_csv(report: &McReport) -> String {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(CSV_HEADER).expect("in-memory write");
    for c in &report.cells {
        w.write_record([
            c.x.to_string(),
            c.tau.to_string(),
            c.estimator.name().to_string(),
            c.true_beta.to_string(),
            c.mean_bias.to_string(),
            c.mse.to_string(),
            c.n_reps.to_string(),
            c.n_failed.to_string(),
        ])
        .expect("in-memory write");
    }
    String::from_utf8(w.into_inner().expect("flush")).expect("utf8")
}

fn config_pairs(cfg: &McConfig) -> Vec<(&'static str, String)> {
    let list = |v: &[f64]| v.iter().map(|x| x.to_string()).collect::<Vec<_>>().join(" ");
    vec![
        ("dgp", cfg.dgp.family.name().to_string()),
        ("error", cfg.dgp.error_dist.name().to_string()),
        ("beta", cfg.dgp.beta.to_string()),
        ("gamma", cfg.dgp.gamma.to_string()),
        ("theta", cfg.dgp.theta.to_string()),
        ("n", cfg.n.to_string()),
        ("t", cfg.t.to_string()),
        ("h", cfg.h.to_string()),
        ("b", cfg.b.to_string()),
        ("reps", cfg.reps.to_string()),
        ("seed", cfg.seed.to_string()),
        ("x_grid", list(&cfg.x_grid)),
        ("tau_grid", list(&cfg.tau_grid)),
        (
            "estimators",
            cfg.estimators.iter().map(|e| e.name()).collect::<Vec<_>>().join(" "),
        ),
        ("kernel", cfg.solver.kernel.name().to_string()),
        ("crate_version", env!("CARGO_PKG_VERSION").to_string()),
    ]
}

fn summarize_kv(report: &McReport) -> String {
    let mut s = String::from("[config]\n");
    for (k, v) in config_pairs(&report.config) {
        let _ = writeln!(s, "{k} = {v}");
    }
    for c in &report.cells {
        let _ = write!(
            s,
            "\n[cell]\nx = {}\ntau = {}\nestimator = {}\ntrue_beta = {}\nbias = {}\nmse = {}\nbias_se = {}\nn_reps = {}\nn_failed = {}\n",
            c.x,
            c.tau,
            c.estimator.name(),
            c.true_beta,
            c.mean_bias,
            c.mse,
            c.bias_se,
            c.n_reps,
            c.n_failed
        );
    }
    s
}

fn summarize_table(report: &McReport) -> String {
    let cfg = &report.config;
    let mut est = cfg.estimators.clone();
    est.sort();
    est.dedup();
    let mut s = String::new();
    for &tau in &cfg.tau_grid {
        let _ = writeln!(s, "tau = {tau}");
        let _ = write!(s, "{:>6} {:>8}", "x", "true");
        for e in &est {
            let _ = write!(s, " {:>10} {:>8}", format!("{} bias", e.label()), "mse");
        }
        s.push('\n');
        for &x in &cfg.x_grid {
            let row: Vec<&McCell> = report.cells.iter().filter(|c| c.x == x && c.tau == tau).collect();
            let Some(first) = row.first() else { continue };
            let _ = write!(s, "{:>6.2} {:>8.3}", x, first.true_beta);
            for c in row {
                let _ = write!(s, " {:>10.3} {:>8.3}", c.mean_bias, c.mse);
            }
            s.push('\n');
        }
    }
    s
}

/// Writes the report with the configuration echoed as `#` comment lines
/// (CSV and table) or in the `[config]` section (kv).
pub fn write_report(report: &McReport, format: ReportFormat, out: &mut impl io::Write) -> io::Result<()> {
    if format != ReportFormat::Kv {
        for (k, v) in config_pairs(&report.config) {
            writeln!(out, "# {k} = {v}")?;
        }
    }
    out.write_all(summarize(report, format).as_bytes())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::simulate::ErrorDist;

    fn small(reps: usize) -> McConfig {
        let mut c = McConfig::table_defaults(DgpSpec::location_scale(ErrorDist::StdNormal), 11);
        c.n = 8;
        c.t = 12;
        c.x_grid = vec![0.0];
        c.tau_grid = vec![0.5];
        c.reps = reps;
        c
    }

    #[test]
    fn default_grid_shape() {
        let c = McConfig::table_defaults(DgpSpec::location_scale(ErrorDist::StdNormal), 0);
        assert_eq!(c.x_grid.len(), 11);
        assert_eq!(c.x_grid[1], -1.6);
        assert_eq!(c.x_grid[5], 0.0);
        assert_eq!(c.cells().len(), 44);
    }

    #[test]
    fn zero_reps_rejected() {
        assert!(matches!(run_monte_carlo(&small(0)), Err(SimError::InvalidConfig(_))));
        let mut c = small(1);
        c.x_grid = vec![2.5];
        assert!(matches!(run_monte_carlo(&c), Err(SimError::InvalidGrid(_))));
    }

    #[test]
    fn single_replication_identity() {
        let r = run_monte_carlo(&small(1)).unwrap();
        assert_eq!(r.cells.len(), 4);
        for c in &r.cells {
            assert_eq!(c.n_failed, 0);
            assert!((c.mse - c.mean_bias * c.mean_bias).abs() < 1e-12);
        }
    }

    #[test]
    fn csv_layout() {
        let mut r = run_monte_carlo(&small(2)).unwrap();
        let text = summarize(&r, ReportFormat::Csv);
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines[0], "x,tau,estimator,true_beta,bias,mse,n_reps,n_failed");
        assert_eq!(lines.len(), 5);
        assert!(lines[1].starts_with("0,0.5,llqr,1,"));
        r.cells.clear();
        assert_eq!(summarize(&r, ReportFormat::Csv).lines().count(), 1);
    }
}
