//! Check loss and the local linear quantile regression (LLQR) estimator.
//!
//! The fit minimizes `sum_i sum_t rho_tau(Y_it - eta_i - (X_it - x)' beta) K_it`
//! jointly over the unit intercepts and the slope. The solver runs a
//! majorize-minimize (MM) scheme on an eps-perturbed check loss, where each
//! step is a weighted least-squares problem whose normal equations have
//! arrowhead structure (one diagonal entry per unit plus a small slope
//! block) and are solved after sweeping out the intercepts. The MM iterate is
//! then profiled (exact weighted quantile per unit) and snapped to the
//! nearest basic solution of the underlying linear program.

use nalgebra::{DMatrix, DVector};

use crate::error::FitError;
use crate::kernels::{BaseKernel, KernelSpec, SmootherSpec};
use crate::local::{LocalDesign, Terms};
use crate::model::{EvalSpec, PanelData};

/// Which local estimator produced a fit.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Estimator {
    Llqr,
    Llsqr,
}

impl Estimator {
    pub fn name(self) -> &'static str {
        match self {
            Estimator::Llqr => "llqr",
            Estimator::Llsqr => "llsqr",
        }
    }
}

impl std::str::FromStr for Estimator {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "llqr" => Ok(Estimator::Llqr),
            "llsqr" => Ok(Estimator::Llsqr),
            other => Err(format!("unknown estimator `{other}`")),
        }
    }
}

/// Tuning knobs for both solvers. Defaults follow the documented stopping rules.
#[derive(Debug, Clone, PartialEq)]
pub struct SolverOptions {
    pub kernel: BaseKernel,
    pub smoother: SmootherSpec,
    /// Outer MM iterations for LLQR.
    pub max_iter: usize,
    /// Max-norm movement of beta between iterates.
    pub beta_tol: f64,
    /// Relative objective decrease between iterates.
    pub obj_rel_tol: f64,
    /// eps_0 = eps_start * scale(Y).
    pub eps_start: f64,
    pub eps_factor: f64,
    /// Floor for eps, relative to scale(Y).
    pub eps_floor: f64,
    pub newton_max_iter: usize,
    pub armijo: f64,
    pub contraction: f64,
    pub grad_tol: f64,
}

impl Default for SolverOptions {
    fn default() -> Self {
        Self {
            kernel: BaseKernel::Epanechnikov,
            smoother: SmootherSpec::fourth_order(),
            max_iter: 500,
            beta_tol: 1e-8,
            obj_rel_tol: 1e-12,
            eps_start: 0.1,
            eps_factor: 0.5,
            eps_floor: 1e-10,
            newton_max_iter: 200,
            armijo: 1e-4,
            contraction: 0.5,
            grad_tol: 1e-8,
        }
    }
}

impl SolverOptions {
    pub fn kernel_spec(&self, dim: usize) -> KernelSpec {
        KernelSpec::new(self.kernel, dim)
    }
}

/// Estimated slope, intercepts and solver diagnostics.
#[derive(Debug, Clone, PartialEq)]
pub struct FitResult {
    pub estimator: Estimator,
    /// Slope in units of x.
    pub beta: Vec<f64>,
    /// Per-unit intercepts; `None` for units with zero kernel weight.
    pub eta: Vec<Option<f64>>,
    pub objective: f64,
    pub iterations: usize,
    pub converged: bool,
    pub dropped_units: Vec<usize>,
    /// Objective of the incumbent after every iteration.
    pub history: Vec<f64>,
}

impl FitResult {
    /// Turns a non-converged fit into `MaxIterationsExceeded`.
    pub fn require_converged(self) -> Result<Self, FitError> {
        if self.converged {
            Ok(self)
        } else {
            Err(FitError::MaxIterationsExceeded(self.iterations))
        }
    }
}

/// rho_tau(u) = (tau - 1{u <= 0}) u.
#[inline]
pub fn check_loss(u: f64, tau: f64) -> f64 {
    if u > 0.0 {
        tau * u
    } else {
        (tau - 1.0) * u
    }
}

/// Minimizer of `sum_t w_t rho_tau(v_t - q)`; the left end of the minimizing
/// interval when it is not unique. Always one of the inputs.
pub fn weighted_quantile(values: &[f64], weights: &[f64], tau: f64) -> Result<f64, FitError> {
    assert_eq!(values.len(), weights.len(), "values and weights differ in length");
    let mut order: Vec<usize> = (0..values.len()).collect();
    weighted_quantile_index(values, weights, tau, &mut order)
        .map(|k| values[k])
        .ok_or(FitError::NoLocalData)
}

/// Index of the weighted quantile; `order` is scratch space of length `values.len()`.
fn weighted_quantile_index(values: &[f64], weights: &[f64], tau: f64, order: &mut [usize]) -> Option<usize> {
    let total: f64 = weights.iter().sum();
    if !(total > 0.0) {
        return None;
    }
    order.sort_unstable_by(|&a, &b| values[a].total_cmp(&values[b]).then(a.cmp(&b)));
    let target = tau * total - 1e-13 * total;
    let mut cum = 0.0;
    for &k in order.iter() {
        cum += weights[k];
        if weights[k] > 0.0 && cum >= target {
            return Some(k);
        }
    }
    order.iter().rev().copied().find(|&k| weights[k] > 0.0)
}

/// The LLQR objective at `(eta, beta)`; dropped units contribute nothing.
pub fn llqr_objective(eta: &[f64], beta: &[f64], p: &PanelData, spec: &EvalSpec, kernel: &KernelSpec) -> f64 {
    let d = p.dim();
    let mut u = vec![0.0; d];
    let mut total = 0.0;
    for i in 0..p.n_units() {
        for t in 0..p.n_periods() {
            let xi = p.x(i, t);
            for k in 0..d {
                u[k] = (xi[k] - spec.x[k]) / spec.h;
            }
            let w = kernel.value(&u);
            if w > 0.0 {
                let lin: f64 = (0..d).map(|k| (xi[k] - spec.x[k]) * beta[k]).sum();
                total += w * check_loss(p.y(i, t) - eta[i] - lin, spec.tau);
            }
        }
    }
    total
}

/// Objective on a local design with scaled slope `phi`.
pub(crate) fn design_objective(des: &LocalDesign, eta: &[f64], phi: &[f64], tau: f64) -> f64 {
    let mut total = 0.0;
    for j in 0..des.n_retained() {
        for o in des.unit_range(j) {
            let r = des.y[o] - eta[j] - des.fitted_slope(o, phi);
            total += des.w[o] * check_loss(r, tau);
        }
    }
    total
}

/// Profiled objective: exact per-unit weighted quantiles at `phi`.
/// Returns the objective and fills `eta` and the pivot observation per unit.
fn profile(des: &LocalDesign, phi: &[f64], tau: f64, eta: &mut [f64], pivots: &mut [usize], scratch: &mut Scratch) -> f64 {
    let mut total = 0.0;
    for j in 0..des.n_retained() {
        let r = des.unit_range(j);
        let n = r.len();
        scratch.vals.clear();
        scratch.vals.extend(r.clone().map(|o| des.y[o] - des.fitted_slope(o, phi)));
        scratch.order.clear();
        scratch.order.extend(0..n);
        let w = &des.w[r.clone()];
        let k = weighted_quantile_index(&scratch.vals, w, tau, &mut scratch.order)
            .expect("retained units have positive weight");
        eta[j] = scratch.vals[k];
        pivots[j] = r.start + k;
        for (v, wt) in scratch.vals.iter().zip(w) {
            total += wt * check_loss(v - eta[j], tau);
        }
    }
    total
}

#[derive(Default)]
struct Scratch {
    vals: Vec<f64>,
    order: Vec<usize>,
}

/// Robust spread of the local outcomes used to set the eps schedule.
fn outcome_scale(des: &LocalDesign) -> f64 {
    let sw = des.total_weight();
    let mean = des.y.iter().zip(&des.w).map(|(y, w)| y * w).sum::<f64>() / sw;
    let var = des.y.iter().zip(&des.w).map(|(y, w)| w * (y - mean).powi(2)).sum::<f64>() / sw;
    let sd = var.sqrt();
    if sd > 0.0 && sd.is_finite() {
        sd
    } else {
        let m = des.y.iter().fold(0.0f64, |a, v| a.max(v.abs()));
        if m > 0.0 {
            m
        } else {
            1.0
        }
    }
}

/// One MM step: weighted least squares with weights `w / (eps + |r|)` and
/// working response `y + (2 tau - 1)(eps + |r|)`, solved by sweeping out the
/// intercepts (within transformation). Returns false if the slope system is singular.
fn mm_step(des: &LocalDesign, tau: f64, eps: f64, eta: &mut [f64], phi: &mut [f64]) -> bool {
    let p = des.p;
    let m = des.n_retained();
    let mut s = DMatrix::<f64>::zeros(p, p);
    let mut rhs = DVector::<f64>::zeros(p);
    let mut zbar = vec![0.0; m * p];
    let mut ybar = vec![0.0; m];
    let mut v = Vec::new();
    let mut ys = Vec::new();
    for j in 0..m {
        let r = des.unit_range(j);
        v.clear();
        ys.clear();
        for o in r.clone() {
            let res = des.y[o] - eta[j] - des.fitted_slope(o, phi);
            let a = eps + res.abs();
            v.push(des.w[o] / a);
            ys.push(des.y[o] + (2.0 * tau - 1.0) * a);
        }
        let sv: f64 = v.iter().sum();
        let zb = &mut zbar[j * p..(j + 1) * p];
        for (k, o) in r.clone().enumerate() {
            let c = v[k] / sv;
            ybar[j] += c * ys[k];
            for (a, zv) in zb.iter_mut().zip(des.row(o)) {
                *a += c * zv;
            }
        }
        for (k, o) in r.enumerate() {
            let row = des.row(o);
            let dy = ys[k] - ybar[j];
            for a in 0..p {
                let da = row[a] - zb[a];
                rhs[a] += v[k] * da * dy;
                for b in 0..=a {
                    s[(a, b)] += v[k] * da * (row[b] - zb[b]);
                }
            }
        }
    }
    for a in 0..p {
        for b in 0..a {
            s[(b, a)] = s[(a, b)];
        }
    }
    let sol = match s.clone().cholesky() {
        Some(ch) => ch.solve(&rhs),
        None => match s.lu().solve(&rhs) {
            Some(x) => x,
            None => return false,
        },
    };
    if sol.iter().any(|v| !v.is_finite()) {
        return false;
    }
    phi.copy_from_slice(sol.as_slice());
    for j in 0..m {
        let zb = &zbar[j * p..(j + 1) * p];
        eta[j] = ybar[j] - zb.iter().zip(phi.iter()).map(|(a, b)| a * b).sum::<f64>();
    }
    true
}

fn perturbed_objective(des: &LocalDesign, eta: &[f64], phi: &[f64], tau: f64, eps: f64) -> f64 {
    let mut total = 0.0;
    for j in 0..des.n_retained() {
        for o in des.unit_range(j) {
            let r = des.y[o] - eta[j] - des.fitted_slope(o, phi);
            total += des.w[o] * (check_loss(r, tau) - 0.5 * eps * (eps + r.abs()).ln());
        }
    }
    total
}

/// Tries to move `phi` onto a basic solution: for the few non-pivot
/// observations with the smallest residuals, solve for the slope that makes
/// `p` of them interpolate exactly alongside their unit pivots.
fn snap_to_vertex(
    des: &LocalDesign,
    tau: f64,
    phi: &mut Vec<f64>,
    eta: &mut [f64],
    pivots: &mut [usize],
    best: &mut f64,
    scratch: &mut Scratch,
) -> usize {
    let p = des.p;
    let m = des.n_retained();
    let mut unit_of = vec![0usize; des.n_obs()];
    for j in 0..m {
        for o in des.unit_range(j) {
            unit_of[o] = j;
        }
    }
    let mut tested = 0;
    for _round in 0..8 {
        let mut cands: Vec<(f64, usize)> = Vec::new();
        for j in 0..m {
            for o in des.unit_range(j) {
                if o != pivots[j] {
                    let r = des.y[o] - eta[j] - des.fitted_slope(o, phi);
                    cands.push((r.abs(), o));
                }
            }
        }
        if cands.len() < p {
            return tested;
        }
        cands.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
        let pool: Vec<usize> = cands.iter().take(p + 2).map(|c| c.1).collect();
        let mut improved = false;
        let mut trial_eta = vec![0.0; m];
        let mut trial_piv = vec![0usize; m];
        for combo in combinations(pool.len(), p) {
            let mut a = DMatrix::<f64>::zeros(p, p);
            let mut rhs = DVector::<f64>::zeros(p);
            for (row, &ci) in combo.iter().enumerate() {
                let o = pool[ci];
                let pv = pivots[unit_of[o]];
                for c in 0..p {
                    a[(row, c)] = des.row(o)[c] - des.row(pv)[c];
                }
                rhs[row] = des.y[o] - des.y[pv];
            }
            let Some(cand) = a.lu().solve(&rhs) else { continue };
            if cand.iter().any(|v| !v.is_finite()) {
                continue;
            }
            tested += 1;
            let cand: Vec<f64> = cand.iter().copied().collect();
            let val = profile(des, &cand, tau, &mut trial_eta, &mut trial_piv, scratch);
            if val < *best - 1e-14 * best.abs() {
                *best = val;
                *phi = cand;
                eta.copy_from_slice(&trial_eta);
                pivots.copy_from_slice(&trial_piv);
                improved = true;
            }
        }
        if !improved {
            break;
        }
    }
    tested
}

fn combinations(n: usize, k: usize) -> Vec<Vec<usize>> {
    let mut out = Vec::new();
    let mut cur = Vec::with_capacity(k);
    fn rec(start: usize, n: usize, k: usize, cur: &mut Vec<usize>, out: &mut Vec<Vec<usize>>) {
        if cur.len() == k {
            out.push(cur.clone());
            return;
        }
        for i in start..n {
            cur.push(i);
            rec(i + 1, n, k, cur, out);
            cur.pop();
        }
    }
    rec(0, n, k, &mut cur, &mut out);
    out
}

/// Result of the LLQR solver on a local design, in scaled coordinates.
#[derive(Debug, Clone)]
pub(crate) struct DesignFit {
    pub eta: Vec<f64>,
    pub phi: Vec<f64>,
    pub objective: f64,
    pub iterations: usize,
    pub converged: bool,
    pub history: Vec<f64>,
}

pub(crate) fn solve_llqr_design(des: &LocalDesign, tau: f64, opts: &SolverOptions) -> DesignFit {
    let p = des.p;
    let m = des.n_retained();
    let mut scratch = Scratch::default();

    // unweighted tau-quantile of each unit's local outcomes, slope zero
    let mut eta = vec![0.0; m];
    for j in 0..m {
        let r = des.unit_range(j);
        let ones = vec![1.0; r.len()];
        eta[j] = weighted_quantile(&des.y[r], &ones, tau).expect("nonempty unit");
    }
    let mut phi = vec![0.0; p];

    let scale = outcome_scale(des);
    let floor = opts.eps_floor * scale;
    let mut eps = (opts.eps_start * scale).max(floor);
    // vertex polishing only pays off once the smoothing is small
    let polish_below = 1e-2 * scale;

    let mut best_eta = eta.clone();
    let mut best_phi = phi.clone();
    let mut best = design_objective(des, &eta, &phi, tau);
    let mut history = Vec::new();
    let mut converged = false;
    let mut iterations = 0;
    let mut level_iters = 0;
    let mut level_obj = perturbed_objective(des, &eta, &phi, tau, eps);
    let mut prev_true = best;
    let mut pivots = vec![0usize; m];
    let mut trial_eta = vec![0.0; m];
    let mut last_polish: Option<Vec<f64>> = None;

    while iterations < opts.max_iter {
        iterations += 1;
        level_iters += 1;
        let prev_phi = phi.clone();
        if !mm_step(des, tau, eps, &mut eta, &mut phi) {
            eta.clone_from(&best_eta);
            phi.clone_from(&best_phi);
            break;
        }
        let obj = design_objective(des, &eta, &phi, tau);
        if obj < best {
            best = obj;
            best_eta.clone_from(&eta);
            best_phi.clone_from(&phi);
        }
        history.push(best);

        let pert = perturbed_objective(des, &eta, &phi, tau, eps);
        let step = max_abs_diff(&prev_phi, &phi) / des.h;
        let rel_pert = (level_obj - pert) / level_obj.abs().max(f64::MIN_POSITIVE);
        level_obj = pert;
        let rel_true = (prev_true - obj).abs() / obj.abs().max(f64::MIN_POSITIVE);
        prev_true = obj;

        if eps <= floor && step < opts.beta_tol && rel_true < opts.obj_rel_tol {
            converged = true;
            break;
        }
        let level_done = step < opts.beta_tol || rel_pert < 1e-7 || level_iters >= 10;
        if !level_done {
            continue;
        }
        if eps <= polish_below {
            let mut cand = phi.clone();
            let mut val = profile(des, &cand, tau, &mut trial_eta, &mut pivots, &mut scratch);
            snap_to_vertex(des, tau, &mut cand, &mut trial_eta, &mut pivots, &mut val, &mut scratch);
            if val <= best {
                best = val;
                best_eta.clone_from(&trial_eta);
                best_phi.clone_from(&cand);
                history.push(best);
            }
            if val == 0.0 || certify_optimal(des, tau, &cand, &trial_eta, &pivots) {
                converged = true;
                break;
            }
            // the same vertex twice in a row: successive iterates no longer move
            if let Some(prev) = &last_polish {
                if eps <= floor && max_abs_diff(prev, &cand) / des.h < opts.beta_tol {
                    converged = true;
                    break;
                }
            }
            last_polish = Some(cand);
        }
        if eps > floor {
            eps = (eps * opts.eps_factor).max(floor);
            level_iters = 0;
            level_obj = perturbed_objective(des, &eta, &phi, tau, eps);
        }
    }

    if !converged {
        let mut snap_eta = vec![0.0; m];
        let mut snap_phi = best_phi.clone();
        let mut snap_best = profile(des, &snap_phi, tau, &mut snap_eta, &mut pivots, &mut scratch);
        snap_to_vertex(des, tau, &mut snap_phi, &mut snap_eta, &mut pivots, &mut snap_best, &mut scratch);
        if snap_best <= best {
            best = snap_best;
            best_eta = snap_eta;
            best_phi = snap_phi;
        }
        history.push(best);
    }

    DesignFit {
        eta: best_eta,
        phi: best_phi,
        objective: best,
        iterations,
        converged,
        history,
    }
}

fn max_abs_diff(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0f64, f64::max)
}

/// Exact optimality check at a basic solution. The zero-residual set is each
/// unit's pivot plus the `p` next-smallest residuals; the subgradient
/// conditions then pin down one multiplier per zero residual, and the point
/// is a global minimiser iff all of them lie in `[tau - 1, tau]`.
fn certify_optimal(des: &LocalDesign, tau: f64, phi: &[f64], eta: &[f64], pivots: &[usize]) -> bool {
    let p = des.p;
    let m = des.n_retained();
    let n = des.n_obs();
    let mut resid = vec![0.0; n];
    let mut unit_of = vec![0usize; n];
    let mut ymax = 0.0f64;
    for j in 0..m {
        for o in des.unit_range(j) {
            resid[o] = des.y[o] - eta[j] - des.fitted_slope(o, phi);
            unit_of[o] = j;
            ymax = ymax.max(des.y[o].abs());
        }
    }
    let zero_tol = 1e-9 * (1.0 + ymax);
    let mut cands: Vec<usize> = (0..n).filter(|&o| pivots[unit_of[o]] != o).collect();
    if cands.len() < p {
        return false;
    }
    cands.sort_by(|&a, &b| resid[a].abs().total_cmp(&resid[b].abs()).then(a.cmp(&b)));
    let extras = &cands[..p];
    if extras.iter().any(|&o| resid[o].abs() > zero_tol) {
        return false;
    }
    // a (p+1)-th zero residual means a degenerate vertex; not handled here
    if cands.len() > p && resid[cands[p]].abs() <= zero_tol {
        return false;
    }
    let mut is_zero = vec![false; n];
    for &o in extras {
        is_zero[o] = true;
    }
    for &pv in pivots {
        is_zero[pv] = true;
    }
    let psi = |r: f64| if r > 0.0 { tau } else { tau - 1.0 };
    let mut s_unit = vec![0.0; m];
    let mut s_slope = DVector::<f64>::zeros(p);
    for o in 0..n {
        if is_zero[o] {
            continue;
        }
        let g = des.w[o] * psi(resid[o]);
        s_unit[unit_of[o]] += g;
        for (k, zv) in des.row(o).iter().enumerate() {
            s_slope[k] += g * zv;
        }
    }
    let mut a = DMatrix::<f64>::zeros(p, p);
    let mut rhs = -s_slope;
    for j in 0..m {
        let zp = des.row(pivots[j]);
        for k in 0..p {
            rhs[k] += s_unit[j] * zp[k];
        }
    }
    for (c, &o) in extras.iter().enumerate() {
        let zp = des.row(pivots[unit_of[o]]);
        for k in 0..p {
            a[(k, c)] = des.row(o)[k] - zp[k];
        }
    }
    let Some(scaled) = a.lu().solve(&rhs) else { return false };
    let tol = 1e-9;
    let inside = |v: f64| v.is_finite() && v >= tau - 1.0 - tol && v <= tau + tol;
    let mut pivot_mass = s_unit.clone();
    for (c, &o) in extras.iter().enumerate() {
        if !inside(scaled[c] / des.w[o]) {
            return false;
        }
        pivot_mass[unit_of[o]] += scaled[c];
    }
    (0..m).all(|j| inside(-pivot_mass[j] / des.w[pivots[j]]))
}

/// Fits the LLQR estimator at `spec.x`, `spec.tau`.
pub fn fit_llqr(p: &PanelData, spec: &EvalSpec, opts: &SolverOptions) -> Result<FitResult, FitError> {
    spec.check_panel(p)?;
    let kernel = opts.kernel_spec(p.dim());
    let des = LocalDesign::build(p, &spec.x, spec.h, &kernel, Terms::Linear);
    des.check_identified()?;
    let fit = solve_llqr_design(&des, spec.tau, opts);
    Ok(FitResult {
        estimator: Estimator::Llqr,
        beta: fit.phi.iter().map(|v| v / spec.h).collect(),
        eta: des.expand_eta(&fit.eta),
        objective: fit.objective,
        iterations: fit.iterations,
        converged: fit.converged,
        dropped_units: des.dropped.clone(),
        history: fit.history,
    })
}
