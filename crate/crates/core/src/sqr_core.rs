//! Local linear smoothed quantile regression (LLSQR).
//!
//! The indicator in the check loss is replaced by `G(u / b)`, giving
//! `varrho(u) = (tau - G(u/b)) u` with
//!
//! ```text
//! varrho'(u)  = tau - G(u/b) + g(u/b) u / b
//! varrho''(u) = (2 g(u/b) + g'(u/b) u / b) / b
//! ```
//!
//! The Hessian in `(eta_1..eta_N, phi)` is an arrowhead: diagonal in the
//! intercepts, bordered by the intercept/slope cross terms and a small slope
//! block. Newton steps eliminate the intercepts first and solve the `p x p`
//! Schur complement for the slope.

use nalgebra::{DMatrix, DVector};

use crate::error::FitError;
use crate::kernels::{KernelSpec, SmootherSpec};
use crate::local::{LocalDesign, Terms};
use crate::model::{EvalSpec, PanelData};
use crate::qr_core::{solve_llqr_design, weighted_quantile, Estimator, FitResult, SolverOptions};

/// How much of the smoothed loss to evaluate.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub enum Want {
    Value,
    Gradient,
    Hessian,
}

/// Value, gradient and arrowhead Hessian blocks of the smoothed objective.
#[derive(Debug, Clone, PartialEq)]
pub struct SmoothedLossEval {
    pub value: f64,
    pub grad_eta: Vec<f64>,
    pub grad_beta: Vec<f64>,
    pub hess_eta_diag: Vec<f64>,
    /// Row `i` holds d^2 / d eta_i d beta.
    pub hess_cross: DMatrix<f64>,
    pub hess_beta: DMatrix<f64>,
}

impl SmoothedLossEval {
    fn zeros(m: usize, p: usize) -> Self {
        Self {
            value: 0.0,
            grad_eta: vec![0.0; m],
            grad_beta: vec![0.0; p],
            hess_eta_diag: vec![0.0; m],
            hess_cross: DMatrix::zeros(m, p),
            hess_beta: DMatrix::zeros(p, p),
        }
    }

    /// Dense `(m + p) x (m + p)` Hessian implied by the blocks.
    pub fn dense_hessian(&self) -> DMatrix<f64> {
        let m = self.grad_eta.len();
        let p = self.grad_beta.len();
        let mut h = DMatrix::zeros(m + p, m + p);
        for j in 0..m {
            h[(j, j)] = self.hess_eta_diag[j];
            for a in 0..p {
                h[(j, m + a)] = self.hess_cross[(j, a)];
                h[(m + a, j)] = self.hess_cross[(j, a)];
            }
        }
        for a in 0..p {
            for b in 0..p {
                h[(m + a, m + b)] = self.hess_beta[(a, b)];
            }
        }
        h
    }

    pub fn gradient(&self) -> Vec<f64> {
        self.grad_eta.iter().chain(&self.grad_beta).copied().collect()
    }

    pub fn grad_max_norm(&self) -> f64 {
        self.grad_eta
            .iter()
            .chain(&self.grad_beta)
            .fold(0.0f64, |a, v| a.max(v.abs()))
    }
}

/// Per-observation smoothed loss and its first two derivatives in the residual.
#[inline]
fn varrho(r: f64, tau: f64, b: f64, sm: &SmootherSpec, want: Want) -> (f64, f64, f64) {
    let s = r / b;
    let big_g = sm.G(s);
    let value = (tau - big_g) * r;
    if want == Want::Value {
        return (value, 0.0, 0.0);
    }
    let (g, g1, _) = sm.derivs(s);
    let d1 = tau - big_g + g * s;
    let d2 = if want == Want::Hessian { (2.0 * g + g1 * s) / b } else { 0.0 };
    (value, d1, d2)
}

/// Smoothed objective on a local design, in scaled slope coordinates `phi`.
pub(crate) fn eval_design(
    des: &LocalDesign,
    eta: &[f64],
    phi: &[f64],
    tau: f64,
    b: f64,
    sm: &SmootherSpec,
    want: Want,
) -> SmoothedLossEval {
    let m = des.n_retained();
    let p = des.p;
    let mut out = SmoothedLossEval::zeros(m, p);
    for j in 0..m {
        let mut unit_val = 0.0;
        for o in des.unit_range(j) {
            let z = des.row(o);
            let r = des.y[o] - eta[j] - des.fitted_slope(o, phi);
            let (v, d1, d2) = varrho(r, tau, b, sm, want);
            let w = des.w[o];
            unit_val += w * v;
            if want >= Want::Gradient {
                out.grad_eta[j] -= w * d1;
                for a in 0..p {
                    out.grad_beta[a] -= w * d1 * z[a];
                }
            }
            if want == Want::Hessian {
                let wd2 = w * d2;
                out.hess_eta_diag[j] += wd2;
                for a in 0..p {
                    out.hess_cross[(j, a)] += wd2 * z[a];
                    for c in 0..=a {
                        out.hess_beta[(a, c)] += wd2 * z[a] * z[c];
                    }
                }
            }
        }
        out.value += unit_val;
    }
    for a in 0..p {
        for c in 0..a {
            out.hess_beta[(c, a)] = out.hess_beta[(a, c)];
        }
    }
    out
}

/// Smoothed LLSQR objective and derivatives at `(eta, beta)` over all N units.
///
/// Units with zero kernel weight contribute nothing; their gradient and
/// Hessian entries are zero.
pub fn sqr_eval(
    eta: &[f64],
    beta: &[f64],
    p: &PanelData,
    spec: &EvalSpec,
    kernel: &KernelSpec,
    smoother: &SmootherSpec,
    want: Want,
) -> SmoothedLossEval {
    let des = LocalDesign::build(p, &spec.x, spec.h, kernel, Terms::Linear);
    let eta_kept: Vec<f64> = des.units.iter().map(|&i| eta[i]).collect();
    let phi: Vec<f64> = beta.iter().map(|v| v * spec.h).collect();
    let local = eval_design(&des, &eta_kept, &phi, spec.tau, spec.b, smoother, want);
    let n = p.n_units();
    let d = p.dim();
    let h = spec.h;
    let mut out = SmoothedLossEval::zeros(n, d);
    out.value = local.value;
    for a in 0..d {
        out.grad_beta[a] = local.grad_beta[a] * h;
        for c in 0..d {
            out.hess_beta[(a, c)] = local.hess_beta[(a, c)] * h * h;
        }
    }
    for (j, &i) in des.units.iter().enumerate() {
        out.grad_eta[i] = local.grad_eta[j];
        out.hess_eta_diag[i] = local.hess_eta_diag[j];
        for a in 0..d {
            out.hess_cross[(i, a)] = local.hess_cross[(j, a)] * h;
        }
    }
    out
}

/// Search direction for one Newton iteration.
#[derive(Debug, Clone, PartialEq)]
pub struct Direction {
    pub eta: Vec<f64>,
    pub phi: Vec<f64>,
    /// False for the steepest-descent fallback.
    pub newton: bool,
    /// Not the exact Newton step: a modified Hessian or steepest descent.
    pub modified: bool,
}

/// Diagonal loading applied to the intercept block before elimination.
#[inline]
pub fn eta_regularization(h: f64) -> f64 {
    1e-10 * (1.0 + h.abs())
}

/// Newton direction `-H^{-1} g` by intercept elimination.
///
/// Where the Hessian is indefinite the step uses a modified Hessian instead:
/// intercept curvatures are replaced by their absolute values and the Schur
/// complement is loaded on the diagonal until it factors. Steepest descent is
/// the last resort.
pub fn newton_direction(ev: &SmoothedLossEval) -> Direction {
    let m = ev.grad_eta.len();
    let p = ev.grad_beta.len();
    let steepest = || Direction {
        eta: ev.grad_eta.iter().map(|g| -g).collect(),
        phi: ev.grad_beta.iter().map(|g| -g).collect(),
        newton: false,
        modified: true,
    };
    let mut modified = false;
    let top = ev.hess_eta_diag.iter().fold(0.0f64, |acc, v| acc.max(v.abs()));
    let a: Vec<f64> = ev
        .hess_eta_diag
        .iter()
        .map(|&h| {
            let v = h + eta_regularization(h);
            if v > 0.0 {
                v
            } else {
                modified = true;
                h.abs().max(1e-6 * top) + eta_regularization(h)
            }
        })
        .collect();
    if a.iter().any(|&v| !(v > 0.0 && v.is_finite())) {
        return steepest();
    }
    let mut s = ev.hess_beta.clone();
    let mut rhs = DVector::from_iterator(p, ev.grad_beta.iter().map(|g| -g));
    for j in 0..m {
        let c = ev.hess_cross.row(j);
        for x in 0..p {
            rhs[x] += c[x] * ev.grad_eta[j] / a[j];
            for y in 0..p {
                s[(x, y)] -= c[x] * c[y] / a[j];
            }
        }
    }
    let scale = s.diagonal().iter().fold(0.0f64, |acc, v| acc.max(v.abs())).max(f64::MIN_POSITIVE);
    let mut chol = s.clone().cholesky();
    let mut load = 1e-8 * scale;
    while chol.is_none() && load < 1e8 * scale {
        modified = true;
        let mut loaded = s.clone();
        for k in 0..p {
            loaded[(k, k)] += load;
        }
        chol = loaded.cholesky();
        load *= 10.0;
    }
    let Some(chol) = chol else {
        return steepest();
    };
    let dphi = chol.solve(&rhs);
    if dphi.iter().any(|v| !v.is_finite()) {
        return steepest();
    }
    let deta = (0..m)
        .map(|j| {
            let c = ev.hess_cross.row(j);
            let cross: f64 = (0..p).map(|x| c[x] * dphi[x]).sum();
            (-ev.grad_eta[j] - cross) / a[j]
        })
        .collect();
    Direction {
        eta: deta,
        phi: dphi.iter().copied().collect(),
        newton: true,
        modified,
    }
}

#[derive(Debug, Clone)]
pub(crate) struct SmoothFit {
    pub eta: Vec<f64>,
    pub phi: Vec<f64>,
    pub objective: f64,
    pub iterations: usize,
    pub converged: bool,
    pub history: Vec<f64>,
}

/// Safeguarded Newton on a local design from the given start.
pub(crate) fn solve_llsqr_design(
    des: &LocalDesign,
    tau: f64,
    b: f64,
    opts: &SolverOptions,
    mut eta: Vec<f64>,
    mut phi: Vec<f64>,
) -> Result<SmoothFit, FitError> {
    let sm = &opts.smoother;
    let m = des.n_retained();
    let p = des.p;
    let mut ev = eval_design(des, &eta, &phi, tau, b, sm, Want::Hessian);
    let mut history = vec![ev.value];
    let mut iterations = 0;
    let mut trial_eta = vec![0.0; m];
    let mut trial_phi = vec![0.0; p];
    loop {
        if ev.grad_max_norm() < opts.grad_tol * (1.0 + ev.value.abs()) {
            return Ok(SmoothFit {
                eta,
                phi,
                objective: ev.value,
                iterations,
                converged: true,
                history,
            });
        }
        if iterations >= opts.newton_max_iter {
            return Ok(SmoothFit {
                eta,
                phi,
                objective: ev.value,
                iterations,
                converged: false,
                history,
            });
        }
        iterations += 1;

        let dir = newton_direction(&ev);
        let mut accepted = None;
        if dir.newton {
            let slope = directional_derivative(&ev, &dir);
            if slope < 0.0 {
                accepted = line_search(des, tau, b, opts, &ev, &eta, &phi, &dir, slope, 1.0, &mut trial_eta, &mut trial_phi);
            }
        }
        if accepted.is_none() {
            let dir = Direction {
                eta: ev.grad_eta.iter().map(|g| -g).collect(),
                phi: ev.grad_beta.iter().map(|g| -g).collect(),
                newton: false,
                modified: true,
            };
            let slope = directional_derivative(&ev, &dir);
            // steepest descent moves at most ~b in any coordinate on the first trial
            let mx = dir.eta.iter().chain(&dir.phi).fold(0.0f64, |a, v| a.max(v.abs()));
            let t0 = if mx > 0.0 { b / mx } else { 1.0 };
            if slope < 0.0 {
                accepted = line_search(des, tau, b, opts, &ev, &eta, &phi, &dir, slope, t0, &mut trial_eta, &mut trial_phi);
            }
        }
        match accepted {
            Some(val) => {
                eta.copy_from_slice(&trial_eta);
                phi.copy_from_slice(&trial_phi);
                history.push(val);
                ev = eval_design(des, &eta, &phi, tau, b, sm, Want::Hessian);
            }
            None => {
                // no representable decrease left: accept as converged only if
                // the gradient is already at rounding level
                if ev.grad_max_norm() < 1e-6 * (1.0 + ev.value.abs()) {
                    return Ok(SmoothFit {
                        eta,
                        phi,
                        objective: ev.value,
                        iterations,
                        converged: false,
                        history,
                    });
                }
                return Err(FitError::LineSearchFailed(iterations));
            }
        }
    }
}

/// Backtracking Armijo search along `dir` from step `t`; on success the
/// accepted point is left in `trial_eta`, `trial_phi`.
#[allow(clippy::too_many_arguments)]
fn line_search(
    des: &LocalDesign,
    tau: f64,
    b: f64,
    opts: &SolverOptions,
    ev: &SmoothedLossEval,
    eta: &[f64],
    phi: &[f64],
    dir: &Direction,
    slope: f64,
    mut t: f64,
    trial_eta: &mut [f64],
    trial_phi: &mut [f64],
) -> Option<f64> {
    for _ in 0..60 {
        for j in 0..eta.len() {
            trial_eta[j] = eta[j] + t * dir.eta[j];
        }
        for a in 0..phi.len() {
            trial_phi[a] = phi[a] + t * dir.phi[a];
        }
        let val = eval_design(des, trial_eta, trial_phi, tau, b, &opts.smoother, Want::Value).value;
        if val.is_finite() && val <= ev.value + opts.armijo * t * slope && val < ev.value {
            return Some(val);
        }
        t *= opts.contraction;
    }
    None
}

fn directional_derivative(ev: &SmoothedLossEval, dir: &Direction) -> f64 {
    ev.grad_eta.iter().zip(&dir.eta).map(|(g, d)| g * d).sum::<f64>()
        + ev.grad_beta.iter().zip(&dir.phi).map(|(g, d)| g * d).sum::<f64>()
}

/// Starting values on the design: from `init` when given, else from an LLQR fit.
fn starting_point(
    des: &LocalDesign,
    tau: f64,
    h: f64,
    opts: &SolverOptions,
    init: Option<&FitResult>,
) -> Result<(Vec<f64>, Vec<f64>), FitError> {
    match init {
        Some(f) => {
            if f.eta.len() != des.n_units_total {
                return Err(FitError::InitMismatch {
                    expected: des.n_units_total,
                    found: f.eta.len(),
                });
            }
            let phi: Vec<f64> = f.beta.iter().map(|v| v * h).collect();
            let eta = des
                .units
                .iter()
                .enumerate()
                .map(|(j, &i)| match f.eta[i] {
                    Some(v) => v,
                    None => {
                        let r = des.unit_range(j);
                        let vals: Vec<f64> = r.clone().map(|o| des.y[o] - des.fitted_slope(o, &phi)).collect();
                        weighted_quantile(&vals, &des.w[r], tau).expect("retained unit")
                    }
                })
                .collect();
            Ok((eta, phi))
        }
        None => {
            let q = solve_llqr_design(des, tau, opts);
            Ok((q.eta, q.phi))
        }
    }
}

/// Fits the LLSQR estimator, starting from `init` or from an LLQR fit.
pub fn fit_llsqr(
    p: &PanelData,
    spec: &EvalSpec,
    opts: &SolverOptions,
    init: Option<&FitResult>,
) -> Result<FitResult, FitError> {
    spec.check_panel(p)?;
    let kernel = opts.kernel_spec(p.dim());
    let des = LocalDesign::build(p, &spec.x, spec.h, &kernel, Terms::Linear);
    des.check_identified()?;
    if init.is_some_and(|f| f.beta.len() != p.dim()) {
        return Err(FitError::InitMismatch {
            expected: p.dim(),
            found: init.map(|f| f.beta.len()).unwrap_or(0),
        });
    }
    let (eta0, phi0) = starting_point(&des, spec.tau, spec.h, opts, init)?;
    let fit = solve_llsqr_design(&des, spec.tau, spec.b, opts, eta0, phi0)?;
    Ok(FitResult {
        estimator: Estimator::Llsqr,
        beta: fit.phi.iter().map(|v| v / spec.h).collect(),
        eta: des.expand_eta(&fit.eta),
        objective: fit.objective,
        iterations: fit.iterations,
        converged: fit.converged,
        dropped_units: des.dropped.clone(),
        history: fit.history,
    })
}

/// Local-quadratic LLSQR on a design with quadratic columns; returns
/// `(eta, phi)` in scaled coordinates.
pub(crate) fn fit_quadratic_design(
    des: &LocalDesign,
    tau: f64,
    b: f64,
    opts: &SolverOptions,
) -> Result<(Vec<f64>, Vec<f64>), FitError> {
    des.check_identified()?;
    let start = solve_llqr_design(des, tau, opts);
    let fit = solve_llsqr_design(des, tau, b, opts, start.eta, start.phi)?;
    Ok((fit.eta, fit.phi))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_panel(n: usize, t: usize, seed: u64) -> PanelData {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut x = Vec::new();
        let mut y = Vec::new();
        for i in 0..n {
            for _ in 0..t {
                let xv: f64 = rng.random_range(-2.0..2.0);
                x.push(xv);
                y.push(i as f64 * 0.5 + xv + (1.0 + 0.3 * xv * xv).sqrt() * rng.random_range(-1.5..1.5));
            }
        }
        PanelData::from_dense(n, t, 1, y, x).unwrap()
    }

    #[test]
    fn symmetric_configuration_has_zero_gradient() {
        // per unit residuals {-0.3, 0.3} at x = -/+ 0.2, equal kernel weights
        let x = vec![-0.2, 0.2, -0.2, 0.2];
        let y = vec![0.3, -0.3, -0.3, 0.3];
        let p = PanelData::from_dense(2, 2, 1, y, x).unwrap();
        let spec = EvalSpec::new(vec![0.0], 0.5, 1.0, 0.5, vec![-1.0], vec![1.0]).unwrap();
        let ev = sqr_eval(
            &[0.0, 0.0],
            &[0.0],
            &p,
            &spec,
            &KernelSpec::epanechnikov(1),
            &SmootherSpec::fourth_order(),
            Want::Hessian,
        );
        assert!(ev.grad_max_norm() < 1e-14, "{:?}", ev);
    }

    #[test]
    fn schur_direction_matches_dense_solve() {
        let p = random_panel(6, 25, 11);
        let spec = EvalSpec::new(vec![0.3], 0.3, 0.8, 0.5, vec![-2.0], vec![2.0]).unwrap();
        let kernel = KernelSpec::epanechnikov(1);
        let des = LocalDesign::build(&p, &spec.x, spec.h, &kernel, Terms::Linear);
        let start = solve_llqr_design(&des, spec.tau, &SolverOptions::default());
        let ev = eval_design(&des, &start.eta, &start.phi, spec.tau, spec.b, &SmootherSpec::default(), Want::Hessian);
        let dir = newton_direction(&ev);
        if dir.newton && !dir.modified {
            let mut h = ev.dense_hessian();
            for j in 0..des.n_retained() {
                h[(j, j)] += eta_regularization(ev.hess_eta_diag[j]);
            }
            let g = DVector::from_vec(ev.gradient());
            let dense = h.lu().solve(&(-g)).unwrap();
            let ours: Vec<f64> = dir.eta.iter().chain(&dir.phi).copied().collect();
            for (a, b) in ours.iter().zip(dense.iter()) {
                assert!((a - b).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn noise_free_linear_slope() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let x0 = 0.1;
        let (n, t) = (4, 40);
        let mut x = Vec::new();
        let mut y = Vec::new();
        for i in 0..n {
            for _ in 0..t {
                let xv: f64 = rng.random_range(-2.0..2.0);
                x.push(xv);
                y.push(i as f64 + 2.0 * (xv - x0));
            }
        }
        let p = PanelData::from_dense(n, t, 1, y, x).unwrap();
        let spec = EvalSpec::new(vec![x0], 0.5, 0.8, 0.5, vec![-2.0], vec![2.0]).unwrap();
        let fit = fit_llsqr(&p, &spec, &SolverOptions::default(), None).unwrap();
        assert!((fit.beta[0] - 2.0).abs() < 1e-6);
        assert!(fit.converged);
    }

    #[test]
    fn accepted_steps_strictly_decrease() {
        let p = random_panel(8, 30, 5);
        let spec = EvalSpec::new(vec![-1.0], 0.25, 0.8, 0.5, vec![-2.0], vec![2.0]).unwrap();
        let fit = fit_llsqr(&p, &spec, &SolverOptions::default(), None).unwrap();
        assert!(fit.history.windows(2).all(|w| w[1] < w[0]));
        assert!(fit.converged);
    }

    #[test]
    fn init_shape_is_checked() {
        let p = random_panel(3, 10, 1);
        let spec = EvalSpec::new(vec![0.0], 0.5, 0.8, 0.5, vec![-2.0], vec![2.0]).unwrap();
        let bogus = FitResult {
            estimator: Estimator::Llqr,
            beta: vec![0.0],
            eta: vec![Some(0.0); 2],
            objective: 0.0,
            iterations: 0,
            converged: true,
            dropped_units: vec![],
            history: vec![],
        };
        assert!(matches!(
            fit_llsqr(&p, &spec, &SolverOptions::default(), Some(&bogus)),
            Err(FitError::InitMismatch { .. })
        ));
    }
}
