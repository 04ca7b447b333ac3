//! Plug-in standard errors and boundary bias terms for a fitted QPE.
//!
//! Densities are pooled across units: `f_X(x)` from the kernel mass and
//! `f_u(0|x)` from a kernel-weighted density of the local residuals.

use nalgebra::{DMatrix, DVector};

use crate::error::{FitError, InferenceError};
use crate::kernels::{compute_moments, BoxGeometry, KernelSpec, MomentSet};
use crate::local::{LocalDesign, Terms};
use crate::model::{EvalSpec, PanelData};
use crate::qr_core::{FitResult, SolverOptions};
use crate::sqr_core::fit_quadratic_design;

const DENSITY_FLOOR: f64 = 1e-12;

/// Pilot bandwidth multiplier for the curvature fit.
pub const CURVATURE_BANDWIDTH_FACTOR: f64 = 1.5;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DensityEstimates {
    pub fx: f64,
    pub fu0: f64,
    /// `fx * fu0` under pooling.
    pub fbar: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct QpeInference {
    pub beta: Vec<f64>,
    pub se: Vec<f64>,
    pub sigma_x: f64,
    pub boundary: bool,
    /// `h * B1`, in units of beta. Boundary points with a curvature input only.
    pub b1: Option<Vec<f64>>,
    /// B2 scaled to units of beta. Boundary points only.
    pub b2: Option<Vec<f64>>,
    /// B2 before scaling.
    pub b2_unscaled: Option<Vec<f64>>,
    pub densities: DensityEstimates,
    pub pilot_bw: f64,
}

/// Boundary flag and the kernel support clipped to the regressor support.
pub fn classify_point(spec: &EvalSpec) -> (bool, BoxGeometry) {
    let d = spec.dim();
    let mut boundary = false;
    let mut lo = Vec::with_capacity(d);
    let mut hi = Vec::with_capacity(d);
    for k in 0..d {
        let below = spec.x[k] - spec.support_lo[k];
        let above = spec.support_hi[k] - spec.x[k];
        if below < spec.h || above < spec.h {
            boundary = true;
        }
        lo.push(-below / spec.h);
        hi.push(above / spec.h);
    }
    (boundary, BoxGeometry::clipped(lo, hi))
}

/// Residuals and kernel weights of the retained local observations.
fn local_residuals(p: &PanelData, spec: &EvalSpec, fit: &FitResult, kernel: &KernelSpec) -> (Vec<f64>, Vec<f64>) {
    let d = p.dim();
    let mut u = vec![0.0; d];
    let mut res = Vec::new();
    let mut w = Vec::new();
    for i in 0..p.n_units() {
        let Some(eta) = fit.eta.get(i).copied().flatten() else { continue };
        for t in 0..p.n_periods() {
            let xi = p.x(i, t);
            for k in 0..d {
                u[k] = (xi[k] - spec.x[k]) / spec.h;
            }
            let k_it = kernel.value(&u);
            if k_it > 0.0 {
                let slope: f64 = (0..d).map(|k| (xi[k] - spec.x[k]) * fit.beta[k]).sum();
                res.push(p.y(i, t) - eta - slope);
                w.push(k_it);
            }
        }
    }
    (res, w)
}

/// Normal-reference bandwidth `1.06 sd_K(u) (sum K)^(-1/5)` for the residual density.
pub fn default_pilot_bw(residuals: &[f64], weights: &[f64]) -> f64 {
    let sw: f64 = weights.iter().sum();
    if !(sw > 0.0) {
        return 0.0;
    }
    let mean = residuals.iter().zip(weights).map(|(r, w)| r * w).sum::<f64>() / sw;
    let var = residuals.iter().zip(weights).map(|(r, w)| w * (r - mean).powi(2)).sum::<f64>() / sw;
    1.06 * var.sqrt() * sw.powf(-0.2)
}

fn gaussian(v: f64) -> f64 {
    (-0.5 * v * v).exp() / (2.0 * std::f64::consts::PI).sqrt()
}

/// Kernel-weighted Gaussian density of `residuals` at zero, bandwidth `bw`.
pub fn residual_density_at_zero(residuals: &[f64], weights: &[f64], bw: f64) -> f64 {
    let sw: f64 = weights.iter().sum();
    if !(sw > 0.0 && bw > 0.0) {
        return 0.0;
    }
    residuals.iter().zip(weights).map(|(r, w)| w * gaussian(r / bw)).sum::<f64>() / (sw * bw)
}

/// Pooled `f_X(x)` and `f_u(0|x)`. Returns the densities and the pilot bandwidth used.
pub fn estimate_densities(
    p: &PanelData,
    spec: &EvalSpec,
    fit: &FitResult,
    kernel: &KernelSpec,
    pilot_bw: Option<f64>,
) -> Result<(DensityEstimates, f64), InferenceError> {
    let (res, w) = local_residuals(p, spec, fit, kernel);
    let mass: f64 = w.iter().sum();
    if res.is_empty() || !(mass > 0.0) {
        return Err(InferenceError::DegenerateDensity("no local observations".into()));
    }
    let (_, geometry) = classify_point(spec);
    let c0 = compute_moments(kernel, &geometry)?.c0;
    let d = p.dim() as i32;
    let nt = (p.n_units() * p.n_periods()) as f64;
    let fx = mass / (nt * spec.h.powi(d) * c0);
    let bw = pilot_bw.unwrap_or_else(|| default_pilot_bw(&res, &w));
    if !(bw > 0.0 && bw.is_finite()) {
        return Err(InferenceError::DegenerateDensity(format!("pilot bandwidth {bw}")));
    }
    let fu0 = residual_density_at_zero(&res, &w, bw);
    if !(fx > DENSITY_FLOOR) {
        return Err(InferenceError::DegenerateDensity(format!("f_X(x) = {fx:e}")));
    }
    if !(fu0 > DENSITY_FLOOR) {
        return Err(InferenceError::DegenerateDensity(format!("f_u(0|x) = {fu0:e}")));
    }
    Ok((DensityEstimates { fx, fu0, fbar: fx * fu0 }, bw))
}

/// sigma(x) = f_X(x)^-1 f_u(0|x)^-2.
pub fn sigma_hat(d: &DensityEstimates) -> f64 {
    1.0 / (d.fx * d.fu0 * d.fu0)
}

/// Asymptotic variance matrix: the interior sandwich or, at the boundary, Omega.
pub fn variance_matrix(m: &MomentSet, boundary: bool) -> Result<DMatrix<f64>, InferenceError> {
    if boundary {
        Ok(m.omega.clone())
    } else {
        m.interior_sandwich().ok_or(InferenceError::SingularMoment)
    }
}

/// se_k = sqrt(tau (1 - tau) sigma V_kk / (N T h^(d+2))).
pub fn standard_errors(
    m: &MomentSet,
    d: &DensityEstimates,
    spec: &EvalSpec,
    boundary: bool,
    n: usize,
    t: usize,
) -> Result<Vec<f64>, InferenceError> {
    let v = variance_matrix(m, boundary)?;
    let rate = n as f64 * t as f64 * spec.h.powi(spec.dim() as i32 + 2);
    let scale = spec.tau * (1.0 - spec.tau) * sigma_hat(d) / rate;
    Ok((0..v.nrows()).map(|k| (scale * v[(k, k)]).sqrt()).collect())
}

/// B1 = 0.5 C^-1 int_B (u' Q u)(u - C1/c0) K(u) du, with Q the curvature of q_tau.
pub fn bias_b1(m: &MomentSet, qdd: &DMatrix<f64>) -> Result<Vec<f64>, InferenceError> {
    let d = m.dim();
    assert_eq!(qdd.shape(), (d, d), "curvature must be d x d");
    // odd integrand over a symmetric region
    if m.geometry.is_unclipped() || qdd.iter().all(|&v| v == 0.0) {
        return Ok(vec![0.0; d]);
    }
    let c_inv = m.c_inverse()?;
    let centre: Vec<f64> = m.c1.iter().map(|v| v / m.c0).collect();
    let mut acc = vec![0.0; d];
    m.geometry.integrate_weighted(&m.kernel, m.nodes, &mut acc, |u, k, out| {
        let mut quad = 0.0;
        for a in 0..d {
            for b in 0..d {
                quad += u[a] * qdd[(a, b)] * u[b];
            }
        }
        for j in 0..d {
            out[j] = quad * (u[j] - centre[j]) * k;
        }
    });
    let b1 = c_inv * DVector::from_vec(acc) * 0.5;
    Ok(b1.iter().copied().collect())
}

/// Unscaled B2 = -(tau - 1/2) / fbar * C^-1 (D1/c0 - C1 d0/c0^2).
pub fn bias_b2_unscaled(m: &MomentSet, fbar: f64, tau: f64) -> Result<Vec<f64>, InferenceError> {
    let d = m.dim();
    if !(fbar > DENSITY_FLOOR) {
        return Err(InferenceError::DegenerateDensity(format!("fbar = {fbar:e}")));
    }
    if tau == 0.5 || m.geometry.is_unclipped() {
        return Ok(vec![0.0; d]);
    }
    let c_inv = m.c_inverse()?;
    let inner = &m.d1 / m.c0 - &m.c1 * (m.d0 / (m.c0 * m.c0));
    let b2 = c_inv * inner * (-(tau - 0.5) / fbar);
    Ok(b2.iter().copied().collect())
}

/// B2 in units of beta: the unscaled value times kappa / sqrt(N T h^(d+2)),
/// kappa = sqrt(N / (T h^d)).
pub fn bias_b2(m: &MomentSet, d: &DensityEstimates, tau: f64, n: usize, t: usize, h: f64) -> Result<Vec<f64>, InferenceError> {
    let raw = bias_b2_unscaled(m, d.fbar, tau)?;
    Ok(raw.into_iter().map(|v| v * b2_scale(m.dim(), n, t, h)).collect())
}

/// kappa / sqrt(N T h^(d+2)), which equals 1 / (T h^(d+1)).
pub fn b2_scale(dim: usize, n: usize, t: usize, h: f64) -> f64 {
    let (n, t) = (n as f64, t as f64);
    let kappa = (n / (t * h.powi(dim as i32))).sqrt();
    kappa / (n * t * h.powi(dim as i32 + 2)).sqrt()
}

/// Hessian of q_tau at `spec.x` from a local-quadratic LLSQR fit at bandwidth 1.5h.
///
/// With scaled coordinates `u = (X - x)/h'` the fit carries `c_kl u_k u_l`
/// (k <= l); the Hessian has `2 c_kk / h'^2` on the diagonal and `c_kl / h'^2` off it.
pub fn pilot_curvature(p: &PanelData, spec: &EvalSpec, opts: &SolverOptions) -> Result<DMatrix<f64>, InferenceError> {
    spec.check_panel(p).map_err(FitError::from)?;
    let d = p.dim();
    let h2 = CURVATURE_BANDWIDTH_FACTOR * spec.h;
    let kernel = opts.kernel_spec(d);
    let des = LocalDesign::build(p, &spec.x, h2, &kernel, Terms::Quadratic);
    let (_, phi) = fit_quadratic_design(&des, spec.tau, spec.b, opts)?;
    let mut q = DMatrix::zeros(d, d);
    let mut col = d;
    for a in 0..d {
        for b in a..d {
            let c = phi[col] / (h2 * h2);
            if a == b {
                q[(a, a)] = 2.0 * c;
            } else {
                q[(a, b)] = c;
                q[(b, a)] = c;
            }
            col += 1;
        }
    }
    Ok(q)
}

/// Options for [`infer`].
#[derive(Debug, Clone, Default)]
pub struct InferOptions {
    /// Residual-density bandwidth; the normal-reference rule when `None`.
    pub pilot_bw: Option<f64>,
    /// Estimate curvature and report `b1` at boundary points.
    pub curvature: bool,
}

/// Standard errors plus boundary bias terms for one fit.
pub fn infer(
    p: &PanelData,
    spec: &EvalSpec,
    fit: &FitResult,
    opts: &SolverOptions,
    iopts: &InferOptions,
) -> Result<QpeInference, InferenceError> {
    let kernel = opts.kernel_spec(p.dim());
    let (boundary, geometry) = classify_point(spec);
    let m = if boundary {
        compute_moments(&kernel, &geometry)?
    } else {
        compute_moments(&kernel, &BoxGeometry::interior(p.dim()))?
    };
    let (dens, bw) = estimate_densities(p, spec, fit, &kernel, iopts.pilot_bw)?;
    let (n, t) = (p.n_units(), p.n_periods());
    let se = standard_errors(&m, &dens, spec, boundary, n, t)?;
    let (mut b1, mut b2, mut b2_unscaled) = (None, None, None);
    if boundary {
        let raw = bias_b2_unscaled(&m, dens.fbar, spec.tau)?;
        let s = b2_scale(p.dim(), n, t, spec.h);
        b2 = Some(raw.iter().map(|v| v * s).collect());
        b2_unscaled = Some(raw);
        if iopts.curvature {
            let q = pilot_curvature(p, spec, opts)?;
            b1 = Some(bias_b1(&m, &q)?.into_iter().map(|v| v * spec.h).collect());
        }
    }
    Ok(QpeInference {
        beta: fit.beta.clone(),
        se,
        sigma_x: sigma_hat(&dens),
        boundary,
        b1,
        b2,
        b2_unscaled,
        densities: dens,
        pilot_bw: bw,
    })
}
