use nalgebra::{DMatrix, DVector};

use super::quadrature::{for_each_box_node, GaussLegendre};
use super::KernelSpec;
use crate::error::MomentError;

/// Nodes per dimension used by [`compute_moments`].
pub const DEFAULT_NODES: usize = 32;

const EMPTY_TOL: f64 = 1e-12;

/// Integration region B: the kernel support [-1, 1]^d clipped to a box.
#[derive(Debug, Clone, PartialEq)]
pub struct BoxGeometry {
    pub lo: Vec<f64>,
    pub hi: Vec<f64>,
}

impl BoxGeometry {
    /// The unclipped support [-1, 1]^d.
    pub fn interior(dim: usize) -> Self {
        Self {
            lo: vec![-1.0; dim],
            hi: vec![1.0; dim],
        }
    }

    /// Intersection of `[lo, hi]` with [-1, 1]^d. Widths may collapse to zero;
    /// that is reported later as an empty region.
    pub fn clipped(lo: Vec<f64>, hi: Vec<f64>) -> Self {
        assert_eq!(lo.len(), hi.len());
        let lo: Vec<f64> = lo.into_iter().map(|v| v.clamp(-1.0, 1.0)).collect();
        let hi: Vec<f64> = hi
            .into_iter()
            .zip(&lo)
            .map(|(v, &l)| v.clamp(-1.0, 1.0).max(l))
            .collect();
        Self { lo, hi }
    }

    pub fn dim(&self) -> usize {
        self.lo.len()
    }

    pub fn is_unclipped(&self) -> bool {
        self.lo.iter().all(|&v| v <= -1.0) && self.hi.iter().all(|&v| v >= 1.0)
    }

    /// Tensor Gauss–Legendre integral of `f(u) * K(u)` over the region; `f`
    /// writes into `acc` so several integrands share one sweep.
    pub fn integrate_weighted(
        &self,
        kernel: &KernelSpec,
        nodes: usize,
        acc: &mut [f64],
        mut f: impl FnMut(&[f64], f64, &mut [f64]),
    ) {
        let rule = GaussLegendre::new(nodes);
        acc.iter_mut().for_each(|a| *a = 0.0);
        let mut tmp = vec![0.0; acc.len()];
        for_each_box_node(&rule, &self.lo, &self.hi, |u, w| {
            let k = kernel.value(u);
            if k != 0.0 {
                tmp.iter_mut().for_each(|t| *t = 0.0);
                f(u, k, &mut tmp);
                for (a, t) in acc.iter_mut().zip(&tmp) {
                    *a += w * t;
                }
            }
        });
    }
}

/// Kernel integral constants for one geometry.
#[derive(Debug, Clone, PartialEq)]
pub struct MomentSet {
    pub c0: f64,
    pub c1: DVector<f64>,
    pub c2: DMatrix<f64>,
    pub cbar2: DMatrix<f64>,
    pub d0: f64,
    pub d1: DVector<f64>,
    pub k1: DMatrix<f64>,
    pub k2: DMatrix<f64>,
    /// C = C2 - C1 C1' / c0
    pub c: DMatrix<f64>,
    /// C^-1 [int_B (u - C1/c0)(u - C1/c0)' K^2] C^-1
    pub omega: DMatrix<f64>,
    pub geometry: BoxGeometry,
    pub kernel: KernelSpec,
    pub nodes: usize,
}

impl MomentSet {
    pub fn dim(&self) -> usize {
        self.c1.len()
    }

    /// K1^-1 K2 K1^-1, the interior sandwich.
    pub fn interior_sandwich(&self) -> Option<DMatrix<f64>> {
        let k1_inv = self.k1.clone().try_inverse()?;
        Some(&k1_inv * &self.k2 * &k1_inv)
    }

    pub fn c_inverse(&self) -> Result<DMatrix<f64>, MomentError> {
        invert_spd(&self.c).ok_or(MomentError::SingularC)
    }
}

/// Moment constants with the default 32-node rule per dimension.
pub fn compute_moments(kernel: &KernelSpec, geometry: &BoxGeometry) -> Result<MomentSet, MomentError> {
    compute_moments_with(kernel, geometry, DEFAULT_NODES)
}

/// Moment constants with `nodes` Gauss–Legendre points per dimension.
pub fn compute_moments_with(
    kernel: &KernelSpec,
    geometry: &BoxGeometry,
    nodes: usize,
) -> Result<MomentSet, MomentError> {
    let d = kernel.dim;
    if geometry.dim() != d {
        return Err(MomentError::DimensionMismatch {
            expected: d,
            found: geometry.dim(),
        });
    }
    if geometry.lo.iter().zip(&geometry.hi).any(|(l, h)| !(h - l > 0.0)) {
        return Err(MomentError::EmptyRegion(0.0));
    }

    // layout: c0 | C1 (d) | C2 (d*d) | d0 | D1 (d)
    let len = 2 + 2 * d + d * d;
    let mut acc = vec![0.0; len];
    geometry.integrate_weighted(kernel, nodes, &mut acc, |u, k, out| {
        out[0] = k;
        for j in 0..d {
            out[1 + j] = u[j] * k;
            for p in 0..d {
                out[1 + d + j * d + p] = u[j] * u[p] * k;
            }
        }
        out[1 + d + d * d] = k * k;
        for j in 0..d {
            out[2 + d + d * d + j] = u[j] * k * k;
        }
    });
    let c0 = acc[0];
    if c0.abs() <= EMPTY_TOL {
        return Err(MomentError::EmptyRegion(c0));
    }
    let c1 = DVector::from_column_slice(&acc[1..1 + d]);
    let c2 = symmetrize(DMatrix::from_row_slice(d, d, &acc[1 + d..1 + d + d * d]));
    let d0 = acc[1 + d + d * d];
    let d1 = DVector::from_column_slice(&acc[2 + d + d * d..]);

    let full = BoxGeometry::interior(d);
    let mut kk = vec![0.0; 2 * d * d];
    full.integrate_weighted(kernel, nodes, &mut kk, |u, k, out| {
        for j in 0..d {
            for p in 0..d {
                out[j * d + p] = u[j] * u[p] * k;
                out[d * d + j * d + p] = u[j] * u[p] * k * k;
            }
        }
    });
    let k1 = symmetrize(DMatrix::from_row_slice(d, d, &kk[..d * d]));
    let k2 = symmetrize(DMatrix::from_row_slice(d, d, &kk[d * d..]));

    let c = symmetrize(&c2 - &c1 * c1.transpose() / c0);
    let mut cbar2 = DMatrix::zeros(d + 1, d + 1);
    cbar2[(0, 0)] = c0;
    for j in 0..d {
        cbar2[(0, j + 1)] = c1[j];
        cbar2[(j + 1, 0)] = c1[j];
        for p in 0..d {
            cbar2[(j + 1, p + 1)] = c2[(j, p)];
        }
    }

    let centre: Vec<f64> = c1.iter().map(|v| v / c0).collect();
    let mut mid = vec![0.0; d * d];
    geometry.integrate_weighted(kernel, nodes, &mut mid, |u, k, out| {
        for j in 0..d {
            for p in 0..d {
                out[j * d + p] = (u[j] - centre[j]) * (u[p] - centre[p]) * k * k;
            }
        }
    });
    let mid = symmetrize(DMatrix::from_row_slice(d, d, &mid));
    let c_inv = invert_spd(&c).ok_or(MomentError::SingularC)?;
    let omega = symmetrize(&c_inv * mid * &c_inv);

    Ok(MomentSet {
        c0,
        c1,
        c2,
        cbar2,
        d0,
        d1,
        k1,
        k2,
        c,
        omega,
        geometry: geometry.clone(),
        kernel: *kernel,
        nodes,
    })
}

fn symmetrize(m: DMatrix<f64>) -> DMatrix<f64> {
    (&m + m.transpose()) * 0.5
}

/// Inverse of a symmetric positive-definite matrix, `None` when the Cholesky
/// factorisation fails or the condition estimate is hopeless.
pub(crate) fn invert_spd(m: &DMatrix<f64>) -> Option<DMatrix<f64>> {
    let chol = m.clone().cholesky()?;
    let diag_max = m.diagonal().iter().fold(0.0f64, |a, &v| a.max(v.abs()));
    let l = chol.l();
    let piv_min = l.diagonal().iter().fold(f64::INFINITY, |a, &v| a.min(v * v));
    if !(piv_min > 1e-14 * diag_max.max(f64::MIN_POSITIVE)) {
        return None;
    }
    Some(symmetrize(chol.inverse()))
}
