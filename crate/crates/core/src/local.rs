//! Kernel-localized design shared by the LLQR and LLSQR solvers.
//!
//! Only observations with positive kernel weight are kept. Regressors are
//! stored in bandwidth-scaled coordinates `(X - x) / h`, so the solvers work
//! with the scaled slope `phi = h * beta`.

use nalgebra::{DMatrix, SymmetricEigen};

use crate::error::FitError;
use crate::kernels::KernelSpec;
use crate::model::PanelData;

/// Which columns the local design carries.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Terms {
    Linear,
    /// Linear terms followed by `u_k u_l` for `k <= l`.
    Quadratic,
}

#[derive(Debug, Clone)]
pub struct LocalDesign {
    pub n_units_total: usize,
    /// Original indices of the retained units.
    pub units: Vec<usize>,
    /// `offsets[j]..offsets[j + 1]` indexes the observations of retained unit `j`.
    pub offsets: Vec<usize>,
    pub y: Vec<f64>,
    /// Row-major `n_obs x p` design in scaled coordinates.
    pub z: Vec<f64>,
    pub w: Vec<f64>,
    pub p: usize,
    pub dim: usize,
    pub h: f64,
    pub dropped: Vec<usize>,
}

impl LocalDesign {
    pub fn build(panel: &PanelData, x: &[f64], h: f64, kernel: &KernelSpec, terms: Terms) -> Self {
        let d = panel.dim();
        assert_eq!(x.len(), d);
        let p = match terms {
            Terms::Linear => d,
            Terms::Quadratic => d + d * (d + 1) / 2,
        };
        let mut units = Vec::new();
        let mut dropped = Vec::new();
        let mut offsets = vec![0];
        let mut y = Vec::new();
        let mut z = Vec::new();
        let mut w = Vec::new();
        let mut u = vec![0.0; d];
        for i in 0..panel.n_units() {
            let start = y.len();
            for t in 0..panel.n_periods() {
                let xi = panel.x(i, t);
                for k in 0..d {
                    u[k] = (xi[k] - x[k]) / h;
                }
                let k_it = kernel.value(&u);
                if k_it > 0.0 {
                    y.push(panel.y(i, t));
                    w.push(k_it);
                    z.extend_from_slice(&u);
                    if terms == Terms::Quadratic {
                        for a in 0..d {
                            for b in a..d {
                                z.push(u[a] * u[b]);
                            }
                        }
                    }
                }
            }
            if y.len() > start {
                units.push(i);
                offsets.push(y.len());
            } else {
                dropped.push(i);
            }
        }
        Self {
            n_units_total: panel.n_units(),
            units,
            offsets,
            y,
            z,
            w,
            p,
            dim: d,
            h,
            dropped,
        }
    }

    pub fn n_retained(&self) -> usize {
        self.units.len()
    }

    pub fn n_obs(&self) -> usize {
        self.y.len()
    }

    #[inline]
    pub fn unit_range(&self, j: usize) -> std::ops::Range<usize> {
        self.offsets[j]..self.offsets[j + 1]
    }

    #[inline]
    pub fn row(&self, o: usize) -> &[f64] {
        &self.z[o * self.p..(o + 1) * self.p]
    }

    #[inline]
    pub fn fitted_slope(&self, o: usize, phi: &[f64]) -> f64 {
        self.row(o).iter().zip(phi).map(|(a, b)| a * b).sum()
    }

    pub fn total_weight(&self) -> f64 {
        self.w.iter().sum()
    }

    /// Rank of the weighted within-unit scatter of the design.
    pub fn within_rank(&self) -> usize {
        let p = self.p;
        let mut s = DMatrix::<f64>::zeros(p, p);
        let mut mean = vec![0.0; p];
        for j in 0..self.n_retained() {
            let r = self.unit_range(j);
            let sw: f64 = self.w[r.clone()].iter().sum();
            mean.iter_mut().for_each(|m| *m = 0.0);
            for o in r.clone() {
                for (m, v) in mean.iter_mut().zip(self.row(o)) {
                    *m += self.w[o] * v / sw;
                }
            }
            for o in r {
                let row = self.row(o);
                for a in 0..p {
                    let da = row[a] - mean[a];
                    for b in 0..p {
                        s[(a, b)] += self.w[o] * da * (row[b] - mean[b]);
                    }
                }
            }
        }
        let eig = SymmetricEigen::new(s);
        let top = eig.eigenvalues.iter().fold(0.0f64, |a, &v| a.max(v.abs()));
        if top <= 0.0 {
            return 0;
        }
        eig.eigenvalues.iter().filter(|&&v| v > 1e-10 * top).count()
    }

    /// Fails with `NoLocalData` / `RankDeficientDesign` when the design cannot
    /// identify the slope.
    pub fn check_identified(&self) -> Result<(), FitError> {
        if self.n_retained() == 0 {
            return Err(FitError::NoLocalData);
        }
        let rank = self.within_rank();
        if rank < self.p {
            return Err(FitError::RankDeficientDesign { rank, needed: self.p });
        }
        Ok(())
    }

    /// Expands per-retained-unit intercepts to an N-vector with `None` for dropped units.
    pub fn expand_eta(&self, eta: &[f64]) -> Vec<Option<f64>> {
        let mut out = vec![None; self.n_units_total];
        for (j, &i) in self.units.iter().enumerate() {
            out[i] = Some(eta[j]);
        }
        out
    }
}
