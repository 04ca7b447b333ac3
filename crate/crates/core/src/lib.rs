//! Quantile partial effects in fixed-effects panels.
//!
//! The crate fits two local estimators of the slope of the conditional
//! quantile function at a point `x`, treating the unit effects as
//! incidental intercepts:
//!
//! * **LLQR**: kernel-weighted check-loss regression ([`qr_core::fit_llqr`]);
//! * **LLSQR**: the same fit with the indicator replaced by a smooth survival
//!   function built from a fourth-order kernel ([`sqr_core::fit_llsqr`]).
//!
//! Around these sit asymptotic standard errors and boundary bias terms
//! ([`inference`]), split-panel jackknife correction ([`jackknife`]), and a
//! seeded Monte Carlo harness ([`simulate`]). The `panel-qpe` binary wraps
//! the same API ([`cli`]).

pub mod cli;
pub mod error;
pub mod inference;
pub mod jackknife;
pub mod kernels;
pub mod local;
pub mod model;
pub mod qr_core;
pub mod simulate;
pub mod sqr_core;

pub use error::{DataError, FitError, InferenceError, MomentError, SimError};
pub use model::{EvalSpec, PanelData, Record};
pub use qr_core::{Estimator, FitResult, SolverOptions};

/// Fits either estimator with default initialization.
pub fn fit(estimator: Estimator, p: &PanelData, spec: &EvalSpec, opts: &SolverOptions) -> Result<FitResult, FitError> {
    match estimator {
        Estimator::Llqr => qr_core::fit_llqr(p, spec, opts),
        Estimator::Llsqr => sqr_core::fit_llsqr(p, spec, opts, None),
    }
}
