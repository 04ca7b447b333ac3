//! Split-panel jackknife: `2 b - (b1 + b2) / 2` from the full panel and its two time halves.

use crate::error::FitError;
use crate::model::{split_halves, EvalSpec, PanelData};
use crate::qr_core::{fit_llqr, Estimator, FitResult, SolverOptions};
use crate::sqr_core::fit_llsqr;

#[derive(Debug, Clone, PartialEq)]
pub struct CorrectedFit {
    pub full: FitResult,
    pub half1: FitResult,
    pub half2: FitResult,
    pub beta_bc: Vec<f64>,
}

impl CorrectedFit {
    /// All three fits converged.
    pub fn converged(&self) -> bool {
        self.full.converged && self.half1.converged && self.half2.converged
    }
}

/// `2 full - 0.5 (half1 + half2)`, componentwise.
pub fn combine(full: &[f64], half1: &[f64], half2: &[f64]) -> Vec<f64> {
    assert!(full.len() == half1.len() && full.len() == half2.len());
    full.iter()
        .zip(half1.iter().zip(half2))
        .map(|(f, (a, b))| 2.0 * f - 0.5 * (a + b))
        .collect()
}

fn annotate(sample: &'static str) -> impl Fn(FitError) -> FitError {
    move |e| FitError::Sample {
        sample,
        source: Box::new(e),
    }
}

/// Half-sample fit. LLSQR starts from the half's own LLQR fit, so each of the
/// three LLSQR estimates is the LLQR-initialized local minimum of its sample;
/// starting from the full-sample LLSQR fit tends to stall in a worse basin.
fn fit_half(estimator: Estimator, half: &PanelData, spec: &EvalSpec, opts: &SolverOptions) -> Result<FitResult, FitError> {
    let qr = fit_llqr(half, spec, opts)?;
    match estimator {
        Estimator::Llqr => Ok(qr),
        Estimator::Llsqr => fit_llsqr(half, spec, opts, Some(&qr)),
    }
}

/// Bias-corrected fit. The same `spec` (hence the same h and b) is used for
/// all three samples.
pub fn bias_correct(
    p: &PanelData,
    spec: &EvalSpec,
    estimator: Estimator,
    opts: &SolverOptions,
) -> Result<CorrectedFit, FitError> {
    let full = crate::fit(estimator, p, spec, opts).map_err(annotate("full"))?;
    bias_correct_from(p, spec, estimator, opts, full)
}

/// As [`bias_correct`] with the full-sample fit already available.
pub fn bias_correct_from(
    p: &PanelData,
    spec: &EvalSpec,
    estimator: Estimator,
    opts: &SolverOptions,
    full: FitResult,
) -> Result<CorrectedFit, FitError> {
    let (a, b) = split_halves(p)?;
    let half1 = fit_half(estimator, &a, spec, opts).map_err(annotate("first half"))?;
    let half2 = fit_half(estimator, &b, spec, opts).map_err(annotate("second half"))?;
    let beta_bc = combine(&full.beta, &half1.beta, &half2.beta);
    Ok(CorrectedFit {
        full,
        half1,
        half2,
        beta_bc,
    })
}
