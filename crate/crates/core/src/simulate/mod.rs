//! Simulation designs and the Monte Carlo harness.

pub mod dgp;
pub mod monte_carlo;

pub use dgp::{gen_panel, gen_panel_keyed, true_curvature, true_qpe, DgpSpec, ErrorDist, Family};
pub use monte_carlo::{run_monte_carlo, summarize, write_report, McCell, McConfig, McEstimator, McReport, ReportFormat};
