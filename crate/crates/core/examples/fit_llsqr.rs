//! Smoothed estimator started from the LLQR fit, and how it approaches LLQR as b shrinks.
//!
//! cargo run --release --example fit_llsqr

use panel_qpe::qr_core::fit_llqr;
use panel_qpe::simulate::{gen_panel, DgpSpec, ErrorDist};
use panel_qpe::sqr_core::fit_llsqr;
use panel_qpe::{EvalSpec, SolverOptions};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let panel = gen_panel(&DgpSpec::location_scale(ErrorDist::StudentT3), 60, 80, 3);
    let opts = SolverOptions::default();
    let base = EvalSpec::new(vec![0.4], 0.5, 0.8, 0.5, vec![-2.0], vec![2.0])?;
    let qr = fit_llqr(&panel, &base, &opts)?;
    println!("LLQR            beta = {:.5}", qr.beta[0]);

    for b in [1.0, 0.5, 0.25, 0.1, 0.05] {
        let spec = EvalSpec { b, ..base.clone() };
        let fit = fit_llsqr(&panel, &spec, &opts, Some(&qr))?;
        println!(
            "LLSQR b = {b:<5}  beta = {:.5}  ({} Newton steps, converged = {})",
            fit.beta[0], fit.iterations, fit.converged
        );
    }
    Ok(())
}
