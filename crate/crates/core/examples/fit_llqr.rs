//! Local linear quantile regression on a simulated panel.
//!
//! cargo run --release --example fit_llqr

use panel_qpe::qr_core::fit_llqr;
use panel_qpe::simulate::{gen_panel, true_qpe, DgpSpec, ErrorDist};
use panel_qpe::{EvalSpec, SolverOptions};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let dgp = DgpSpec::location_scale(ErrorDist::StdNormal);
    let panel = gen_panel(&dgp, 100, 100, 7);
    let opts = SolverOptions::default();
    let tau = 0.25;

    println!("{:>6} {:>8} {:>8} {:>6} {:>9}", "x", "beta", "true", "iters", "converged");
    for x in [-1.6, -0.8, 0.0, 0.8, 1.6] {
        let spec = EvalSpec::new(vec![x], tau, 0.8, 0.5, vec![-2.0], vec![2.0])?;
        let fit = fit_llqr(&panel, &spec, &opts)?;
        println!(
            "{x:>6.1} {:>8.4} {:>8.4} {:>6} {:>9}",
            fit.beta[0],
            true_qpe(&dgp, x, tau)?,
            fit.iterations,
            fit.converged
        );
    }
    Ok(())
}
