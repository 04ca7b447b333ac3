//! Standard errors everywhere, plus the boundary bias terms near the support edge.
//!
//! cargo run --release --example boundary_inference

use panel_qpe::inference::{infer, InferOptions};
use panel_qpe::simulate::{gen_panel, DgpSpec, ErrorDist};
use panel_qpe::sqr_core::fit_llsqr;
use panel_qpe::{EvalSpec, SolverOptions};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let panel = gen_panel(&DgpSpec::location_scale(ErrorDist::StdNormal), 100, 100, 11);
    let opts = SolverOptions::default();
    let iopts = InferOptions {
        curvature: true,
        ..Default::default()
    };

    println!("{:>5} {:>8} {:>8} {:>9} {:>9} {:>9} {:>8}", "x", "beta", "se", "boundary", "h*B1", "B2", "sigma");
    for x in [-2.0, -1.6, -0.8, 0.0] {
        let spec = EvalSpec::new(vec![x], 0.25, 0.8, 0.5, vec![-2.0], vec![2.0])?;
        let fit = fit_llsqr(&panel, &spec, &opts, None)?;
        let inf = infer(&panel, &spec, &fit, &opts, &iopts)?;
        let show = |v: &Option<Vec<f64>>| v.as_ref().map(|v| format!("{:.4}", v[0])).unwrap_or_else(|| "-".into());
        println!(
            "{x:>5.1} {:>8.4} {:>8.4} {:>9} {:>9} {:>9} {:>8.2}",
            inf.beta[0],
            inf.se[0],
            inf.boundary,
            show(&inf.b1),
            show(&inf.b2),
            inf.sigma_x
        );
    }
    Ok(())
}
