//! Split-panel jackknife at a boundary point, averaged over a few panels.
//!
//! cargo run --release --example jackknife

use panel_qpe::jackknife::bias_correct;
use panel_qpe::simulate::{gen_panel_keyed, true_qpe, DgpSpec, ErrorDist};
use panel_qpe::{Estimator, EvalSpec, SolverOptions};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let dgp = DgpSpec::location_scale(ErrorDist::StdNormal);
    let spec = EvalSpec::new(vec![-2.0], 0.25, 0.8, 0.5, vec![-2.0], vec![2.0])?;
    let truth = true_qpe(&dgp, -2.0, 0.25)?;
    let opts = SolverOptions::default();
    let reps = 20;

    for est in [Estimator::Llqr, Estimator::Llsqr] {
        let (mut raw, mut bc) = (0.0, 0.0);
        for r in 0..reps {
            let panel = gen_panel_keyed(&dgp, 100, 100, 42, r);
            let c = bias_correct(&panel, &spec, est, &opts)?;
            raw += c.full.beta[0] - truth;
            bc += c.beta_bc[0] - truth;
        }
        println!(
            "{:<6} mean bias {:+.3}  jackknife {:+.3}  ({reps} panels)",
            est.name(),
            raw / reps as f64,
            bc / reps as f64
        );
    }
    Ok(())
}
