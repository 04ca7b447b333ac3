//! Kernel moment constants for interior and clipped geometries, and the smoother's moments.
//!
//! cargo run --release --example kernel_moments

use panel_qpe::kernels::quadrature::GaussLegendre;
use panel_qpe::kernels::{compute_moments, BoxGeometry, KernelSpec, SmootherSpec};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let k = KernelSpec::epanechnikov(1);
    for (lo, hi) in [(-1.0, 1.0), (-0.5, 1.0), (0.0, 1.0)] {
        let m = compute_moments(&k, &BoxGeometry::clipped(vec![lo], vec![hi]))?;
        println!(
            "B = [{lo:>4}, {hi}]  c0 = {:.4}  C1 = {:+.4}  C = {:.4}  d0 = {:.4}  D1 = {:+.4}  Omega = {:.4}",
            m.c0, m.c1[0], m.c[(0, 0)], m.d0, m.d1[0], m.omega[(0, 0)]
        );
    }

    let g = SmootherSpec::fourth_order();
    let rule = GaussLegendre::new(32);
    for j in 0..5 {
        let mj = rule.integrate(-1.0, 1.0, |u| u.powi(j) * g.g(u));
        println!("int u^{j} g(u) du = {mj:+.3e}");
    }
    println!("G(-1) = {}, G(0) = {}, G(1) = {}", g.G(-1.0), g.G(0.0), g.G(1.0));
    Ok(())
}
