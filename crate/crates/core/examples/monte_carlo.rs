//! A reduced version of the simulation table: 11 points, four estimators.
//!
//! cargo run --release --example monte_carlo -- [reps]

use panel_qpe::simulate::{run_monte_carlo, summarize, DgpSpec, ErrorDist, McConfig, ReportFormat};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let reps = std::env::args().nth(1).map(|s| s.parse()).transpose()?.unwrap_or(20);
    let mut cfg = McConfig::table_defaults(DgpSpec::location_scale(ErrorDist::StdNormal), 2024);
    cfg.reps = reps;
    let report = run_monte_carlo(&cfg)?;
    print!("{}", summarize(&report, ReportFormat::Table));
    Ok(())
}
