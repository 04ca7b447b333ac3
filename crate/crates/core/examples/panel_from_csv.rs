//! Reading a long-format panel and splitting it into time halves.
//!
//! cargo run --release --example panel_from_csv

use panel_qpe::model::{read_panel_from, split_halves};

const DATA: &str = "\
id,t,y,x1
firm_a,2001,1.2,0.3
firm_a,2002,0.7,-0.1
firm_a,2003,1.9,0.8
firm_b,2001,-0.4,-0.6
firm_b,2002,0.1,0.2
firm_b,2003,0.3,0.5
";

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let panel = read_panel_from(DATA.as_bytes(), b',')?;
    println!("N = {}, T = {}, d = {}", panel.n_units(), panel.n_periods(), panel.dim());
    println!("units {:?}, periods {:?}", panel.unit_labels(), panel.period_labels());
    let (a, b) = split_halves(&panel)?;
    println!("halves: T = {} and T = {}", a.n_periods(), b.n_periods());

    // an incomplete panel is rejected
    let broken = DATA.lines().take(6).collect::<Vec<_>>().join("\n");
    match read_panel_from(broken.as_bytes(), b',') {
        Ok(_) => println!("unexpectedly accepted"),
        Err(e) => println!("rejected: {e}"),
    }
    Ok(())
}
