//! Finite-difference check of every parameter group of a width-4 network on
//! a 32×32 input, in double precision.
//!
//!     cargo run --release --example gradcheck_tiny [-- SEED]

use std::time::Instant;

use euisnet::commands::{gradcheck, gradcheck_table, GradCheckScale};

fn main() -> euisnet::Result<()> {
    let seed = std::env::args().nth(1).map_or(0, |a| a.parse().expect("seed"));
    let start = Instant::now();
    let report = gradcheck(GradCheckScale::Tiny, seed, false)?;
    print!("{}", gradcheck_table(&report));
    println!("{:.1}s", start.elapsed().as_secs_f64());
    if !report.passed() {
        std::process::exit(1);
    }
    Ok(())
}
