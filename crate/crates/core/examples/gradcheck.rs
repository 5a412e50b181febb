//! Compares tape gradients of the full training objective with central
//! finite differences on a tiny extractor.
//!
//! cargo run --release --example gradcheck

use emorank::training::{run_gradient_check, GradCheckConfig};

fn main() -> emorank::Result<()> {
    let report = run_gradient_check(&GradCheckConfig::default())?;
    print!("{}", report.to_table());
    if !report.passed {
        std::process::exit(1);
    }
    Ok(())
}
