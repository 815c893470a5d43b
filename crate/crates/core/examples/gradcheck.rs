//! Compares analytic gradients with central finite differences on small
//! random conv nets.
//!
//!     cargo run --release --example gradcheck

use anyhow::{bail, Result};
use reprog::gradcheck::{run_gradcheck, GradcheckConfig};

fn main() -> Result<()> {
    let report = run_gradcheck(&GradcheckConfig::default())?;
    for c in &report.checks {
        println!(
            "{:<8} seed {:>3}: {:>3} coordinates, {:>2} kinks skipped, max rel error {:.2e}",
            c.name, c.model_seed, c.coordinates, c.skipped_kinks, c.max_rel_error
        );
    }
    if !report.passed() {
        bail!("gradient check failed");
    }
    println!("all {} coordinates within tolerance", report.total_coordinates());
    Ok(())
}
