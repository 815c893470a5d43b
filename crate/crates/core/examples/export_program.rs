//! Writes a saved program, and the program applied to one task image, as
//! PPM files.
//!
//!     cargo run --release --example export_program -- program.arpg [out_dir]

use std::path::PathBuf;

use anyhow::{Context, Result};
use reprog::data::{gen_counting, CountingConfig};
use reprog::harness::write_ppm;
use reprog::reprogram::{adv_image, embed, load_program};

fn main() -> Result<()> {
    let mut args = std::env::args().skip(1);
    let path = args.next().context("usage: export_program <program.arpg> [out_dir]")?;
    let out = PathBuf::from(args.next().unwrap_or_else(|| ".".into()));
    std::fs::create_dir_all(&out)?;

    let program = load_program(&path)?;
    let geometry = program.geometry();
    let p = program.squash();
    write_ppm(&p, out.join("program.ppm"))?;

    // Counting images match the common 36x36 geometry; other tasks need
    // their own data here.
    let sample = gen_counting(&CountingConfig::with_seed(0), 1)?;
    if sample.side() == geometry.k {
        let x_adv = adv_image(&embed(&sample.image(0), &geometry)?, &p)?;
        write_ppm(&x_adv, out.join("sample.ppm"))?;
        println!("sample with {} squares written", sample.label(0) + 1);
    }
    println!("program {:?} written to {}", p.shape(), out.display());
    Ok(())
}
