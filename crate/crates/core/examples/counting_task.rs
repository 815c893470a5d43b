//! Draws a few counting-task images as text and checks their labels.
//!
//!     cargo run --release --example counting_task -- [seed]

use anyhow::Result;
use reprog::data::{count_squares, gen_counting, CountingConfig};

fn main() -> Result<()> {
    let seed: u64 = std::env::args().nth(1).map(|s| s.parse()).transpose()?.unwrap_or(0);
    let cfg = CountingConfig::with_seed(seed);
    let set = gen_counting(&cfg, 3)?;
    let side = set.side();
    for i in 0..set.len() {
        let px = set.pixels(i);
        println!("label {} ({} squares)", set.label(i), count_squares(&cfg, px));
        // One character per 3x3 block of pixels.
        for r in (0..side).step_by(3) {
            let row: String = (0..side)
                .step_by(3)
                .map(|c| if px[(r * side + c) * 3] > 127 { '#' } else { '.' })
                .collect();
            println!("  {row}");
        }
    }
    let hist = gen_counting(&cfg, 10_000)?.class_histogram();
    println!("labels over 10,000 images: {hist:?}");
    Ok(())
}
