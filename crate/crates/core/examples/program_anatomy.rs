//! Builds a random program, embeds an MNIST-sized image and writes the
//! program and the resulting adversarial image as PPM files.
//!
//!     cargo run --release --example program_anatomy -- [out_dir]

use std::path::PathBuf;

use anyhow::Result;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use reprog::harness::write_ppm;
use reprog::reprogram::{adv_image, embed, AdversarialProgram, Geometry};
use reprog::Tensor;

fn main() -> Result<()> {
    let out = PathBuf::from(std::env::args().nth(1).unwrap_or_else(|| ".".into()));
    std::fs::create_dir_all(&out)?;
    let geometry = Geometry::centered(64, 28)?;
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let w = Tensor::from_fn(geometry.shape(), |_| rng.random_range(-2.0f32..2.0));
    let program = AdversarialProgram::from_weights(geometry, w)?;
    let p = program.squash();

    let masked = (0..64 * 64)
        .filter(|&i| geometry.in_data_region(i / 64, i % 64))
        .count();
    let max = p.data().iter().fold(0.0f32, |m, v| m.max(v.abs()));
    println!("program {:?}: {masked} masked pixels, max |P| = {max:.4}", p.shape());

    // A diagonal stripe stands in for a digit.
    let x = Tensor::from_fn(
        vec![28, 28, 3],
        |i| if (i / 3) / 28 == (i / 3) % 28 { 1.0 } else { -1.0 },
    );
    let x_adv = adv_image(&embed(&x, &geometry)?, &p)?;
    write_ppm(&p, out.join("program.ppm"))?;
    write_ppm(&x_adv, out.join("adversarial.ppm"))?;
    println!(
        "wrote {} and {}",
        out.join("program.ppm").display(),
        out.join("adversarial.ppm").display()
    );
    Ok(())
}
