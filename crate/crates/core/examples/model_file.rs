//! Saves a host model, reloads it and checks the logits are bit-identical.
//!
//!     cargo run --release --example model_file -- [path]

use anyhow::{ensure, Result};
use reprog::host::{init_random, DESK_CONV};
use reprog::nn::{forward, load_model, save_model};
use reprog::Tensor;

fn main() -> Result<()> {
    let path = std::env::args().nth(1).unwrap_or_else(|| "desk-conv.arpm".into());
    let model = init_random(DESK_CONV, 42)?;
    save_model(&model, &path)?;
    let loaded = load_model(&path)?;

    let x = Tensor::from_fn(vec![64, 64, 3], |i| ((i % 17) as f32 / 8.0) - 1.0);
    let (a, _) = forward(&model, &x)?;
    let (b, _) = forward(&loaded, &x)?;
    ensure!(a.data().iter().zip(b.data()).all(|(x, y)| x.to_bits() == y.to_bits()));
    println!(
        "{} ({}): {} parameters, {} bytes on disk, logits identical after reload",
        loaded.arch(),
        loaded.provenance(),
        loaded.num_parameters(),
        std::fs::metadata(&path)?.len()
    );
    Ok(())
}
