//! Trains the desk-conv host on the built-in shapes task (or CIFAR-10 when
//! `ARP_CIFAR_DIR` points at the binary batches) and saves it.
//!
//!     cargo run --release --example train_host -- host.arpm [train_count] [epochs]

use std::time::Instant;

use anyhow::{Context, Result};
use reprog::data::{gen_shapes, ShapesConfig};
use reprog::host::{train_host, HostTrainConfig, DESK_CONV};
use reprog::nn::save_model;

fn main() -> Result<()> {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let mut args = std::env::args().skip(1);
    let out = args.next().unwrap_or_else(|| "host.arpm".into());
    let count: usize = args.next().map(|s| s.parse()).transpose()?.unwrap_or(10_000);
    let epochs: usize = args.next().map(|s| s.parse()).transpose()?.unwrap_or(6);

    let train = gen_shapes(
        &ShapesConfig {
            seed: 1,
            ..Default::default()
        },
        count,
    )?
    .upscale(2);
    let test = gen_shapes(
        &ShapesConfig {
            seed: 2,
            ..Default::default()
        },
        2_000,
    )?
    .upscale(2);
    let cfg = HostTrainConfig {
        epochs,
        ..Default::default()
    };

    let start = Instant::now();
    let (model, report) = train_host(DESK_CONV, &train, &test, &cfg)?;
    println!(
        "held-out accuracy {:.4} after {} steps in {:.1}s",
        report.held_out_accuracy,
        report.losses.len(),
        start.elapsed().as_secs_f64()
    );
    save_model(&model, &out).with_context(|| format!("saving {out}"))?;
    Ok(())
}
