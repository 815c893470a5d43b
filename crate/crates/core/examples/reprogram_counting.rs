//! Reprograms a host to count squares.
//!
//!     cargo run --release --example reprogram_counting -- [host.arpm] [steps]
//!
//! Without a model file a random desk-conv host is used.

use anyhow::Result;
use reprog::data::{gen_counting, CountingConfig, CountingTask};
use reprog::host::{init_random, DESK_CONV};
use reprog::nn::load_model;
use reprog::reprogram::{evaluate_program, train_program, LabelMap, ReprogramConfig};

fn main() -> Result<()> {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let mut args = std::env::args().skip(1);
    let model = match args.next() {
        Some(path) => load_model(path)?,
        None => init_random(DESK_CONV, 0)?,
    };
    let steps: usize = args.next().map(|s| s.parse()).transpose()?.unwrap_or(500);

    let task = CountingTask::new(CountingConfig::with_seed(0))?;
    let test = gen_counting(&CountingConfig::with_seed(1), 2_000)?;
    let map = LabelMap::identity(10);
    let cfg = ReprogramConfig {
        total_steps: steps,
        eval_every: 100,
        ..ReprogramConfig::counting()
    };
    let (program, metrics) = train_program(&model, &task, Some(&test.head(500)), &map, &cfg)?;
    let acc = evaluate_program(&model, &program, &map, &test)?;
    println!(
        "{} host, {steps} steps: final loss {:.4}, test accuracy {acc:.4} on {} images",
        model.provenance(),
        metrics.records.last().map_or(f64::NAN, |r| r.loss),
        test.len()
    );
    Ok(())
}
