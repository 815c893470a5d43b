//! Reprograms a host to classify MNIST digits and writes the run's
//! artifacts (program, metrics, config, result).
//!
//!     ARP_MNIST_DIR=data/mnist cargo run --release --example reprogram_mnist -- host.arpm [steps] [out_dir]

use std::path::PathBuf;

use anyhow::{Context, Result};
use reprog::harness::{run_reprogram, ExperimentSpec, HostSpec, ReprogramOverrides, TaskSpec};
use reprog::reprogram::TaskKind;

fn main() -> Result<()> {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let mut args = std::env::args().skip(1);
    let model = args
        .next()
        .context("usage: reprogram_mnist <host.arpm> [steps] [out_dir]")?;
    let steps: usize = args.next().map(|s| s.parse()).transpose()?.unwrap_or(1_000);
    let out = args.next().unwrap_or_else(|| "mnist-run".into());

    let spec = ExperimentSpec {
        host: HostSpec {
            model_path: Some(PathBuf::from(model)),
            ..Default::default()
        },
        task: TaskSpec {
            train_eval_samples: 2_000,
            ..TaskSpec::new(TaskKind::Mnist)
        },
        reprogram: ReprogramOverrides {
            total_steps: Some(steps),
            ..Default::default()
        },
        output_dir: Some(PathBuf::from(&out)),
        ..Default::default()
    };
    let summary = run_reprogram(&spec)?;
    println!(
        "train {:.4} test {:.4} gap {:.4} ({} test images); artifacts in {out}",
        summary.train_acc, summary.test_acc, summary.train_test_gap, summary.n_test
    );
    Ok(())
}
