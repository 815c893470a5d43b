//! Host x task grid: one trained host file against seeded random hosts, with
//! the trend gates evaluated at the end.
//!
//!     cargo run --release --example ablation_matrix -- host.arpm [steps] [out_dir]

use std::path::PathBuf;

use anyhow::{Context, Result};
use reprog::harness::{run_matrix, GateSpec, MatrixHost, MatrixSpec, ReprogramOverrides, TaskSpec};
use reprog::nn::Provenance;
use reprog::reprogram::TaskKind;

fn main() -> Result<()> {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let mut args = std::env::args().skip(1);
    let trained = args
        .next()
        .context("usage: ablation_matrix <host.arpm> [steps] [out_dir]")?;
    let steps: usize = args.next().map(|s| s.parse()).transpose()?.unwrap_or(200);
    let out = args.next().unwrap_or_else(|| "matrix-out".into());

    let mut hosts = vec![MatrixHost {
        model_path: Some(PathBuf::from(trained)),
        ..Default::default()
    }];
    hosts.extend((1..=3).map(|seed| MatrixHost {
        name: format!("random-{seed}"),
        provenance: Provenance::Random,
        seed,
        ..Default::default()
    }));
    let spec = MatrixSpec {
        hosts,
        tasks: vec![TaskSpec {
            eval_samples: 2_000,
            train_eval_samples: 2_000,
            ..TaskSpec::new(TaskKind::Counting)
        }],
        reprogram: ReprogramOverrides {
            total_steps: Some(steps),
            ..Default::default()
        },
        output_dir: PathBuf::from(&out),
        gate: Some(GateSpec::default()),
        ..Default::default()
    };
    let outcome = run_matrix(&spec)?;
    print!("{}", outcome.csv);
    for g in &outcome.gate {
        println!(
            "{} {}: {} ({})",
            g.task,
            g.name,
            if g.passed { "PASS" } else { "FAIL" },
            g.detail
        );
    }
    Ok(())
}
