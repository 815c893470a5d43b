//! FGSM against a small trained host, then FGSM adversarial training.
//!
//!     cargo run --release --example fgsm_host

use anyhow::Result;
use reprog::data::{gen_shapes, ShapesConfig};
use reprog::host::{
    batch_loss, evaluate, fgsm_batch, train_host, AdversarialTraining, HostTrainConfig, FGSM_EPSILON, TINY_CONV,
};

fn main() -> Result<()> {
    let shapes = |seed, count| {
        gen_shapes(
            &ShapesConfig {
                side: 12,
                seed,
                ..Default::default()
            },
            count,
        )
    };
    let train = shapes(1, 3_000)?;
    let test = shapes(2, 500)?;
    let idx: Vec<usize> = (0..test.len()).collect();
    let labels: Vec<usize> = idx.iter().map(|&i| test.label(i)).collect();
    let x = test.batch(&idx);

    for adversarial in [
        AdversarialTraining::None,
        AdversarialTraining::Fgsm { epsilon: FGSM_EPSILON },
    ] {
        let cfg = HostTrainConfig {
            epochs: 20,
            adversarial,
            learning_rate: 3e-3,
            ..Default::default()
        };
        let (model, report) = train_host(TINY_CONV, &train, &test, &cfg)?;
        let x_adv = fgsm_batch(&model, &x, &labels, FGSM_EPSILON)?;
        println!(
            "{}: clean acc {:.3}, clean loss {:.3}, FGSM loss {:.3}, held-out FGSM acc {}",
            model.provenance(),
            evaluate(&model, &test)?,
            batch_loss(&model, &x, &labels)?,
            batch_loss(&model, &x_adv, &labels)?,
            report.held_out_fgsm_accuracy.map_or("-".into(), |a| format!("{a:.3}"))
        );
    }
    Ok(())
}
