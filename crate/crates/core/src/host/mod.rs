//! Host classifiers: random initialization, (adversarial) training on a
//! host task, FGSM and accuracy evaluation.

mod arch;

use log::{debug, info};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

pub use arch::{
    architecture, init_random, init_random_scaled, Architecture, ARCHITECTURES, DESK_CONV, DESK_LINEAR, TINY_CONV,
};

use crate::data::HostDataset;
use crate::error::{Error, Result};
use crate::nn::{backward, forward, forward_batch, softmax_in_place, HostModel, Provenance};
use crate::reprogram::AdamState;
use crate::tensor::{argmax, Real, Tensor};

/// 8/255 of the [0, 1] pixel range, expressed in [-1, 1] units.
pub const FGSM_EPSILON: f64 = 16.0 / 255.0;

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum AdversarialTraining {
    #[default]
    None,
    Fgsm {
        epsilon: f64,
    },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct HostTrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub seed: u64,
    pub adversarial: AdversarialTraining,
    /// Share of each minibatch replaced by FGSM examples.
    pub adversarial_fraction: f64,
    /// First step (0-based) at which adversarial examples are mixed in;
    /// `None` trains the first epoch on clean data only. FGSM from random
    /// initialization collapses desk-conv to uniform outputs.
    pub adversarial_from_step: Option<usize>,
    /// Stop after this many updates even if epochs remain.
    pub max_steps: Option<usize>,
}

impl Default for HostTrainConfig {
    fn default() -> Self {
        HostTrainConfig {
            epochs: 6,
            batch_size: 50,
            learning_rate: 1e-3,
            seed: 0,
            adversarial: AdversarialTraining::None,
            adversarial_fraction: 0.5,
            adversarial_from_step: None,
            max_steps: None,
        }
    }
}

impl HostTrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 || self.batch_size == 0 || self.learning_rate.is_nan() || self.learning_rate <= 0.0 {
            return Err(Error::Config(
                "epochs, batch size and learning rate must be positive".into(),
            ));
        }
        if let AdversarialTraining::Fgsm { epsilon } = self.adversarial {
            if !(epsilon > 0.0 && epsilon <= 1.0) {
                return Err(Error::Config(format!("FGSM epsilon {epsilon} not in (0, 1]")));
            }
        }
        if !(0.0..=1.0).contains(&self.adversarial_fraction) {
            return Err(Error::Config("adversarial fraction must be in [0, 1]".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct HostTrainReport {
    pub losses: Vec<f64>,
    pub held_out_accuracy: f64,
    pub held_out_fgsm_accuracy: Option<f64>,
}

/// Mean cross-entropy of `[batch, classes]` logits and its gradient.
pub fn cross_entropy<T: Real>(logits: &Tensor<T>, labels: &[usize]) -> (f64, Tensor<T>) {
    let classes = logits.shape()[1];
    let batch = labels.len();
    let mut grad = logits.clone();
    let mut loss = 0.0;
    for (row, &y) in grad.data_mut().chunks_mut(classes).zip(labels) {
        softmax_in_place(row);
        loss -= row[y].as_f64().max(f64::MIN_POSITIVE).ln();
        row[y] = row[y] - T::one();
        for v in row.iter_mut() {
            *v = *v / T::from_f64(batch as f64);
        }
    }
    (loss / batch as f64, grad)
}

/// Fast gradient sign step on a batch: `clamp(x + eps * sign(dL/dx), -1, 1)`.
pub fn fgsm_batch<T: Real>(model: &HostModel<T>, x: &Tensor<T>, labels: &[usize], epsilon: f64) -> Result<Tensor<T>> {
    if epsilon == 0.0 {
        return Ok(x.clone());
    }
    let (logits, trace) = forward_batch(model, x)?;
    let (_, dlogits) = cross_entropy(&logits, labels);
    let (dx, _) = backward(model, &trace, &dlogits, false)?;
    let eps = T::from_f64(epsilon);
    let one = T::one();
    let mut out = x.clone();
    for (v, g) in out.data_mut().iter_mut().zip(dx.data()) {
        let step = if *g > T::zero() {
            eps
        } else if *g < T::zero() {
            -eps
        } else {
            T::zero()
        };
        *v = (*v + step).max(-one).min(one);
    }
    Ok(out)
}

/// FGSM for a single `[n, n, 3]` image.
pub fn fgsm_example<T: Real>(model: &HostModel<T>, x: &Tensor<T>, y: usize, epsilon: f64) -> Result<Tensor<T>> {
    let mut shape = vec![1];
    shape.extend_from_slice(x.shape());
    let adv = fgsm_batch(model, &x.clone().reshape(shape)?, &[y], epsilon)?;
    adv.reshape(x.shape().to_vec())
}

/// Mean cross-entropy of the model on a batch.
pub fn batch_loss<T: Real>(model: &HostModel<T>, x: &Tensor<T>, labels: &[usize]) -> Result<f64> {
    let (logits, _) = forward_batch(model, x)?;
    Ok(cross_entropy(&logits, labels).0)
}

pub const EVAL_BATCH: usize = 100;

/// Top-1 accuracy; ties go to the lowest label.
pub fn evaluate(model: &HostModel, data: &HostDataset) -> Result<f64> {
    evaluate_batched(model, data, EVAL_BATCH)
}

pub fn evaluate_batched(model: &HostModel, data: &HostDataset, batch_size: usize) -> Result<f64> {
    accuracy_with(model, data, batch_size, None)
}

/// Accuracy on FGSM-perturbed copies of the data.
pub fn evaluate_fgsm(model: &HostModel, data: &HostDataset, epsilon: f64) -> Result<f64> {
    accuracy_with(model, data, EVAL_BATCH, Some(epsilon))
}

fn accuracy_with(model: &HostModel, data: &HostDataset, batch_size: usize, fgsm: Option<f64>) -> Result<f64> {
    if data.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let mut correct = 0usize;
    let indices: Vec<usize> = (0..data.len()).collect();
    for chunk in indices.chunks(batch_size.max(1)) {
        let labels: Vec<usize> = chunk.iter().map(|&i| data.label(i)).collect();
        let mut x = data.batch(chunk);
        if let Some(eps) = fgsm {
            x = fgsm_batch(model, &x, &labels, eps)?;
        }
        let (logits, _) = forward_batch(model, &x)?;
        correct += logits
            .data()
            .chunks(model.num_labels())
            .zip(&labels)
            .filter(|(row, &y)| argmax(row) == y)
            .count();
    }
    Ok(correct as f64 / data.len() as f64)
}

/// Trains a freshly initialized `arch_name` network on `data` with Adam.
///
/// With FGSM enabled, the leading `adversarial_fraction` of every minibatch
/// (from `adversarial_from_step`, by default the second epoch, on) is replaced by FGSM examples crafted
/// against the current weights. Held-out accuracy is stored in the model
/// metadata.
pub fn train_host(
    arch_name: &str,
    data: &HostDataset,
    held_out: &HostDataset,
    cfg: &HostTrainConfig,
) -> Result<(HostModel, HostTrainReport)> {
    cfg.validate()?;
    if data.is_empty() || held_out.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let covered = data.class_histogram().iter().filter(|&&c| c > 0).count();
    if covered < 10 {
        return Err(Error::Config(format!(
            "host data covers {covered} classes, need at least 10"
        )));
    }
    let mut model = init_random(arch_name, cfg.seed)?;
    if data.side() != model.side() {
        return Err(Error::Shape {
            expected: model.input_shape().to_vec(),
            got: vec![data.side(), data.side(), 3],
        });
    }
    if data.num_classes() > model.num_labels() {
        return Err(Error::Config(format!(
            "{} classes but only {} host labels",
            data.num_classes(),
            model.num_labels()
        )));
    }

    let mut states: Vec<AdamState> = model.parameters().map(|p| AdamState::new(p.len())).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ 0x005e_ed0f_4057);
    let mut order: Vec<usize> = (0..data.len()).collect();
    let mut losses = Vec::new();
    let mut step = 0usize;
    let adversarial_from = cfg.adversarial_from_step.unwrap_or(data.len().div_ceil(cfg.batch_size));

    'epochs: for epoch in 0..cfg.epochs {
        order.shuffle(&mut rng);
        for chunk in order.chunks(cfg.batch_size) {
            if cfg.max_steps.is_some_and(|max| step >= max) {
                break 'epochs;
            }
            let labels: Vec<usize> = chunk.iter().map(|&i| data.label(i)).collect();
            let mut x = data.batch(chunk);
            if let AdversarialTraining::Fgsm { epsilon } = cfg.adversarial {
                if step >= adversarial_from {
                    mix_in_fgsm(&model, &mut x, &labels, epsilon, cfg.adversarial_fraction)?;
                }
            }
            let (logits, trace) = forward_batch(&model, &x)?;
            let (loss, dlogits) = cross_entropy(&logits, &labels);
            if !loss.is_finite() {
                return Err(Error::Diverged {
                    step,
                    last_finite: losses.last().copied(),
                });
            }
            let (_, grads) = backward(&model, &trace, &dlogits, true)?;
            let grads = grads.unwrap().into_iter().flatten().flat_map(|(w, b)| [w, b]);
            for ((param, grad), state) in model.parameters_mut().zip(grads).zip(&mut states) {
                state.update(param, &grad, cfg.learning_rate)?;
            }
            losses.push(loss);
            step += 1;
            if step.is_multiple_of(100) {
                debug!("host step {step}: loss {loss:.4}");
            }
        }
        info!(
            "host epoch {}: mean loss {:.4}",
            epoch + 1,
            losses
                .iter()
                .rev()
                .take(order.len().div_ceil(cfg.batch_size))
                .sum::<f64>()
                / order.len().div_ceil(cfg.batch_size).min(losses.len()).max(1) as f64
        );
    }

    let held_out_accuracy = evaluate(&model, held_out)?;
    let mut report = HostTrainReport {
        losses,
        held_out_accuracy,
        held_out_fgsm_accuracy: None,
    };
    model.metadata.seed = Some(cfg.seed);
    model.metadata.epochs = Some(cfg.epochs);
    model.metadata.steps = Some(step);
    model.metadata.final_train_loss = report.losses.last().copied();
    model.metadata.held_out_accuracy = Some(held_out_accuracy);
    match cfg.adversarial {
        AdversarialTraining::None => model.set_provenance(Provenance::Trained),
        AdversarialTraining::Fgsm { epsilon } => {
            model.set_provenance(Provenance::AdversariallyTrained);
            model.metadata.fgsm_epsilon = Some(epsilon);
            let robust = evaluate_fgsm(&model, held_out, epsilon)?;
            model.metadata.held_out_fgsm_accuracy = Some(robust);
            report.held_out_fgsm_accuracy = Some(robust);
        }
    }
    info!("host held-out accuracy {held_out_accuracy:.4}");
    Ok((model, report))
}

fn mix_in_fgsm(model: &HostModel, x: &mut Tensor, labels: &[usize], epsilon: f64, fraction: f64) -> Result<()> {
    let count = ((labels.len() as f64) * fraction).ceil() as usize;
    if count == 0 {
        return Ok(());
    }
    let per = x.len() / labels.len();
    let mut shape = x.shape().to_vec();
    shape[0] = count;
    let head = Tensor::new(shape, x.data()[..count * per].to_vec())?;
    let adv = fgsm_batch(model, &head, &labels[..count], epsilon)?;
    x.data_mut()[..count * per].copy_from_slice(adv.data());
    Ok(())
}

/// Logits for a single image, as a plain vector.
pub fn logits_of(model: &HostModel, x: &Tensor) -> Result<Vec<f32>> {
    Ok(forward(model, x)?.0.into_data())
}
