//! The reprogramming objective
//! `mean_batch(-log P(h_g(y_adv) | X_adv)) + λ ||W||²` and its gradient.

use log::warn;
use serde::{Deserialize, Serialize};

use super::labels::LabelMap;
use super::program::{adv_batch, adv_image, embed, AdversarialProgram};
use crate::data::{AdvExample, ImageSet};
use crate::error::{Error, Result};
use crate::nn::{backward, forward_batch, HostModel};
use crate::tensor::{Real, Tensor};

/// Added inside the log when a mapped probability underflows to zero.
pub const LOG_GUARD: f64 = 1e-12;

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct LossValue {
    pub total: f64,
    pub data_term: f64,
    pub penalty: f64,
    /// Examples whose mapped probability was exactly zero and went through
    /// the `log(p + 1e-12)` guard.
    pub clamped: usize,
}

fn log_sum_exp(values: impl Iterator<Item = f64> + Clone) -> f64 {
    let max = values.clone().fold(f64::NEG_INFINITY, f64::max);
    max + values.map(|v| (v - max).exp()).sum::<f64>().ln()
}

/// Per-example negative log mapped probability and (optionally) its
/// gradient with respect to the logits, scaled by `1 / batch`.
fn data_term<T: Real>(
    logits: &Tensor<T>,
    labels: &[usize],
    map: &LabelMap,
    want_grad: bool,
) -> Result<(f64, usize, Option<Tensor<T>>)> {
    let classes = logits.shape()[1];
    let batch = labels.len() as f64;
    let mut total = 0.0;
    let mut clamped = 0;
    let mut grad = want_grad.then(|| Tensor::zeros(logits.shape().to_vec()));
    for (b, (row, &y)) in logits.data().chunks(classes).zip(labels).enumerate() {
        let set = map.host_labels(y)?;
        if let Some(&h) = set.iter().find(|&&h| h >= classes) {
            return Err(Error::LabelRange { label: h, classes });
        }
        let z = row.iter().map(|v| v.as_f64());
        let lse_all = log_sum_exp(z.clone());
        let lse_set = log_sum_exp(set.iter().map(|&h| row[h].as_f64()));
        let log_p = lse_set - lse_all;
        if log_p.exp() == 0.0 {
            clamped += 1;
            total += -(LOG_GUARD).ln();
            continue;
        }
        total += -log_p;
        if let Some(g) = grad.as_mut() {
            let g_row = &mut g.data_mut()[b * classes..(b + 1) * classes];
            for (j, (gj, zj)) in g_row.iter_mut().zip(z).enumerate() {
                let mut d = (zj - lse_all).exp();
                if set.contains(&j) {
                    d -= (zj - lse_set).exp();
                }
                *gj = T::from_f64(d / batch);
            }
        }
    }
    if clamped > 0 {
        warn!("{clamped} example(s) with zero mapped probability; loss clamped");
    }
    Ok((total / batch, clamped, grad))
}

fn check_model<T: Real>(model: &HostModel<T>, program: &AdversarialProgram<T>, map: &LabelMap) -> Result<()> {
    if program.geometry().n != model.side() {
        return Err(Error::Geometry(format!(
            "program is {0}x{0}, host expects {1}x{1}",
            program.geometry().n,
            model.side()
        )));
    }
    map.validate_for(model.num_labels())
}

/// Objective value and, optionally, `dLoss/dW` for a batch of adversarial
/// images `x_adv` built from `program`.
fn objective<T: Real>(
    model: &HostModel<T>,
    program: &AdversarialProgram<T>,
    p: &Tensor<T>,
    map: &LabelMap,
    x_adv: Option<(Tensor<T>, Vec<usize>)>,
    lambda: f64,
    want_grad: bool,
) -> Result<(LossValue, Option<Tensor<T>>)> {
    let w = program.weights();
    let penalty = lambda * w.sum_squares();
    let mut value = LossValue {
        total: penalty,
        data_term: 0.0,
        penalty,
        clamped: 0,
    };
    let mut grad = want_grad.then(|| w.map(|v| T::from_f64(2.0 * lambda) * v));

    let Some((x, labels)) = x_adv.filter(|(_, l)| !l.is_empty()) else {
        return Ok((value, grad));
    };
    let (logits, trace) = forward_batch(model, &x)?;
    let (data, clamped, dlogits) = data_term(&logits, &labels, map, want_grad)?;
    value.data_term = data;
    value.clamped = clamped;
    value.total += data;

    if let (Some(grad), Some(dlogits)) = (grad.as_mut(), dlogits) {
        let (dx, _) = backward(model, &trace, &dlogits, false)?;
        let per = p.len();
        // dL/dP sums over the batch, then chains through tanh and the mask.
        let mut dp = vec![T::zero(); per];
        for example in dx.data().chunks(per) {
            for (acc, &d) in dp.iter_mut().zip(example) {
                *acc = *acc + d;
            }
        }
        for (((g, &d), &pv), &m) in grad
            .data_mut()
            .iter_mut()
            .zip(&dp)
            .zip(p.data())
            .zip(program.mask().data())
        {
            *g = *g + d * m * (T::one() - pv * pv);
        }
    }
    Ok((value, grad))
}

fn examples_to_batch<T: Real>(
    program: &AdversarialProgram<T>,
    p: &Tensor<T>,
    batch: &[AdvExample],
) -> Result<(Tensor<T>, Vec<usize>)> {
    let geometry = program.geometry();
    let mut data = Vec::with_capacity(batch.len() * p.len());
    for ex in batch {
        let x_adv = adv_image(&embed(&ex.x_small.cast::<T>(), &geometry)?, p)?;
        data.extend_from_slice(x_adv.data());
    }
    let mut shape = vec![batch.len()];
    shape.extend(geometry.shape());
    Ok((Tensor::new(shape, data)?, batch.iter().map(|e| e.y_adv).collect()))
}

/// Reprogramming loss on explicit examples. An empty batch disables the data
/// term, leaving only the weight penalty.
pub fn loss<T: Real>(
    model: &HostModel<T>,
    program: &AdversarialProgram<T>,
    map: &LabelMap,
    batch: &[AdvExample],
    lambda: f64,
) -> Result<LossValue> {
    check_model(model, program, map)?;
    let p = program.squash();
    let x = examples_to_batch(program, &p, batch)?;
    Ok(objective(model, program, &p, map, Some(x), lambda, false)?.0)
}

/// Gradient of [`loss`] with respect to `W`.
pub fn grad_w<T: Real>(
    model: &HostModel<T>,
    program: &AdversarialProgram<T>,
    map: &LabelMap,
    batch: &[AdvExample],
    lambda: f64,
) -> Result<Tensor<T>> {
    Ok(loss_and_grad(model, program, map, batch, lambda)?.1)
}

pub fn loss_and_grad<T: Real>(
    model: &HostModel<T>,
    program: &AdversarialProgram<T>,
    map: &LabelMap,
    batch: &[AdvExample],
    lambda: f64,
) -> Result<(LossValue, Tensor<T>)> {
    check_model(model, program, map)?;
    let p = program.squash();
    let x = examples_to_batch(program, &p, batch)?;
    let (value, grad) = objective(model, program, &p, map, Some(x), lambda, true)?;
    Ok((value, grad.unwrap()))
}

/// [`loss_and_grad`] over a byte-encoded batch; the training hot path.
pub fn loss_and_grad_set(
    model: &HostModel,
    program: &AdversarialProgram,
    map: &LabelMap,
    batch: &ImageSet,
    lambda: f64,
) -> Result<(LossValue, Tensor)> {
    check_model(model, program, map)?;
    let p = program.squash();
    let x = adv_batch(&p, batch, &program.geometry())?;
    let labels = (0..batch.len()).map(|i| batch.label(i)).collect();
    let (value, grad) = objective(model, program, &p, map, Some((x, labels)), lambda, true)?;
    Ok((value, grad.unwrap()))
}
