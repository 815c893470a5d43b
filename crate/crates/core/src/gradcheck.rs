//! Central finite-difference checks of the analytic gradients on small
//! seeded networks, evaluated in 64-bit.
//!
//! Coordinates whose `±h` perturbation changes any relu on/off state or
//! maxpool choice straddle a kink of the piecewise-linear network, where a
//! central difference does not estimate the derivative; they are skipped and
//! replaced by other coordinates.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data::AdvExample;
use crate::error::{Error, Result};
use crate::host::{init_random, TINY_CONV};
use crate::nn::{backward, backward_to_input, forward, forward_batch, HostModel};
use crate::reprogram::{adv_image, embed, grad_w, loss, AdversarialProgram, Geometry, LabelMap};
use crate::tensor::Tensor;

/// Finite-difference step.
pub const FD_STEP: f64 = 1e-3;
/// Largest accepted relative error.
pub const FD_TOLERANCE: f64 = 1e-4;
/// Relative errors are taken against `max(|analytic|, |numeric|, FD_FLOOR)`.
pub const FD_FLOOR: f64 = 1e-6;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GradcheckConfig {
    pub model_seeds: Vec<u64>,
    /// Coordinates compared per check and model.
    pub coordinates: usize,
    pub step: f64,
    pub tolerance: f64,
    /// Task-image side inside the tiny host's canvas for the program check.
    pub task_side: usize,
    pub batch: usize,
    pub lambda: f64,
}

impl Default for GradcheckConfig {
    fn default() -> Self {
        GradcheckConfig {
            model_seeds: vec![11, 22, 33],
            coordinates: 100,
            step: FD_STEP,
            tolerance: FD_TOLERANCE,
            task_side: 4,
            batch: 3,
            lambda: 0.05,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CheckResult {
    pub name: String,
    pub model_seed: u64,
    pub coordinates: usize,
    pub skipped_kinks: usize,
    pub max_rel_error: f64,
    pub passed: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GradcheckReport {
    pub checks: Vec<CheckResult>,
}

impl GradcheckReport {
    pub fn passed(&self) -> bool {
        !self.checks.is_empty() && self.checks.iter().all(|c| c.passed)
    }

    pub fn total_coordinates(&self) -> usize {
        self.checks.iter().map(|c| c.coordinates).sum()
    }

    pub fn max_rel_error(&self) -> f64 {
        self.checks.iter().map(|c| c.max_rel_error).fold(0.0, f64::max)
    }
}

pub fn rel_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(FD_FLOOR)
}

/// Walks `candidates` in order, comparing `analytic[c]` with a central
/// difference of `f` until `wanted` coordinates were compared. `f` returns
/// the function value and the activation pattern at the perturbed point.
fn compare<F>(
    name: &str,
    seed: u64,
    cfg: &GradcheckConfig,
    candidates: &[usize],
    analytic: &[f64],
    base_pattern: &[u64],
    mut f: F,
) -> Result<CheckResult>
where
    F: FnMut(usize, f64) -> Result<(f64, Vec<u64>)>,
{
    let mut compared = 0;
    let mut skipped = 0;
    let mut worst: f64 = 0.0;
    for &c in candidates {
        if compared == cfg.coordinates {
            break;
        }
        let (plus, p_plus) = f(c, cfg.step)?;
        let (minus, p_minus) = f(c, -cfg.step)?;
        if p_plus != base_pattern || p_minus != base_pattern {
            skipped += 1;
            continue;
        }
        let numeric = (plus - minus) / (2.0 * cfg.step);
        worst = worst.max(rel_error(analytic[c], numeric));
        compared += 1;
    }
    Ok(CheckResult {
        name: name.to_string(),
        model_seed: seed,
        coordinates: compared,
        skipped_kinks: skipped,
        max_rel_error: worst,
        passed: compared == cfg.coordinates && worst <= cfg.tolerance,
    })
}

fn shuffled(len: usize, rng: &mut ChaCha8Rng) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..len).collect();
    idx.shuffle(rng);
    idx
}

fn random_tensor(shape: Vec<usize>, rng: &mut ChaCha8Rng) -> Tensor<f64> {
    Tensor::from_fn(shape, |_| rng.random_range(-1.0..1.0))
}

/// Input gradient of `sum(logits * g)` for a random direction `g`.
pub fn check_input_gradient(model: &HostModel<f64>, seed: u64, cfg: &GradcheckConfig) -> Result<CheckResult> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x1);
    let x = random_tensor(model.input_shape().to_vec(), &mut rng);
    let g = random_tensor(vec![model.num_labels()], &mut rng);
    let (_, trace) = forward(model, &x)?;
    let analytic = backward_to_input(model, &trace, &g)?;
    let base = trace.activation_pattern(model);
    let candidates = shuffled(x.len(), &mut rng);
    compare("input", seed, cfg, &candidates, analytic.data(), &base, |c, h| {
        let mut xp = x.clone();
        xp.data_mut()[c] += h;
        let (logits, trace) = forward(model, &xp)?;
        let value = logits.data().iter().zip(g.data()).map(|(a, b)| a * b).sum();
        Ok((value, trace.activation_pattern(model)))
    })
}

/// Gradient of the reprogramming loss with respect to the program weights.
pub fn check_program_gradient(model: &HostModel<f64>, seed: u64, cfg: &GradcheckConfig) -> Result<CheckResult> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x2);
    let geometry = Geometry::centered(model.side(), cfg.task_side)?;
    let map = LabelMap::identity(10);
    let batch: Vec<AdvExample> = (0..cfg.batch)
        .map(|_| AdvExample {
            x_small: Tensor::from_fn(vec![cfg.task_side, cfg.task_side, 3], |_| rng.random_range(-1.0..1.0)),
            y_adv: rng.random_range(0..10),
        })
        .collect();
    // W stays zero on the data region, as it does during training.
    let mask_values = geometry.mask::<f64>();
    let w = Tensor::from_fn(geometry.shape(), |i| {
        rng.random_range(-1.5..1.5) * mask_values.data()[i]
    });
    let program = AdversarialProgram::from_weights(geometry, w)?;
    let analytic = grad_w(model, &program, &map, &batch, cfg.lambda)?;

    let mask = program.mask().clone();
    if analytic
        .data()
        .iter()
        .zip(mask.data())
        .any(|(&g, &m)| m == 0.0 && g != 0.0)
    {
        return Err(Error::Config("program gradient nonzero on the data region".into()));
    }
    let pattern_of = |program: &AdversarialProgram<f64>| -> Result<Vec<u64>> {
        let p = program.squash();
        let mut data = Vec::new();
        for ex in &batch {
            let x = adv_image(&embed(&ex.x_small.cast(), &geometry)?, &p)?;
            data.extend_from_slice(x.data());
        }
        let mut shape = vec![batch.len()];
        shape.extend(geometry.shape());
        let (_, trace) = forward_batch(model, &Tensor::new(shape, data)?)?;
        Ok(trace.activation_pattern(model))
    };
    let base = pattern_of(&program)?;
    let candidates: Vec<usize> = shuffled(mask.len(), &mut rng)
        .into_iter()
        .filter(|&c| mask.data()[c] == 1.0)
        .collect();
    compare("program", seed, cfg, &candidates, analytic.data(), &base, |c, h| {
        let mut perturbed = program.clone();
        perturbed.weights_mut().data_mut()[c] += h;
        let value = loss(model, &perturbed, &map, &batch, cfg.lambda)?.total;
        Ok((value, pattern_of(&perturbed)?))
    })
}

/// Weight and bias gradients used by host training, for `sum(logits * g)`
/// over a small batch.
pub fn check_weight_gradient(model: &HostModel<f64>, seed: u64, cfg: &GradcheckConfig) -> Result<CheckResult> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x3);
    let mut shape = vec![cfg.batch];
    shape.extend(model.input_shape());
    let x = random_tensor(shape, &mut rng);
    let g = random_tensor(vec![cfg.batch, model.num_labels()], &mut rng);
    let (_, trace) = forward_batch(model, &x)?;
    let (_, grads) = backward(model, &trace, &g, true)?;
    let analytic: Vec<f64> = grads
        .unwrap()
        .into_iter()
        .flatten()
        .flat_map(|(w, b)| w.into_data().into_iter().chain(b.into_data()))
        .collect();
    let base = trace.activation_pattern(model);
    let candidates = shuffled(analytic.len(), &mut rng);
    compare("weights", seed, cfg, &candidates, &analytic, &base, |c, h| {
        let mut perturbed = model.clone();
        let mut offset = c;
        for param in perturbed.parameters_mut() {
            if offset < param.len() {
                param.data_mut()[offset] += h;
                break;
            }
            offset -= param.len();
        }
        let (logits, trace) = forward_batch(&perturbed, &x)?;
        let value = logits.data().iter().zip(g.data()).map(|(a, b)| a * b).sum();
        Ok((value, trace.activation_pattern(&perturbed)))
    })
}

/// Runs all checks on one tiny model per seed.
pub fn run_gradcheck(cfg: &GradcheckConfig) -> Result<GradcheckReport> {
    let mut checks = Vec::new();
    for &seed in &cfg.model_seeds {
        let model: HostModel<f64> = init_random(TINY_CONV, seed)?.cast();
        checks.push(check_input_gradient(&model, seed, cfg)?);
        checks.push(check_program_gradient(&model, seed, cfg)?);
        checks.push(check_weight_gradient(&model, seed, cfg)?);
    }
    Ok(GradcheckReport { checks })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_suite_passes() {
        let report = run_gradcheck(&GradcheckConfig::default()).unwrap();
        for c in &report.checks {
            assert!(c.passed, "{c:?}");
        }
        assert!(report.total_coordinates() >= 900);
    }
}
