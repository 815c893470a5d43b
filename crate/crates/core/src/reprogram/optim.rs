use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::{Real, Tensor};

pub const ADAM_BETA1: f64 = 0.9;
pub const ADAM_BETA2: f64 = 0.999;
pub const ADAM_EPS: f64 = 1e-8;

/// Adam moment estimates for one parameter tensor. Moments are kept in
/// 64-bit regardless of the parameter precision.
#[derive(Clone, Debug, PartialEq)]
pub struct AdamState {
    m: Vec<f64>,
    v: Vec<f64>,
    step: u64,
}

impl AdamState {
    pub fn new(len: usize) -> Self {
        AdamState {
            m: vec![0.0; len],
            v: vec![0.0; len],
            step: 0,
        }
    }

    pub fn step(&self) -> u64 {
        self.step
    }

    pub fn first_moment(&self) -> &[f64] {
        &self.m
    }

    pub fn second_moment(&self) -> &[f64] {
        &self.v
    }

    /// One bias-corrected Adam step on `w` with gradient `grad`.
    pub fn update<T: Real>(&mut self, w: &mut Tensor<T>, grad: &Tensor<T>, lr: f64) -> Result<()> {
        if w.shape() != grad.shape() || w.len() != self.m.len() {
            return Err(Error::Shape {
                expected: w.shape().to_vec(),
                got: grad.shape().to_vec(),
            });
        }
        self.step += 1;
        let t = self.step as i32;
        let c1 = 1.0 - ADAM_BETA1.powi(t);
        let c2 = 1.0 - ADAM_BETA2.powi(t);
        for (((w, g), m), v) in w
            .data_mut()
            .iter_mut()
            .zip(grad.data())
            .zip(&mut self.m)
            .zip(&mut self.v)
        {
            let g = g.as_f64();
            *m = ADAM_BETA1 * *m + (1.0 - ADAM_BETA1) * g;
            *v = ADAM_BETA2 * *v + (1.0 - ADAM_BETA2) * g * g;
            let m_hat = *m / c1;
            let v_hat = *v / c2;
            *w = T::from_f64(w.as_f64() - lr * m_hat / (v_hat.sqrt() + ADAM_EPS));
        }
        Ok(())
    }
}

/// Exponentially decaying learning rate: `lr0 * decay^(step / steps_per_decay)`
/// with a continuous exponent.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LrSchedule {
    pub lr0: f64,
    pub decay: f64,
    pub steps_per_decay: usize,
}

impl LrSchedule {
    pub fn at(&self, step: usize) -> f64 {
        self.lr0 * self.decay.powf(step as f64 / self.steps_per_decay as f64)
    }
}
