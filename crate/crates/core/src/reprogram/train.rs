use std::io::Write;

use log::{debug, info};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::labels::LabelMap;
use super::objective::loss_and_grad_set;
use super::optim::{AdamState, LrSchedule};
use super::program::{adv_batch, AdversarialProgram, Geometry};
use crate::data::{ImageSet, TaskSource};
use crate::error::{Error, Result};
use crate::host::EVAL_BATCH;
use crate::nn::{forward_batch, HostModel};
use crate::tensor::argmax;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TaskKind {
    Counting,
    Mnist,
    Cifar10,
}

impl TaskKind {
    pub fn as_str(self) -> &'static str {
        match self {
            TaskKind::Counting => "counting",
            TaskKind::Mnist => "mnist",
            TaskKind::Cifar10 => "cifar10",
        }
    }
}

impl std::str::FromStr for TaskKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "counting" => Ok(TaskKind::Counting),
            "mnist" => Ok(TaskKind::Mnist),
            "cifar10" | "cifar-10" => Ok(TaskKind::Cifar10),
            other => Err(Error::Config(format!("unknown task `{other}`"))),
        }
    }
}

impl std::fmt::Display for TaskKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Optimization hyperparameters for one program.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ReprogramConfig {
    /// Weight-norm coefficient.
    pub lambda: f64,
    pub lr0: f64,
    pub decay: f64,
    pub steps_per_decay: usize,
    pub batch_size: usize,
    pub total_steps: usize,
    pub seed: u64,
    /// Accuracy is measured every this many steps (and after the last one).
    pub eval_every: usize,
    /// Size of the fixed training sample used for periodic train accuracy.
    pub train_eval_samples: usize,
    /// Cap on validation examples used for periodic validation accuracy.
    pub val_eval_samples: usize,
}

impl Default for ReprogramConfig {
    /// MNIST settings.
    fn default() -> Self {
        Self::mnist()
    }
}

impl ReprogramConfig {
    /// `epochs_per_decay * ceil(epoch_len / batch)` steps per decay period.
    pub fn steps_per_decay_for(epochs_per_decay: usize, epoch_len: usize, batch_size: usize) -> usize {
        (epochs_per_decay * epoch_len.div_ceil(batch_size)).max(1)
    }

    pub fn mnist() -> Self {
        ReprogramConfig {
            lambda: 0.05,
            lr0: 0.05,
            decay: 0.96,
            steps_per_decay: Self::steps_per_decay_for(2, 60_000, 50),
            batch_size: 50,
            total_steps: 10_000,
            seed: 0,
            eval_every: 500,
            train_eval_samples: 1_000,
            val_eval_samples: 1_000,
        }
    }

    pub fn counting() -> Self {
        ReprogramConfig {
            lambda: 0.01,
            steps_per_decay: Self::steps_per_decay_for(2, 10_000, 50),
            total_steps: 5_000,
            ..Self::mnist()
        }
    }

    pub fn cifar10() -> Self {
        ReprogramConfig {
            lambda: 0.01,
            decay: 0.99,
            steps_per_decay: Self::steps_per_decay_for(4, 50_000, 50),
            total_steps: 30_000,
            ..Self::mnist()
        }
    }

    pub fn for_task(task: TaskKind) -> Self {
        match task {
            TaskKind::Counting => Self::counting(),
            TaskKind::Mnist => Self::mnist(),
            TaskKind::Cifar10 => Self::cifar10(),
        }
    }

    pub fn schedule(&self) -> LrSchedule {
        LrSchedule {
            lr0: self.lr0,
            decay: self.decay,
            steps_per_decay: self.steps_per_decay,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let ok = self.lambda >= 0.0
            && self.lr0 > 0.0
            && self.decay > 0.0
            && self.decay <= 1.0
            && self.steps_per_decay > 0
            && self.batch_size > 0
            && self.eval_every > 0;
        if ok {
            Ok(())
        } else {
            Err(Error::Config(format!("invalid reprogramming config {self:?}")))
        }
    }
}

/// Learning rate at `step` (0-based).
pub fn lr_at(step: usize, cfg: &ReprogramConfig) -> f64 {
    cfg.schedule().at(step)
}

/// One line of the metrics stream.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricRecord {
    pub step: usize,
    pub lr: f64,
    pub loss: f64,
    /// Loss without the weight penalty.
    pub data_loss: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub train_acc: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub val_acc: Option<f64>,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct TrainMetrics {
    pub records: Vec<MetricRecord>,
    pub clamp_events: usize,
}

impl TrainMetrics {
    pub fn write_jsonl(&self, mut out: impl Write) -> std::io::Result<()> {
        for r in &self.records {
            serde_json::to_writer(&mut out, r)?;
            out.write_all(b"\n")?;
        }
        Ok(())
    }

    pub fn to_jsonl(&self) -> Vec<u8> {
        let mut buf = Vec::new();
        self.write_jsonl(&mut buf).expect("writing to a Vec cannot fail");
        buf
    }

    pub fn last_train_acc(&self) -> Option<f64> {
        self.records.iter().rev().find_map(|r| r.train_acc)
    }

    pub fn last_val_acc(&self) -> Option<f64> {
        self.records.iter().rev().find_map(|r| r.val_acc)
    }
}

/// Adversarial labels predicted for a batch: argmax over mapped
/// probabilities, ties to the lowest label.
pub fn predict(
    model: &HostModel,
    program: &AdversarialProgram,
    map: &LabelMap,
    p: &crate::Tensor,
    set: &ImageSet,
) -> Result<Vec<usize>> {
    let x = adv_batch(p, set, &program.geometry())?;
    let (logits, _) = forward_batch(model, &x)?;
    let classes = model.num_labels();
    logits
        .data()
        .chunks(classes)
        .map(|row| {
            let max = row.iter().copied().fold(f32::NEG_INFINITY, f32::max) as f64;
            let mass = (0..map.num_classes())
                .map(|y| {
                    Ok(map
                        .host_labels(y)?
                        .iter()
                        .map(|&h| (row[h] as f64 - max).exp())
                        .sum::<f64>())
                })
                .collect::<Result<Vec<f64>>>()?;
            Ok(argmax(&mass))
        })
        .collect()
}

/// Fraction of `dataset` classified correctly through the program and map.
pub fn evaluate_program(
    model: &HostModel,
    program: &AdversarialProgram,
    map: &LabelMap,
    dataset: &ImageSet,
) -> Result<f64> {
    if dataset.is_empty() {
        return Err(Error::EmptyDataset);
    }
    map.validate_for(model.num_labels())?;
    let p = program.squash();
    let mut correct = 0;
    let indices: Vec<usize> = (0..dataset.len()).collect();
    for chunk in indices.chunks(EVAL_BATCH) {
        let batch = dataset.subset(chunk);
        let predicted = predict(model, program, map, &p, &batch)?;
        correct += predicted
            .iter()
            .enumerate()
            .filter(|&(i, &y)| y == batch.label(i))
            .count();
    }
    Ok(correct as f64 / dataset.len() as f64)
}

/// Optimizes `W` (initialized to zero) with Adam for `cfg.total_steps`
/// steps, one synchronous update per batch; the host is never modified.
pub fn train_program(
    model: &HostModel,
    task: &dyn TaskSource,
    validation: Option<&ImageSet>,
    map: &LabelMap,
    cfg: &ReprogramConfig,
) -> Result<(AdversarialProgram, TrainMetrics)> {
    let geometry = Geometry::centered(model.side(), task.side())?;
    train_program_with_geometry(model, task, validation, map, cfg, geometry)
}

pub fn train_program_with_geometry(
    model: &HostModel,
    task: &dyn TaskSource,
    validation: Option<&ImageSet>,
    map: &LabelMap,
    cfg: &ReprogramConfig,
    geometry: Geometry,
) -> Result<(AdversarialProgram, TrainMetrics)> {
    cfg.validate()?;
    map.validate_for(model.num_labels())?;
    if task.num_classes() > map.num_classes() {
        return Err(Error::LabelMap(format!(
            "task has {} classes, label map covers {}",
            task.num_classes(),
            map.num_classes()
        )));
    }
    if geometry.n != model.side() || geometry.k != task.side() {
        return Err(Error::Geometry(format!(
            "geometry {geometry:?} does not fit host side {} and task side {}",
            model.side(),
            task.side()
        )));
    }

    let mut program = AdversarialProgram::new(geometry);
    let mut adam = AdamState::new(program.weights().len());
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut eval_rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ 0xe7a1_5a3b_1e5e_ed00);
    let train_probe = (cfg.train_eval_samples > 0).then(|| task.sample(&mut eval_rng, cfg.train_eval_samples));
    let val_probe = validation.map(|v| v.head(cfg.val_eval_samples));
    let mut metrics = TrainMetrics::default();
    let mut last_finite = None;

    for step in 0..cfg.total_steps {
        let batch = task.sample(&mut rng, cfg.batch_size);
        let (value, grad) = loss_and_grad_set(model, &program, map, &batch, cfg.lambda)?;
        if !value.total.is_finite() || !grad.is_finite() {
            return Err(Error::Diverged { step, last_finite });
        }
        last_finite = Some(value.total);
        metrics.clamp_events += value.clamped;
        let lr = lr_at(step, cfg);
        adam.update(program.weights_mut(), &grad, lr)?;

        let mut record = MetricRecord {
            step: step + 1,
            lr,
            loss: value.total,
            data_loss: value.data_term,
            train_acc: None,
            val_acc: None,
        };
        if (step + 1) % cfg.eval_every == 0 || step + 1 == cfg.total_steps {
            if let Some(probe) = &train_probe {
                record.train_acc = Some(evaluate_program(model, &program, map, probe)?);
            }
            if let Some(probe) = &val_probe {
                record.val_acc = Some(evaluate_program(model, &program, map, probe)?);
            }
            info!(
                "step {}: loss {:.4} (data {:.4}) lr {:.5} train_acc {:?} val_acc {:?}",
                step + 1,
                value.total,
                value.data_term,
                lr,
                record.train_acc,
                record.val_acc
            );
        } else if (step + 1) % 50 == 0 {
            debug!("step {}: loss {:.4}", step + 1, value.total);
        }
        metrics.records.push(record);
    }
    Ok((program, metrics))
}
