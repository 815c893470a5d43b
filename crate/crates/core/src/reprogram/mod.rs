//! Adversarial programs, the reprogramming objective, and the optimizer.

mod labels;
mod objective;
mod optim;
mod program;
mod train;

pub use labels::{mapped_probability, LabelMap};
pub use objective::{grad_w, loss, loss_and_grad, loss_and_grad_set, LossValue, LOG_GUARD};
pub use optim::{AdamState, LrSchedule, ADAM_BETA1, ADAM_BETA2, ADAM_EPS};
pub use program::{
    adv_batch, adv_image, bounded_tanh, decode_program, embed, encode_program, load_program, save_program,
    squash_program, AdversarialProgram, Geometry, PROGRAM_MAGIC, PROGRAM_VERSION,
};
pub use train::{
    evaluate_program, lr_at, predict, train_program, train_program_with_geometry, MetricRecord, ReprogramConfig,
    TaskKind, TrainMetrics,
};
