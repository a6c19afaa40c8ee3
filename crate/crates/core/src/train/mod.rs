//! Adam with dual gradient clipping and learning-rate annealing,
//! length-bucketed batches, and resumable training runs.

mod data;
mod optim;
mod trainer;

pub use data::{Dataset, Example};
pub use optim::{anneal_lr, clip_gradients, OptimizerState, ADAM_EPS, BETA1, BETA2};
pub use trainer::{train_step, MetricsLog, StepReport, Trainer, METRICS_HEADER};
