//! In-batch softmax cosine loss, its analytic gradients, Adagrad and the
//! training loop.

mod checkpoint;
mod gradcheck;
mod loss;
mod optim;
mod trainer;

pub use checkpoint::Checkpoint;
pub use gradcheck::{compare_gradients, grad_check, random_problem, GradCheckConfig, GradCheckReport};
pub use loss::{
    batch_gradients, batch_loss, batch_loss_and_gradients, batch_loss_bruteforce, Batch, Gradients, LossReport,
    TowerGradients, MAX_ORACLE_BATCH,
};
pub use optim::{Adagrad, DEFAULT_EPSILON};
pub use trainer::{train, TrainConfig, TrainOutcome, Trainer, DEFAULT_BATCH_SIZE};

use crate::model::ImageRef;
use crate::textproc::TokenId;

/// One (query, image, weight) training example after tokenization.
#[derive(Clone, Debug, PartialEq)]
pub struct Example {
    pub tokens: Vec<TokenId>,
    pub image: ImageRef,
    pub weight: f64,
}
