//! Transport and discriminator networks, their losses, and the training loops
//! for the full model and the learned baselines.

mod checkpoint;
mod losses;
mod model;
mod train;

pub use checkpoint::Checkpoint;
pub use losses::{
    disc_loss, gen_loss, gradient_penalty, loss_gan, loss_super, loss_trans, PROB_EPS,
};
pub use model::{BatchStats, BnMode, DiscriminatorNet, Linear, TransportNet, BN_EPS};
pub use train::{
    history_from_csv, history_to_csv, neutral_condition, one_hot_rows, train_baseline,
    train_method, train_super_ot, EpochRecord, Method, StepLosses, TrainConfig, TrainData,
    Trainer, HISTORY_HEADER,
};

use thiserror::Error;

use crate::math::MathError;

#[derive(Debug, Error)]
pub enum NetError {
    #[error(transparent)]
    Math(#[from] MathError),
    #[error("contract violation: {0}")]
    Contract(String),
    #[error("invalid training configuration: {0}")]
    Config(String),
    #[error("training diverged at epoch {epoch}: {detail}")]
    Diverged { epoch: usize, detail: String, last_good: Box<Trainer> },
    #[error("malformed file: {0}")]
    Format(String),
    #[error("io error: {0}")]
    Io(String),
}
