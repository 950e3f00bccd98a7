//! Adam optimisation with early stopping on test accuracy, and the retrain oracle.

mod adam;
mod fit;

pub use adam::{adam_step, OptimizerState};
pub use fit::{
    fit, retrain_oracle, train_base, EarlyStop, Objective, TrainConfig, TrainReport,
};
pub use crate::hybrid::{load_checkpoint, save_checkpoint};
