//! The unlearning procedures and their shared epoch budget.

mod budget;
mod config;
mod methods;

pub use budget::EpochTrace;
pub use config::{MethodId, UnlearnConfig, MAX_UNLEARN_EPOCHS};
pub use methods::{
    complement_labels, fgsm_uniform, reinit_groups, retain_finetune, run_method, uniform_target, UnlearnResult,
};
