//! The three hybrid architectures and their forward / backward passes.

mod arch;
pub mod checkpoint;
mod model;

pub use arch::{ArchSpec, DatasetTag, GROUP_EXTRACTOR, GROUP_HEAD, GROUP_PROJECTION, GROUP_VQC};
pub use checkpoint::{load_checkpoint, save_checkpoint};
pub use model::{ForwardCache, HybridModel, Loss, LossGrad};
