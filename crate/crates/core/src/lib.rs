//! Machine unlearning for hybrid quantum-classical classifiers.
//!
//! The crate trains small variational-quantum-circuit classifiers, removes
//! a forget set with one of eleven unlearning procedures and scores the
//! result against a model retrained without that data.
//!
//! Layers, bottom-up:
//!
//! - [`diffcore`]: reverse-mode differentiation for the classical layers;
//! - [`qsim`]: statevector simulation with adjoint and parameter-shift gradients;
//! - [`hybrid`]: the Iris, MNIST and Fashion-MNIST architectures;
//! - [`data`]: IDX / CSV ingestion, subsampling and forget splits;
//! - [`train`]: Adam, early stopping, checkpoints and the retrain oracle;
//! - [`unlearn`]: the unlearning methods;
//! - [`metrics`]: utility, forgetting and similarity-to-oracle scores;
//! - [`runner`]: configuration, experiment orchestration and reports.

pub mod data;
pub mod diffcore;
pub mod error;
pub mod hybrid;
pub mod metrics;
pub mod qsim;
pub mod rng;
pub mod runner;
pub mod train;
pub mod unlearn;

pub use error::{Error, Result};

/// The guide under `book/`, compiled so its examples stay correct.
#[cfg(doctest)]
mod book {
    #[doc = include_str!("../../../book/src/introduction.md")]
    mod introduction {}
    #[doc = include_str!("../../../book/src/circuits.md")]
    mod circuits {}
    #[doc = include_str!("../../../book/src/models.md")]
    mod models {}
    #[doc = include_str!("../../../book/src/data.md")]
    mod data {}
    #[doc = include_str!("../../../book/src/training.md")]
    mod training {}
    #[doc = include_str!("../../../book/src/unlearning.md")]
    mod unlearning {}
    #[doc = include_str!("../../../book/src/metrics.md")]
    mod metrics {}
    #[doc = include_str!("../../../book/src/experiments.md")]
    mod experiments {}
    #[doc = include_str!("../../../book/src/reproducibility.md")]
    mod reproducibility {}
}
