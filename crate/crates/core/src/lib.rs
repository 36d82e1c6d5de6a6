//! Unsupervised domain adaptation of a 3D image-to-image synthesis network,
//! using a 2D spatial VAE as a learned prior over slice sequences.
//!
//! The crate is framework-free: [`tensor`] provides the differentiable
//! numeric substrate, [`phantom`] the multi-domain synthetic data, [`nets`]
//! the three architectures, [`metrics`] the losses and image-quality metrics,
//! [`pipeline`] the training/adaptation orchestration and [`report`] the
//! file outputs used by the command-line tool.

pub mod error;
pub mod rng;
pub mod phantom;
pub mod pipeline;
pub mod metrics;
pub mod nets;
pub mod tensor;
pub mod report;
pub mod cli;

pub use error::{Error, Result};
