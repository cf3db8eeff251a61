//! Anomaly localization by adapting pre-extracted CNN patch features
//! against a compressed memory bank of normal patches.
//!
//! Stages: [`patch`] assembles multi-scale features into a patch grid,
//! [`bank`] models normal patches, [`train`] adapts the [`descriptor`] with
//! the hypersphere losses in [`loss`], [`scoring`] turns test samples into
//! anomaly maps and [`eval`] reports AUROC and F1 figures.

pub mod bank;
pub mod container;
pub mod descriptor;
pub mod error;
pub mod eval;
pub mod features;
pub mod imageops;
pub mod loss;
pub mod manifest;
pub mod optim;
pub mod patch;
pub mod pgm;
pub mod pipeline;
pub mod scalar;
pub mod scoring;
pub mod synthetic;
pub mod train;

pub use error::{CfaError, Result};
