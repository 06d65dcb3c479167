//! Desk-scale machine-unlearning laboratory.
//!
//! Frames first-order unlearning as constrained optimization (an unlearning
//! objective plus a utility constraint), builds masked update directions
//! from gradient sign agreement under a Gaussian gradient-noise model, and
//! evaluates runs with accuracy, fidelity, and membership-inference metrics
//! against an ideal retrained model — all on small synthetic classifiers.

pub mod checkpoint;
pub mod data;
pub mod config;
pub mod error;
pub mod harness;
pub mod masks;
pub mod matrix;
pub mod metrics;
pub mod nn;
pub mod optim;
pub mod params;
pub mod seeding;
pub mod stats;
pub mod svm;
pub mod unlearn;

pub use error::{Error, Result};
pub use matrix::Matrix;
pub use nn::{Activation, LabeledBatch, LossKind, ModelSpec};
pub use params::ParamVector;
