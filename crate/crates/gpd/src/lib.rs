//! Dirichlet-based Gaussian-process classification.
//!
//! The pipeline: one-hot labels are reinterpreted as Dirichlet observations
//! and moment-matched to per-class log-normal regression targets with
//! per-point noise; each class then gets an exact or sparse heteroskedastic
//! GP regression; class probabilities come from Monte-Carlo averaging of the
//! softmax over the latent posterior. Calibration metrics, reliability
//! diagrams, and two baselines (least-squares GP labels with optional Platt
//! scaling, and a Laplace-approximated GP classifier) round out the crate.
//!
//! Modules are layered bottom-up: [`math`] and [`kernels`] hold shared
//! numerics, [`transform`] the label transform, [`gp`] the regression
//! backends, [`calibrate`] the probability and metric layer, [`baselines`]
//! the comparison methods, [`data`] dataset plumbing, and [`experiment`]
//! the reproducible experiment driver used by the CLI. [`oracle`] contains
//! deliberately independent reference implementations used only by tests.

pub mod baselines;
pub mod calibrate;
pub mod data;
pub mod error;
pub mod experiment;
pub mod fixtures;
pub mod gp;
pub mod kernels;
pub mod math;
pub mod optimize;
pub mod oracle;
pub mod transform;

pub use error::{GpdError, Result};
