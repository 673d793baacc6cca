//! Latent-space virtual outlier synthesis (LS-VOS) on detection features.
//!
//! The crate is organised bottom-up:
//!
//! - [`numerics`]: dense MLP stacks with hand-written backprop, Adam, seeded RNG,
//!   Gaussian fitting and the checkpoint format.
//! - [`features`]: feature records, the per-class FIFO queue and the feature file formats.
//! - [`geometry`]: oriented 3D box IoU and IoU-based ID/FP labeling.
//! - [`models`]: auto-encoder, uncertainty head, surrogate classifier and their losses.
//! - [`synthesis`]: virtual outlier generators (LS-VOS and the baselines).
//! - [`scoring`]: outlier scores, Mahalanobis baseline and threshold calibration.
//! - [`metrics`]: AUROC, AUPR, FPR at a fixed TPR, and ECE.
//! - [`synthgen`]: synthetic feature datasets and box scenes.
//! - [`pipeline`]: two-phase training, evaluation, ablation sweeps and run artifacts.

pub mod error;
pub mod features;
pub mod geometry;
pub mod metrics;
pub mod models;
pub mod numerics;
pub mod pipeline;
pub mod scoring;
pub mod synthesis;
pub mod synthgen;

pub use error::{Error, Result};
