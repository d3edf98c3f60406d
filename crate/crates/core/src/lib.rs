//! Pre-impact fall detection on wearable IMU windows with a distilled CNN.
//!
//! A ViT-tiny teacher and a lightweight CNN student are trained on
//! 50-frame, 9-axis IMU windows; the student learns from ground truth
//! through focal loss and from the teacher through a scheduled KL term.
//! Evaluation follows the instance-level TP/FN and window-level TN/FP
//! semantics, reports lead time, and estimates MCU inference latency from
//! an analytic FLOP count.
//!
//! Modules:
//!
//! - [`tensor`]: dense tensors with tape-based reverse-mode autodiff.
//! - [`models`]: the teacher and student, parameter and FLOP accounting.
//! - [`data`]: sensor-file ingestion, windowing, augmentation, LOGO splits.
//! - [`train`]: focal/KL/KD losses, AdamW, schedules, training loops.
//! - [`eval`]: confusion semantics, metrics, lead time, cross-validation.
//! - [`cli`]: run configuration, weight files, and the `pfkd` commands.

// `!(x > 0.0)` is deliberate in validators: it also rejects NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod cli;
pub mod data;
pub mod error;
pub mod eval;
pub mod models;
pub mod rng;
pub mod tensor;
pub mod train;

pub use error::{Error, Result};
