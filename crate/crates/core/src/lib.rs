//! Next-active-object prediction from egocentric object trajectories.
//!
//! The pipeline: object tracks (annotated or associated from per-frame
//! detections) are cut into fixed-length windows of normalized boxes, each
//! window is described by its positions, scales and their differences, and a
//! random decision forest scores how likely the object is to be manipulated
//! next. The [`eval`] module frames those scores as detections and measures
//! them with precision-recall curves.

pub mod assignment;
pub mod descriptors;
pub mod error;
pub mod eval;
pub mod forest;
pub mod geometry;
pub mod kalman;
pub mod predictor;
pub mod seed;
pub mod synthgen;
pub mod tracker;
pub mod trackstore;
pub mod trajectories;

pub use error::{Error, Result};
