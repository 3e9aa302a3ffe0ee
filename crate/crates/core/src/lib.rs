//! Nerve localization and segmentation for ultrasound frame sequences.
//!
//! The pipeline has two phases. Localization slides a 64×64 window over each
//! frame, classifies every patch with a small convolutional network, keeps
//! only high-confidence hits, clusters spatially overlapping hits within a
//! frame and accumulates cluster sizes per position across frames; the
//! position with the highest accumulated score is the nerve. Segmentation
//! seeds an active contour from the localization box and evolves it under a
//! gradient-vector-flow field to delineate the boundary.
//!
//! Supporting modules provide a synthetic speckle phantom generator with
//! exact ground truth, localization/segmentation metrics, PGM image I/O and
//! a key=value run configuration.

pub mod config;
pub mod consistency;
pub mod contour;
pub mod detector;
pub mod error;
pub mod eval;
pub mod mask;
pub mod nn;
pub mod pgm;
pub mod phantom;
pub mod seeds;
pub mod tensor;

pub use error::{Error, Result};
