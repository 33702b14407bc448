//! Pseudo-labeling and evaluation toolkit for zero-shot Lidar panoptic scene
//! completion.
//!
//! The pipeline lifts per-frame 2D instance masks onto Lidar scans, refines and
//! aggregates them over a temporal window, voxelizes them on a fixed grid,
//! densifies labels with a mean-field CRF over 360° occupancy, and attaches an
//! averaged semantic feature to every instance. Evaluation covers panoptic
//! quality, SSC scores, label coverage, zero-shot classification and box
//! fitting.

pub mod bbox;
pub mod cli;
pub mod config;
pub mod crf;
pub mod error;
pub mod geom;
pub mod io;
pub mod label;
pub mod metrics;
pub mod post;
pub mod semantics;
pub mod synthetic;
pub mod train;

pub use error::{Error, Result};
