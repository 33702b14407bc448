//! Pseudo-label generation: lifting, refinement, dynamic filtering, temporal
//! aggregation, occupancy accumulation and voxelization.

mod aggregate;
mod dbscan;
mod dynamic;
mod grid;
mod ground;
mod lift;
mod pipeline;
mod voxelize;

pub use aggregate::{accumulate_occupancy, aggregate_window, to_reference, FrameLabels, LabeledPoints, WindowConfig};
pub use dbscan::{dbscan, dbscan_refine, RefineParams, DEFAULT_EPS};
pub use dynamic::{filter_dynamic, TrackBox, DYNAMIC_IOU};
pub use grid::SparseVoxelGrid;
pub use ground::{fit_ground_plane, fit_plane_lsq, GroundParams, GroundPlane};
pub use lift::lift_mask;
pub use pipeline::{process_frame, FrameSource, PipelineStats, ProcessedFrame, PseudoLabeler, PseudoLabels};
pub use voxelize::{fuse, voxelize_majority};
