//! File formats: Velodyne scans, poses, calibration, masklet rasters, feature files,
//! ground-truth grids, pseudo-label files and soft predictions.

mod bytes;
pub mod calp;
pub mod calq;
pub mod gt;
pub mod kitti;
pub mod masklet;
pub mod sequence;
pub mod vocab;

pub use calp::{decode_pseudo_labels, encode_pseudo_labels, read_pseudo_labels, write_pseudo_labels};
pub use calq::{read_soft_prediction, write_soft_prediction};
pub use gt::{read_gt_grid, write_gt_grid, GroundTruthGrid};
pub use kitti::{read_poses, read_scan, write_poses, write_scan, Calibration};
pub use masklet::{
    normalized, read_features, read_fvec, read_raster, write_features, write_fvec, write_raster,
    MaskletFrame,
};
pub use sequence::{load_sequence, read_tracks, write_tracks, Frame, Sequence, SequenceManifest};
pub use vocab::{read_vocabulary, write_vocabulary};
