use std::collections::{BTreeSet, HashSet};

use nalgebra::Vector3;
use serde::{Deserialize, Serialize};

use crate::geom::{RigidTransform, VoxelGridSpec, VoxelIndex};

/// Temporal windows around a reference frame.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct WindowConfig {
    /// Mask frames after the reference, counted in strides.
    pub t_fw: usize,
    /// Mask frames before the reference, counted in strides.
    pub t_bw: usize,
    pub stride: usize,
    /// Occupancy frames after the reference.
    pub occ_fw: usize,
    /// Occupancy frames before the reference.
    pub occ_bw: usize,
    pub occ_stride: usize,
}

impl WindowConfig {
    /// Mask-aggregation frames `t − t_bw·w ..= t + t_fw·w` stepped by `w`, clipped to `0..len`.
    pub fn mask_frames(&self, t: usize, len: usize) -> Vec<usize> {
        Self::window(t, len, self.t_bw * self.stride, self.t_fw * self.stride, self.stride)
    }

    /// Occupancy-accumulation frames `t − occ_bw ..= t + occ_fw`, clipped to `0..len`.
    pub fn occupancy_frames(&self, t: usize, len: usize) -> Vec<usize> {
        Self::window(t, len, self.occ_bw, self.occ_fw, self.occ_stride)
    }

    fn window(t: usize, len: usize, back: usize, fwd: usize, step: usize) -> Vec<usize> {
        let step = step.max(1);
        let lo = t as i64 - back as i64;
        let hi = t as i64 + fwd as i64;
        (lo..=hi)
            .step_by(step)
            .filter(|&f| f >= 0 && (f as usize) < len)
            .map(|f| f as usize)
            .collect()
    }
}

/// Points in the reference frame with their instance IDs (0 = unlabeled).
#[derive(Debug, Clone, Default, PartialEq)]
pub struct LabeledPoints {
    pub points: Vec<Vector3<f64>>,
    pub instance_id: Vec<u32>,
    pub source_frame: Vec<u32>,
}

impl LabeledPoints {
    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn push(&mut self, p: Vector3<f64>, id: u32, frame: u32) {
        self.points.push(p);
        self.instance_id.push(id);
        self.source_frame.push(frame);
    }
}

/// One frame's refined labels in its own sensor coordinates.
#[derive(Debug, Clone, PartialEq)]
pub struct FrameLabels {
    pub frame: usize,
    /// World-from-sensor.
    pub pose: RigidTransform,
    pub points: Vec<Vector3<f64>>,
    pub ids: Vec<u32>,
}

/// Maps sensor points of a frame into the shifted reference frame.
pub fn to_reference(
    pose: &RigidTransform,
    reference: &RigidTransform,
    shift: [f64; 3],
) -> impl Fn(&Vector3<f64>) -> Vector3<f64> {
    let t = reference.inverse().compose(pose);
    let s = Vector3::from(shift);
    move |p| t.apply(p) + s
}

/// Concatenates frames in the reference frame, dropping points of discarded IDs.
///
/// Output order is frame order, then point order.
pub fn aggregate_window(
    frames: &[FrameLabels],
    reference: &RigidTransform,
    shift: [f64; 3],
    discarded: &BTreeSet<u32>,
) -> LabeledPoints {
    let mut order: Vec<&FrameLabels> = frames.iter().collect();
    order.sort_by_key(|f| f.frame);
    let mut out = LabeledPoints::default();
    for f in order {
        let map = to_reference(&f.pose, reference, shift);
        for (p, &id) in f.points.iter().zip(&f.ids) {
            if id != 0 && discarded.contains(&id) {
                continue;
            }
            out.push(map(p), id, f.frame as u32);
        }
    }
    out
}

/// Cells hit by any point of any frame after mapping into the reference frame.
pub fn accumulate_occupancy<'a>(
    scans: impl IntoIterator<Item = (&'a [Vector3<f64>], &'a RigidTransform)>,
    reference: &RigidTransform,
    shift: [f64; 3],
    spec: &VoxelGridSpec,
) -> BTreeSet<VoxelIndex> {
    let mut cells: HashSet<VoxelIndex> = HashSet::new();
    for (points, pose) in scans {
        let map = to_reference(pose, reference, shift);
        cells.extend(points.iter().filter_map(|p| spec.voxel_index(&map(p))));
    }
    cells.into_iter().collect()
}
