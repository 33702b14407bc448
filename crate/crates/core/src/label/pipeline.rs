//! End-to-end pseudo-labels for one reference frame: lift, refine, filter,
//! aggregate, voxelize, fuse with occupancy, CRF, and feature aggregation.

use std::collections::{BTreeMap, BTreeSet};
use std::sync::Arc;

use nalgebra::Vector3;
use rayon::prelude::*;
use serde::Serialize;

use super::aggregate::{accumulate_occupancy, aggregate_window, FrameLabels};
use super::dbscan::dbscan_refine;
use super::dynamic::{filter_dynamic, TrackBox};
use super::ground::{fit_ground_plane, GroundParams};
use super::lift::lift_mask;
use super::voxelize::{fuse, voxelize_majority};
use super::SparseVoxelGrid;
use crate::config::Settings;
use crate::crf::crf_refine;
use crate::error::Result;
use crate::geom::{project_points, CameraModel, PointCloud, RigidTransform};
use crate::io::{Frame, Sequence};
use crate::semantics::{aggregate_features, InstanceRecord};

/// Anything that can hand out frames of one sequence.
pub trait FrameSource: Sync {
    fn len(&self) -> usize;
    fn frame(&self, index: usize) -> Result<Frame>;
    fn camera(&self) -> &CameraModel;
    /// Dynamic-object boxes of a frame in its sensor coordinates.
    fn tracks(&self, index: usize) -> &[TrackBox];

    /// Scan and pose only; sources may skip loading masklets here.
    fn scan(&self, index: usize) -> Result<(PointCloud, RigidTransform)> {
        let f = self.frame(index)?;
        Ok((f.cloud, f.pose))
    }

    fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

impl FrameSource for Sequence {
    fn len(&self) -> usize {
        Sequence::len(self)
    }

    fn frame(&self, index: usize) -> Result<Frame> {
        Sequence::frame(self, index)
    }

    fn camera(&self) -> &CameraModel {
        &self.camera
    }

    fn tracks(&self, index: usize) -> &[TrackBox] {
        self.tracks.get(&index).map_or(&[], |v| v.as_slice())
    }

    fn scan(&self, index: usize) -> Result<(PointCloud, RigidTransform)> {
        let path = self.manifest.scan_paths.get(index).ok_or_else(|| {
            crate::error::Error::Config(format!("frame {index} outside a {}-frame sequence", Sequence::len(self)))
        })?;
        Ok((crate::io::read_scan(path)?, self.poses[index]))
    }
}

/// One frame after lifting and refinement, in sensor coordinates.
#[derive(Debug, Clone, PartialEq)]
pub struct ProcessedFrame {
    pub labels: FrameLabels,
    /// Features of the instances that kept at least one point.
    pub features: BTreeMap<u32, Vec<f32>>,
}

impl ProcessedFrame {
    /// Points of each nonzero instance.
    pub fn instance_points(&self) -> BTreeMap<u32, Vec<Vector3<f64>>> {
        let mut out: BTreeMap<u32, Vec<Vector3<f64>>> = BTreeMap::new();
        for (p, &id) in self.labels.points.iter().zip(&self.labels.ids) {
            if id != 0 {
                out.entry(id).or_default().push(*p);
            }
        }
        out
    }
}

/// Lifts the frame's raster onto its points, then refines the non-ground points
/// inside the camera frustum with multi-radius DBSCAN. Ground inliers keep
/// their lifted IDs.
pub fn process_frame(frame: &Frame, camera: &CameraModel, settings: &Settings, seed: u64) -> Result<ProcessedFrame> {
    let points: Vec<Vector3<f64>> = frame.cloud.iter_xyz().collect();
    let Some(masklet) = &frame.masklet else {
        return Ok(ProcessedFrame {
            labels: FrameLabels { frame: frame.index, pose: frame.pose, ids: vec![0; points.len()], points },
            features: BTreeMap::new(),
        });
    };
    let lifted = lift_mask(masklet, &frame.cloud, camera)?;
    let ground = fit_ground_plane(
        &points,
        &GroundParams {
            seed: seed.wrapping_add(frame.index as u64),
            ..settings.ground
        },
    )
    .ok();
    let candidates: Vec<usize> = project_points(&frame.cloud, camera)
        .into_iter()
        .map(|(i, _, _)| i)
        .filter(|&i| ground.as_ref().is_none_or(|g| !g.inliers[i]))
        .collect();
    let sub_pts: Vec<Vector3<f64>> = candidates.iter().map(|&i| points[i]).collect();
    let sub_ids: Vec<u32> = candidates.iter().map(|&i| lifted[i]).collect();
    let refined = dbscan_refine(&sub_pts, &sub_ids, &settings.refine);
    let mut ids = lifted;
    for (&i, &id) in candidates.iter().zip(&refined) {
        ids[i] = id;
    }
    let present: BTreeSet<u32> = ids.iter().copied().filter(|&i| i != 0).collect();
    let features = masklet
        .features
        .iter()
        .filter(|(id, _)| present.contains(id))
        .map(|(id, f)| (*id, f.clone()))
        .collect();
    Ok(ProcessedFrame {
        labels: FrameLabels { frame: frame.index, pose: frame.pose, points, ids },
        features,
    })
}

/// Per-stage counts reported alongside each result.
#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct PipelineStats {
    pub reference: usize,
    pub mask_frames: usize,
    pub occupancy_frames: usize,
    pub aggregated_points: usize,
    pub discarded_dynamic: Vec<u32>,
    pub dropped_without_feature: Vec<u32>,
    pub occupied_voxels: usize,
    pub labeled_before_crf: usize,
    pub labeled_after_crf: usize,
    pub instances: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PseudoLabels {
    pub grid: SparseVoxelGrid,
    pub instances: Vec<InstanceRecord>,
    pub stats: PipelineStats,
}

/// Runs the pipeline for reference frames in ascending order, reusing processed
/// frames between neighboring references.
pub struct PseudoLabeler<'a, S: FrameSource> {
    source: &'a S,
    settings: Settings,
    crf: bool,
    seed: u64,
    cache: BTreeMap<usize, Arc<ProcessedFrame>>,
}

impl<'a, S: FrameSource> PseudoLabeler<'a, S> {
    pub fn new(source: &'a S, settings: Settings, crf: bool, seed: u64) -> Self {
        Self { source, settings, crf, seed, cache: BTreeMap::new() }
    }

    pub fn settings(&self) -> &Settings {
        &self.settings
    }

    fn processed(&mut self, frames: &[usize]) -> Result<Vec<Arc<ProcessedFrame>>> {
        let missing: Vec<usize> = frames.iter().copied().filter(|f| !self.cache.contains_key(f)).collect();
        let (source, settings, seed) = (self.source, &self.settings, self.seed);
        let fresh: Vec<Result<ProcessedFrame>> = missing
            .par_iter()
            .map(|&f| process_frame(&source.frame(f)?, source.camera(), settings, seed))
            .collect();
        for (f, r) in missing.into_iter().zip(fresh) {
            self.cache.insert(f, Arc::new(r?));
        }
        if let Some(&lo) = frames.first() {
            self.cache.retain(|&k, _| k >= lo);
        }
        Ok(frames.iter().map(|f| self.cache[f].clone()).collect())
    }

    pub fn run(&mut self, reference: usize) -> Result<PseudoLabels> {
        let n = self.source.len();
        if reference >= n {
            return Err(crate::error::Error::Config(format!(
                "reference frame {reference} outside a {n}-frame sequence"
            )));
        }
        let s = self.settings.clone();
        let mask_frames = s.window.mask_frames(reference, n);
        let occ_frames = s.window.occupancy_frames(reference, n);
        let processed = self.processed(&mask_frames)?;
        let reference_pose = self.source.scan(reference)?.1;

        let discarded = if s.dynamic_removal {
            let per_frame: BTreeMap<usize, BTreeMap<u32, Vec<Vector3<f64>>>> = processed
                .iter()
                .map(|p| (p.labels.frame, p.instance_points()))
                .collect();
            let tracks: BTreeMap<usize, Vec<TrackBox>> = mask_frames
                .iter()
                .map(|&f| (f, self.source.tracks(f).to_vec()))
                .collect();
            filter_dynamic(&per_frame, &tracks, s.dynamic_iou)
        } else {
            BTreeSet::new()
        };

        let frames: Vec<FrameLabels> = processed.iter().map(|p| p.labels.clone()).collect();
        let points = aggregate_window(&frames, &reference_pose, s.alignment_shift, &discarded);
        let labels = voxelize_majority(&points, &s.grid);

        let scans: Vec<(Vec<Vector3<f64>>, RigidTransform)> = occ_frames
            .par_iter()
            .map(|&f| {
                let (cloud, pose) = self.source.scan(f)?;
                let boxes = if s.dynamic_removal { self.source.tracks(f) } else { &[] };
                let pts = cloud
                    .iter_xyz()
                    .filter(|p| !boxes.iter().any(|b| b.contains(p)))
                    .collect();
                Ok((pts, pose))
            })
            .collect::<Result<_>>()?;
        let occupancy = accumulate_occupancy(
            scans.iter().map(|(p, t)| (p.as_slice(), t)),
            &reference_pose,
            s.alignment_shift,
            &s.grid,
        );
        let mut grid = fuse(labels, &occupancy);

        // features per instance over the window, in frame order
        let mut feats: BTreeMap<u32, Vec<&[f32]>> = BTreeMap::new();
        for p in &processed {
            for (id, f) in &p.features {
                if !discarded.contains(id) {
                    feats.entry(*id).or_default().push(f);
                }
            }
        }
        let dropped: Vec<u32> = grid
            .instance_ids()
            .into_iter()
            .filter(|id| !feats.contains_key(id))
            .collect();
        grid.retain_instances(|id| feats.contains_key(&id));

        let labeled_before = grid.labeled_count();
        if self.crf && labeled_before > 0 {
            grid = crf_refine(&grid, &s.crf)?;
        }
        let mut instances = Vec::new();
        for (id, voxels) in grid.by_instance() {
            let f = &feats[&id];
            instances.push(InstanceRecord {
                instance_id: id,
                voxels,
                feature: aggregate_features(f)?,
                frame_count: f.len() as u32,
            });
        }
        let stats = PipelineStats {
            reference,
            mask_frames: mask_frames.len(),
            occupancy_frames: occ_frames.len(),
            aggregated_points: points.len(),
            discarded_dynamic: discarded.into_iter().collect(),
            dropped_without_feature: dropped,
            occupied_voxels: grid.occupancy.len(),
            labeled_before_crf: labeled_before,
            labeled_after_crf: grid.labeled_count(),
            instances: instances.len(),
        };
        Ok(PseudoLabels { grid, instances, stats })
    }
}
