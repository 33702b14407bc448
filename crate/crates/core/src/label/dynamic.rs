use std::collections::{BTreeMap, BTreeSet};

use nalgebra::Vector3;
use serde::{Deserialize, Serialize};

use crate::bbox::{box_iou_3d, fit_upright_box, OrientedBox};

/// A dynamic-object box in one frame's sensor coordinates.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrackBox {
    pub frame_index: usize,
    pub center: [f64; 3],
    pub size: [f64; 3],
    pub yaw: f64,
}

impl TrackBox {
    pub fn to_box(&self) -> OrientedBox {
        OrientedBox {
            center: self.center,
            size: self.size,
            yaw: self.yaw,
        }
    }

    pub fn contains(&self, p: &Vector3<f64>) -> bool {
        self.to_box().contains(p)
    }
}

/// Default 3D IoU above which an instance counts as dynamic.
pub const DYNAMIC_IOU: f64 = 0.5;

/// Instance IDs whose fitted box in any frame overlaps a track box of that frame
/// with IoU ≥ `overlap_thresh`.
///
/// `per_frame` maps frame index → instance ID → that instance's points in the
/// frame's sensor coordinates.
pub fn filter_dynamic(
    per_frame: &BTreeMap<usize, BTreeMap<u32, Vec<Vector3<f64>>>>,
    tracks: &BTreeMap<usize, Vec<TrackBox>>,
    overlap_thresh: f64,
) -> BTreeSet<u32> {
    let mut out = BTreeSet::new();
    for (frame, instances) in per_frame {
        let Some(boxes) = tracks.get(frame).filter(|b| !b.is_empty()) else {
            continue;
        };
        for (&id, pts) in instances {
            if out.contains(&id) {
                continue;
            }
            let Some(fit) = fit_upright_box(pts) else {
                continue;
            };
            if boxes.iter().any(|t| box_iou_3d(&fit, &t.to_box()) >= overlap_thresh) {
                out.insert(id);
            }
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cube_points(c: [f64; 3], half: [f64; 3], n: usize) -> Vec<Vector3<f64>> {
        let mut out = Vec::new();
        for i in 0..=n {
            for j in 0..=n {
                for k in 0..=n {
                    let f = |t: usize, a: usize| (t as f64 / n as f64 * 2.0 - 1.0) * half[a];
                    out.push(Vector3::new(c[0] + f(i, 0), c[1] + f(j, 1), c[2] + f(k, 2)));
                }
            }
        }
        out
    }

    fn one_frame(id: u32, pts: Vec<Vector3<f64>>) -> BTreeMap<usize, BTreeMap<u32, Vec<Vector3<f64>>>> {
        BTreeMap::from([(0, BTreeMap::from([(id, pts)]))])
    }

    #[test]
    fn no_tracks_discards_nothing() {
        let frames = one_frame(1, cube_points([5.0, 0.0, 0.0], [1.0; 3], 3));
        assert!(filter_dynamic(&frames, &BTreeMap::new(), DYNAMIC_IOU).is_empty());
    }

    #[test]
    fn instance_matching_track_is_discarded() {
        let frames = one_frame(4, cube_points([5.0, 0.0, 0.0], [1.0, 0.8, 0.7], 4));
        let t = TrackBox {
            frame_index: 0,
            center: [5.0, 0.0, 0.0],
            size: [2.2, 1.8, 1.6],
            yaw: 0.0,
        };
        // fitted 2×1.6×1.4 inside 2.2×1.8×1.6: IoU = 4.48 / 6.336 ≈ 0.707
        let tracks = BTreeMap::from([(0, vec![t])]);
        assert_eq!(filter_dynamic(&frames, &tracks, DYNAMIC_IOU), BTreeSet::from([4]));
    }

    #[test]
    fn low_iou_instance_is_kept() {
        // fitted unit cube at x=0; track 1×1×1 shifted by 7/13 m in x
        // overlap 6/13, union 2 − 6/13 = 20/13 → IoU 0.3
        let frames = one_frame(2, cube_points([0.0; 3], [0.5; 3], 4));
        let shift = 7.0 / 13.0;
        let t = TrackBox {
            frame_index: 0,
            center: [shift, 0.0, 0.0],
            size: [1.0; 3],
            yaw: 0.0,
        };
        let b = fit_upright_box(&frames[&0][&2]).unwrap();
        assert!((box_iou_3d(&b, &t.to_box()) - 0.3).abs() < 1e-9);
        let tracks = BTreeMap::from([(0, vec![t])]);
        assert!(filter_dynamic(&frames, &tracks, DYNAMIC_IOU).is_empty());
    }

    #[test]
    fn discard_applies_across_frames() {
        let mut frames = one_frame(9, cube_points([20.0, 0.0, 0.0], [1.0; 3], 2));
        frames.insert(1, BTreeMap::from([(9, cube_points([3.0, 0.0, 0.0], [1.0; 3], 2))]));
        let t = TrackBox {
            frame_index: 1,
            center: [3.0, 0.0, 0.0],
            size: [2.0; 3],
            yaw: 0.0,
        };
        let tracks = BTreeMap::from([(1, vec![t])]);
        assert_eq!(filter_dynamic(&frames, &tracks, DYNAMIC_IOU), BTreeSet::from([9]));
    }
}
