//! Soft instance predictions to final masks, and amodal box fitting.

use nalgebra::Vector2;
use serde::{Deserialize, Serialize};

use crate::bbox::{min_area_rect, OrientedBox};
use crate::error::{Error, Result};
use crate::geom::{VoxelGridSpec, VoxelIndex};
use crate::label::SparseVoxelGrid;

/// Soft masks over a shared list of occupied voxels.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct SoftPrediction {
    pub voxels: Vec<VoxelIndex>,
    pub queries: Vec<SoftQuery>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SoftQuery {
    /// One probability per entry of [`SoftPrediction::voxels`].
    pub probs: Vec<f32>,
    pub feature: Vec<f32>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Thresholds {
    /// Voxel probability threshold.
    pub tau_vox: f64,
    /// Objectness threshold.
    pub tau_obj: f64,
    /// Mask overlap threshold.
    pub tau_ovr: f64,
}

impl Thresholds {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [("tau_vox", self.tau_vox), ("tau_obj", self.tau_obj), ("tau_ovr", self.tau_ovr)] {
            if !(0.0..=1.0).contains(&v) {
                return Err(Error::Config(format!("{name} must lie in [0, 1], got {v}")));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OverlapMode {
    /// Intersection over the smaller mask.
    #[default]
    Smaller,
    Iou,
}

/// A thresholded query; `voxels` index into [`SoftPrediction::voxels`], ascending.
#[derive(Debug, Clone, PartialEq)]
pub struct BinaryMask {
    pub query: usize,
    pub voxels: Vec<u32>,
    pub objectness: f64,
}

/// `{v : p(v) ≥ τ_vox}` per query, with objectness = mean probability over the mask.
pub fn binarize(pred: &SoftPrediction, tau_vox: f64) -> Vec<BinaryMask> {
    pred.queries
        .iter()
        .enumerate()
        .map(|(q, query)| {
            let mut voxels = Vec::new();
            let mut sum = 0.0;
            for (i, &p) in query.probs.iter().enumerate() {
                if p as f64 >= tau_vox {
                    voxels.push(i as u32);
                    sum += p as f64;
                }
            }
            let objectness = if voxels.is_empty() { 0.0 } else { sum / voxels.len() as f64 };
            BinaryMask { query: q, voxels, objectness }
        })
        .collect()
}

fn intersection(a: &[u32], b: &[u32]) -> usize {
    let (mut i, mut j, mut n) = (0, 0, 0);
    while i < a.len() && j < b.len() {
        match a[i].cmp(&b[j]) {
            std::cmp::Ordering::Less => i += 1,
            std::cmp::Ordering::Greater => j += 1,
            std::cmp::Ordering::Equal => {
                n += 1;
                i += 1;
                j += 1;
            }
        }
    }
    n
}

pub fn overlap(a: &[u32], b: &[u32], mode: OverlapMode) -> f64 {
    let inter = intersection(a, b) as f64;
    let denom = match mode {
        OverlapMode::Smaller => a.len().min(b.len()) as f64,
        OverlapMode::Iou => (a.len() + b.len()) as f64 - inter,
    };
    if denom == 0.0 {
        0.0
    } else {
        inter / denom
    }
}

/// Positions (into `masks`) of the surviving masks, in kept order.
///
/// Empty masks and masks below `tau_obj` are dropped; the rest are visited by
/// descending objectness (lower query index first on ties) and dropped when
/// their overlap with an already kept mask exceeds `tau_ovr`.
pub fn suppress(masks: &[BinaryMask], tau_obj: f64, tau_ovr: f64, mode: OverlapMode) -> Vec<usize> {
    let mut order: Vec<usize> = (0..masks.len())
        .filter(|&i| !masks[i].voxels.is_empty() && masks[i].objectness >= tau_obj)
        .collect();
    order.sort_by(|&a, &b| {
        masks[b]
            .objectness
            .total_cmp(&masks[a].objectness)
            .then(masks[a].query.cmp(&masks[b].query))
    });
    let mut kept: Vec<usize> = Vec::new();
    for i in order {
        if kept
            .iter()
            .all(|&k| overlap(&masks[i].voxels, &masks[k].voxels, mode) <= tau_ovr)
        {
            kept.push(i);
        }
    }
    kept
}

/// A surviving instance with its instance ID (1-based, kept order).
#[derive(Debug, Clone, PartialEq)]
pub struct PostInstance {
    pub id: u32,
    pub query: usize,
    pub objectness: f64,
    pub voxels: Vec<VoxelIndex>,
    pub feature: Vec<f32>,
}

/// Binarize, filter and suppress, then paint the kept masks into a grid.
///
/// A voxel claimed by several kept masks goes to the earliest kept one. The
/// occupancy set is the prediction's voxel list.
pub fn postprocess(
    pred: &SoftPrediction,
    spec: &VoxelGridSpec,
    th: &Thresholds,
    mode: OverlapMode,
) -> (SparseVoxelGrid, Vec<PostInstance>) {
    let masks = binarize(pred, th.tau_vox);
    let kept = suppress(&masks, th.tau_obj, th.tau_ovr, mode);
    let mut grid = SparseVoxelGrid::new(*spec);
    grid.occupancy.extend(pred.voxels.iter().copied());
    let mut out = Vec::with_capacity(kept.len());
    for (n, &k) in kept.iter().enumerate() {
        let m = &masks[k];
        let id = n as u32 + 1;
        let mut voxels = Vec::new();
        for &i in &m.voxels {
            let v = pred.voxels[i as usize];
            if let std::collections::btree_map::Entry::Vacant(e) = grid.cells.entry(v) {
                e.insert(id);
                voxels.push(v);
            }
        }
        if voxels.is_empty() {
            continue;
        }
        voxels.sort();
        out.push(PostInstance {
            id,
            query: m.query,
            objectness: m.objectness,
            voxels,
            feature: pred.queries[m.query].feature.clone(),
        });
    }
    (grid, out)
}

/// Upright box around voxel cells: minimum-area footprint of the voxel centers
/// grown by one voxel on each footprint side, z from the center range ± half a voxel.
pub fn fit_box(voxels: &[VoxelIndex], spec: &VoxelGridSpec) -> Result<OrientedBox> {
    if voxels.is_empty() {
        return Err(Error::EmptyInput("voxel set"));
    }
    let centers: Vec<_> = voxels.iter().map(|v| spec.voxel_center(*v)).collect();
    let xy: Vec<Vector2<f64>> = centers.iter().map(|c| c.xy()).collect();
    let rect = min_area_rect(&xy).ok_or(Error::EmptyInput("voxel set"))?;
    let (z0, z1) = centers
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), c| (a.min(c.z), b.max(c.z)));
    let vs = spec.voxel_size;
    Ok(OrientedBox {
        center: [rect.center.x, rect.center.y, (z0 + z1) / 2.0],
        size: [rect.size.x + vs, rect.size.y + vs, z1 - z0 + vs],
        yaw: rect.yaw,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn pred(probs: Vec<Vec<f32>>) -> SoftPrediction {
        let n = probs[0].len() as u32;
        SoftPrediction {
            voxels: (0..n).map(|i| VoxelIndex::new(i, 0, 0)).collect(),
            queries: probs
                .into_iter()
                .map(|p| SoftQuery { probs: p, feature: vec![1.0] })
                .collect(),
        }
    }

    fn mask(query: usize, voxels: Vec<u32>, objectness: f64) -> BinaryMask {
        BinaryMask { query, voxels, objectness }
    }

    #[test]
    fn binarize_cases() {
        let m = binarize(&pred(vec![vec![1.0; 4]]), 0.5);
        assert_eq!(m[0].voxels.len(), 4);
        assert_eq!(m[0].objectness, 1.0);
        let m = binarize(&pred(vec![vec![0.2; 4]]), 0.5);
        assert!(m[0].voxels.is_empty());
        assert_eq!(m[0].objectness, 0.0);
        let m = binarize(&pred(vec![vec![0.9, 0.9, 0.2]]), 0.5);
        assert_eq!(m[0].voxels, vec![0, 1]);
        assert_relative_eq!(m[0].objectness, 0.9, epsilon = 1e-6);
    }

    #[test]
    fn suppress_cases() {
        let disjoint = [mask(0, vec![0, 1], 0.9), mask(1, vec![2, 3], 0.8)];
        assert_eq!(suppress(&disjoint, 0.1, 0.1, OverlapMode::Smaller), vec![0, 1]);

        let dup = [mask(0, vec![0, 1], 0.7), mask(1, vec![0, 1], 0.9)];
        assert_eq!(suppress(&dup, 0.1, 0.1, OverlapMode::Smaller), vec![1]);

        // 3 of 5 small voxels inside the big kept mask: ratio 0.6 > 0.4
        let big: Vec<u32> = (0..20).collect();
        let nested = [mask(0, big, 0.9), mask(1, vec![17, 18, 19, 20, 21], 0.8)];
        assert_eq!(suppress(&nested, 0.1, 0.4, OverlapMode::Smaller), vec![0]);
        // as IoU the same pair overlaps 3/22 and survives
        assert_eq!(suppress(&nested, 0.1, 0.4, OverlapMode::Iou), vec![0, 1]);

        let low = [mask(0, vec![0], 0.05)];
        assert!(suppress(&low, 0.1, 0.1, OverlapMode::Smaller).is_empty());
    }

    #[test]
    fn suppress_tie_prefers_lower_query() {
        let m = [mask(1, vec![0, 1], 0.5), mask(0, vec![0, 1], 0.5)];
        assert_eq!(suppress(&m, 0.1, 0.1, OverlapMode::Smaller), vec![1]);
    }

    #[test]
    fn postprocess_assigns_ids_in_kept_order() {
        let p = pred(vec![vec![0.9, 0.9, 0.0, 0.0], vec![0.0, 0.0, 0.95, 0.95]]);
        let spec = VoxelGridSpec::new([0.0; 3], 0.2, [8, 8, 8]).unwrap();
        let th = Thresholds { tau_vox: 0.5, tau_obj: 0.5, tau_ovr: 0.1 };
        let (grid, inst) = postprocess(&p, &spec, &th, OverlapMode::Smaller);
        assert_eq!(inst.len(), 2);
        assert_eq!(inst[0].query, 1);
        assert_eq!(grid.label(VoxelIndex::new(2, 0, 0)), Some(1));
        assert_eq!(grid.label(VoxelIndex::new(0, 0, 0)), Some(2));
    }

    #[test]
    fn box_of_single_voxel_and_block() {
        let spec = VoxelGridSpec::new([0.0; 3], 0.2, [16, 16, 16]).unwrap();
        let b = fit_box(&[VoxelIndex::new(2, 3, 4)], &spec).unwrap();
        assert_relative_eq!(b.size[0], 0.2, epsilon = 1e-12);
        assert_relative_eq!(b.size[2], 0.2, epsilon = 1e-12);
        assert_relative_eq!(b.center[0], 0.5, epsilon = 1e-12);

        let mut block = Vec::new();
        for x in 0..3 {
            for y in 0..2 {
                block.push(VoxelIndex::new(x, y, 0));
            }
        }
        let b = fit_box(&block, &spec).unwrap();
        assert_relative_eq!(b.yaw, 0.0, epsilon = 1e-12);
        assert_relative_eq!(b.size[0], 0.6, epsilon = 1e-12);
        assert_relative_eq!(b.size[1], 0.4, epsilon = 1e-12);
        assert_relative_eq!(b.size[2], 0.2, epsilon = 1e-12);
        assert!(matches!(fit_box(&[], &spec), Err(Error::EmptyInput(_))));
    }
}
