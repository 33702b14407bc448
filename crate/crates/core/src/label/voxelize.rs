use std::collections::BTreeSet;

use super::aggregate::LabeledPoints;
use super::grid::SparseVoxelGrid;
use crate::geom::{VoxelGridSpec, VoxelIndex};

/// Labels each cell with its most frequent nonzero instance ID (ties → smallest ID).
///
/// Every cell hit by a point, labeled or not, enters the occupancy set.
pub fn voxelize_majority(points: &LabeledPoints, spec: &VoxelGridSpec) -> SparseVoxelGrid {
    let mut grid = SparseVoxelGrid::new(*spec);
    // (linear cell, id) keys; sorting groups equal IDs inside a cell
    let mut keys: Vec<(usize, u32)> = points
        .points
        .iter()
        .zip(&points.instance_id)
        .filter_map(|(p, &id)| spec.voxel_index(p).map(|v| (spec.linear(v), id)))
        .collect();
    keys.sort_unstable();

    let mut i = 0;
    while i < keys.len() {
        let cell = keys[i].0;
        let mut best: Option<(u32, usize)> = None;
        while i < keys.len() && keys[i].0 == cell {
            let id = keys[i].1;
            let mut run = 0;
            while i < keys.len() && keys[i] == (cell, id) {
                run += 1;
                i += 1;
            }
            // ascending id within a cell, so strict `>` keeps the smaller id on ties
            if id != 0 && best.is_none_or(|(_, n)| run > n) {
                best = Some((id, run));
            }
        }
        let v = spec.unlinear(cell);
        grid.occupancy.insert(v);
        if let Some((id, _)) = best {
            grid.cells.insert(v, id);
        }
    }
    grid
}

/// Adds label support to the occupancy set. Labels are unchanged.
pub fn fuse(mut labels: SparseVoxelGrid, occupancy: &BTreeSet<VoxelIndex>) -> SparseVoxelGrid {
    labels.occupancy.extend(occupancy.iter().copied());
    let support: Vec<VoxelIndex> = labels.cells.keys().copied().collect();
    labels.occupancy.extend(support);
    labels
}
