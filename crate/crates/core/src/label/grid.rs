use std::collections::{BTreeMap, BTreeSet};

use crate::geom::{VoxelGridSpec, VoxelIndex};

/// Instance labels over a subset of cells plus a class-agnostic occupancy set.
///
/// After [`fuse`](crate::label::fuse) every labeled cell is also occupied.
#[derive(Debug, Clone, PartialEq)]
pub struct SparseVoxelGrid {
    pub spec: VoxelGridSpec,
    pub cells: BTreeMap<VoxelIndex, u32>,
    pub occupancy: BTreeSet<VoxelIndex>,
}

impl SparseVoxelGrid {
    pub fn new(spec: VoxelGridSpec) -> Self {
        Self {
            spec,
            cells: BTreeMap::new(),
            occupancy: BTreeSet::new(),
        }
    }

    pub fn label(&self, idx: VoxelIndex) -> Option<u32> {
        self.cells.get(&idx).copied()
    }

    pub fn labeled_count(&self) -> usize {
        self.cells.len()
    }

    pub fn instance_ids(&self) -> BTreeSet<u32> {
        self.cells.values().copied().collect()
    }

    pub fn voxels_of(&self, id: u32) -> BTreeSet<VoxelIndex> {
        self.cells
            .iter()
            .filter(|(_, &v)| v == id)
            .map(|(k, _)| *k)
            .collect()
    }

    /// Voxels grouped by instance ID.
    pub fn by_instance(&self) -> BTreeMap<u32, BTreeSet<VoxelIndex>> {
        let mut out: BTreeMap<u32, BTreeSet<VoxelIndex>> = BTreeMap::new();
        for (&v, &id) in &self.cells {
            out.entry(id).or_default().insert(v);
        }
        out
    }

    pub fn is_fused(&self) -> bool {
        self.cells.keys().all(|k| self.occupancy.contains(k))
    }

    /// Occupied cells together with labeled cells, in index order.
    pub fn support(&self) -> BTreeSet<VoxelIndex> {
        self.occupancy
            .iter()
            .chain(self.cells.keys())
            .copied()
            .collect()
    }

    pub fn retain_instances(&mut self, keep: impl Fn(u32) -> bool) {
        self.cells.retain(|_, id| keep(*id));
    }
}
