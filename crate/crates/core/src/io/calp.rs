//! `CALP` pseudo-label files.
//!
//! ```text
//! "CALP" | u32 version = 1
//! f32×3 origin | f32 voxel_size | u32×3 dims
//! u32 instance count
//!   per instance (ascending id): u32 id | u32 voxel count | f32×768 feature | count × (u16 x, u16 y, u16 z)
//! u32 occupancy count | count × u32 linear index (x-fastest, ascending)
//! ```
//! Voxels of an instance are written in ascending linear order, so a rewrite
//! of a file that was read back is byte-identical.

use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;

use super::bytes::{read_file, u32_len, widen, write_file, Reader, Writer};
use crate::error::{Error, Result};
use crate::geom::{VoxelGridSpec, VoxelIndex};
use crate::label::SparseVoxelGrid;
use crate::semantics::{InstanceRecord, FEATURE_DIM};

pub const CALP_MAGIC: &[u8; 4] = b"CALP";
pub const CALP_VERSION: u32 = 1;

pub fn encode_pseudo_labels(grid: &SparseVoxelGrid, instances: &[InstanceRecord]) -> Result<Vec<u8>> {
    let spec = &grid.spec;
    if spec.dims.iter().any(|&d| d > u16::MAX as u32 + 1) {
        return Err(Error::Config("grid dims exceed the u16 voxel coordinate range".into()));
    }
    let mut by_id: BTreeMap<u32, &InstanceRecord> = BTreeMap::new();
    for r in instances {
        if r.feature.len() != FEATURE_DIM {
            return Err(Error::SizeMismatch(format!(
                "instance {} feature has {} entries, expected {FEATURE_DIM}",
                r.instance_id,
                r.feature.len()
            )));
        }
        if by_id.insert(r.instance_id, r).is_some() {
            return Err(Error::Invariant(format!(
                "instance {} listed twice",
                r.instance_id
            )));
        }
    }
    let grouped = grid.by_instance();
    if let Some(id) = grouped.keys().find(|id| !by_id.contains_key(id)) {
        return Err(Error::DanglingInstanceReference(*id));
    }
    for (id, rec) in &by_id {
        let in_grid = grouped.get(id).cloned().unwrap_or_default();
        if rec.voxels != in_grid {
            return Err(Error::Invariant(format!(
                "instance {id} voxel set disagrees with the grid labels"
            )));
        }
    }

    let mut w = Writer::default();
    w.bytes(CALP_MAGIC);
    w.u32(CALP_VERSION);
    for o in spec.origin {
        w.f32(o as f32);
    }
    w.f32(spec.voxel_size as f32);
    for d in spec.dims {
        w.u32(d);
    }
    w.u32(u32_len(by_id.len(), "instance")?);
    for (id, rec) in &by_id {
        let mut voxels: Vec<VoxelIndex> = rec.voxels.iter().copied().collect();
        voxels.sort_by_key(|v| spec.linear(*v));
        w.u32(*id);
        w.u32(u32_len(voxels.len(), "voxel")?);
        w.f32_slice(&rec.feature);
        for v in voxels {
            if !spec.contains(v) {
                return Err(Error::Invariant(format!("voxel {v:?} outside the grid")));
            }
            for c in v.0 {
                w.u16(c as u16);
            }
        }
    }
    let mut occ: Vec<usize> = grid.occupancy.iter().map(|v| spec.linear(*v)).collect();
    occ.sort_unstable();
    w.u32(u32_len(occ.len(), "occupancy")?);
    for lin in occ {
        w.u32(u32_len(lin, "linear index")?);
    }
    Ok(w.buf)
}

pub fn write_pseudo_labels(
    path: &Path,
    grid: &SparseVoxelGrid,
    instances: &[InstanceRecord],
) -> Result<()> {
    write_file(path, &encode_pseudo_labels(grid, instances)?)
}

pub fn read_pseudo_labels(path: &Path) -> Result<(SparseVoxelGrid, Vec<InstanceRecord>)> {
    decode_pseudo_labels(&read_file(path)?, path)
}

pub fn decode_pseudo_labels(
    bytes: &[u8],
    path: &Path,
) -> Result<(SparseVoxelGrid, Vec<InstanceRecord>)> {
    let mut r = Reader::new(bytes, path);
    r.magic(CALP_MAGIC)?;
    let version = r.u32()?;
    if version != CALP_VERSION {
        return Err(r.err(format!("unsupported version {version}")));
    }
    let origin = [widen(r.f32()?), widen(r.f32()?), widen(r.f32()?)];
    let voxel_size = widen(r.f32()?);
    let dims = [r.u32()?, r.u32()?, r.u32()?];
    let spec = VoxelGridSpec::new(origin, voxel_size, dims).map_err(|e| r.err(e.to_string()))?;
    let mut grid = SparseVoxelGrid::new(spec);

    let n_inst = r.u32()?;
    let mut instances = Vec::with_capacity(n_inst as usize);
    let mut last_id = None;
    for _ in 0..n_inst {
        let id = r.u32()?;
        if last_id.is_some_and(|l| id <= l) {
            return Err(r.err("instance ids not strictly ascending"));
        }
        last_id = Some(id);
        let count = r.u32()? as usize;
        let feature = r.f32_vec(FEATURE_DIM)?;
        if !feature.iter().all(|x| x.is_finite()) {
            return Err(r.err(format!("instance {id} has a non-finite feature")));
        }
        let mut voxels = BTreeSet::new();
        for _ in 0..count {
            let v = VoxelIndex([r.u16()? as u32, r.u16()? as u32, r.u16()? as u32]);
            if !spec.contains(v) {
                return Err(r.err(format!("voxel {v:?} outside the grid")));
            }
            if grid.cells.insert(v, id).is_some() {
                return Err(r.err(format!("voxel {v:?} labeled twice")));
            }
            voxels.insert(v);
        }
        instances.push(InstanceRecord {
            instance_id: id,
            voxels,
            feature,
            frame_count: 0,
        });
    }
    let n_occ = r.u32()?;
    let cells = spec.cell_count();
    for _ in 0..n_occ {
        let lin = r.u32()? as usize;
        if lin >= cells {
            return Err(r.err(format!("occupancy index {lin} outside the grid")));
        }
        grid.occupancy.insert(spec.unlinear(lin));
    }
    r.finish()?;
    Ok((grid, instances))
}
