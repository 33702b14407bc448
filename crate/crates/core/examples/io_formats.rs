//! Writes and reads back every binary format: CALP pseudo-labels, CALQ soft
//! predictions, CALG ground truth and IDM1 masklet rasters.

use std::collections::BTreeSet;

use calpsc::geom::{VoxelGridSpec, VoxelIndex};
use calpsc::io::{
    read_gt_grid, read_pseudo_labels, read_raster, read_soft_prediction, write_gt_grid, write_pseudo_labels,
    write_raster, write_soft_prediction, GroundTruthGrid,
};
use calpsc::label::SparseVoxelGrid;
use calpsc::post::{SoftPrediction, SoftQuery};
use calpsc::semantics::{InstanceRecord, FEATURE_DIM};

fn main() -> calpsc::Result<()> {
    let dir = std::env::temp_dir().join("calpsc-io-formats");
    let spec = VoxelGridSpec::benchmark();

    let mut grid = SparseVoxelGrid::new(spec);
    let voxels: BTreeSet<VoxelIndex> = (0..3).map(|x| VoxelIndex::new(40 + x, 128, 10)).collect();
    for v in &voxels {
        grid.occupancy.insert(*v);
        grid.cells.insert(*v, 7);
    }
    grid.occupancy.insert(VoxelIndex::new(44, 128, 10));
    let mut feature = vec![0.0f32; FEATURE_DIM];
    feature[0] = 1.0;
    let rec = InstanceRecord { instance_id: 7, voxels, feature, frame_count: 0 };
    let calp = dir.join("labels.calp");
    write_pseudo_labels(&calp, &grid, &[rec])?;
    let (back, records) = read_pseudo_labels(&calp)?;
    println!("CALP: {} occupied, {} labeled, {} instance(s)", back.occupancy.len(), back.labeled_count(), records.len());

    let pred = SoftPrediction {
        voxels: grid.occupancy.iter().copied().collect(),
        queries: vec![SoftQuery { probs: vec![0.9, 0.8, 0.7, 0.1], feature: vec![0.5; 16] }],
    };
    let calq = dir.join("pred.calq");
    write_soft_prediction(&calq, &pred)?;
    println!("CALQ round trip equal: {}", read_soft_prediction(&calq)? == pred);

    let mut gt = GroundTruthGrid::empty(spec);
    gt.set(VoxelIndex::new(40, 128, 10), 2, 1);
    let calg = dir.join("gt.calg");
    write_gt_grid(&calg, &gt)?;
    println!("CALG: {} occupied valid voxel(s)", read_gt_grid(&calg, &spec)?.occupied_valid().count());

    let ids: Vec<u32> = (0..12).map(|i| (i % 3) as u32).collect();
    let idm = dir.join("000000.idm");
    write_raster(&idm, 4, 3, &ids)?;
    let (w, h, back) = read_raster(&idm)?;
    println!("IDM1: {w}x{h}, equal: {}", back == ids);
    Ok(())
}
