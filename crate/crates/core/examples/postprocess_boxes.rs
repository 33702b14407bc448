//! Thresholds and suppresses soft instance masks, then fits upright boxes.

use calpsc::config::DatasetProfile;
use calpsc::geom::{VoxelGridSpec, VoxelIndex};
use calpsc::post::{fit_box, postprocess, OverlapMode, SoftPrediction, SoftQuery};

fn main() -> calpsc::Result<()> {
    let spec = VoxelGridSpec::benchmark();
    let th = DatasetProfile::Kitti360.settings().thresholds;

    // a 20x8 voxel car footprint rotated by 30 degrees
    let (s, c) = 30f64.to_radians().sin_cos();
    let mut voxels = Vec::new();
    for i in 0..20 {
        for j in 0..8 {
            let (x, y) = (c * i as f64 - s * j as f64, s * i as f64 + c * j as f64);
            for z in 5..12 {
                voxels.push(VoxelIndex::new((100.0 + x).round() as u32, (100.0 + y).round() as u32, z));
            }
        }
    }
    voxels.sort();
    voxels.dedup();
    let n = voxels.len();
    let queries = vec![
        SoftQuery { probs: vec![0.9; n], feature: vec![1.0] },
        // near duplicate with lower confidence, suppressed
        SoftQuery { probs: vec![0.6; n], feature: vec![1.0] },
        // too weak to pass the objectness threshold
        SoftQuery { probs: vec![0.35; n], feature: vec![1.0] },
    ];
    let (grid, kept) = postprocess(&SoftPrediction { voxels, queries }, &spec, &th, OverlapMode::Smaller);
    println!("{} of 3 queries kept, {} voxels labeled", kept.len(), grid.labeled_count());
    for k in &kept {
        let b = fit_box(&k.voxels, &spec)?;
        println!(
            "instance {} (query {}): center {:.2?} size {:.2?} yaw {:.1}°",
            k.id,
            k.query,
            b.center,
            b.size,
            b.yaw.to_degrees()
        );
    }
    Ok(())
}
