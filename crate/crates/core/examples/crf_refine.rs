//! Densifies a sparse labeling with the mean-field CRF.

use calpsc::crf::{crf_infer, crf_refine, CrfParams};
use calpsc::geom::{VoxelGridSpec, VoxelIndex};
use calpsc::label::SparseVoxelGrid;

fn main() -> calpsc::Result<()> {
    let mut g = SparseVoxelGrid::new(VoxelGridSpec::benchmark());
    // two walls, each labeled only at one end
    for (id, y) in [(1, 100), (2, 110)] {
        for x in 60..80 {
            for z in 8..12 {
                let v = VoxelIndex::new(x, y, z);
                g.occupancy.insert(v);
                if x < 63 {
                    g.cells.insert(v, id);
                }
            }
        }
    }
    let params = CrfParams::default();
    let refined = crf_refine(&g, &params)?;
    println!("labeled before: {} / {}", g.labeled_count(), g.occupancy.len());
    println!("labeled after:  {} / {}", refined.labeled_count(), refined.occupancy.len());
    for (id, cells) in refined.by_instance() {
        println!("  instance {id}: {} voxels", cells.len());
    }

    let q = crf_infer(&g, &params)?;
    let far = q.voxels.iter().position(|v| *v == VoxelIndex::new(79, 100, 10)).unwrap();
    println!("far end of wall 1: {:?}", q.dense_row(far));
    Ok(())
}
