//! Rigid transforms, pinhole projection and voxel indexing on the benchmark grid.

use calpsc::geom::{CameraModel, PointCloud, RigidTransform, VoxelGridSpec};
use nalgebra::{Matrix3, Vector3};

fn main() -> calpsc::Result<()> {
    let quarter = RigidTransform::from_yaw(std::f64::consts::FRAC_PI_2, Vector3::zeros());
    let half = quarter.compose(&quarter);
    println!("two quarter turns map x to {:?}", half.apply(&Vector3::x()).as_slice());

    // camera looking along lidar +x
    let axes = Matrix3::new(0.0, -1.0, 0.0, 0.0, 0.0, -1.0, 1.0, 0.0, 0.0);
    let cam = CameraModel::pinhole(700.0, 700.0, 620.0, 188.0, RigidTransform::new(axes, Vector3::zeros())?, 1241, 376)?;
    for p in [Vector3::new(10.0, 0.0, 0.0), Vector3::new(10.0, 2.0, -1.0), Vector3::new(-5.0, 0.0, 0.0)] {
        println!("{:?} -> {:?}", p.as_slice(), cam.project(&p));
    }

    let spec = VoxelGridSpec::benchmark();
    let p = Vector3::new(10.05, 0.0, 0.0);
    let v = spec.voxel_index(&p).expect("inside the grid");
    println!("{:?} falls in voxel {:?} centered at {:?}", p.as_slice(), v.0, spec.voxel_center(v).as_slice());

    let cloud = PointCloud::from_xyz(&[Vector3::new(5.0, 1.0, 0.0), Vector3::new(60.0, 0.0, 0.0)])?;
    let inside: Vec<_> = cloud.iter_xyz().filter_map(|p| spec.voxel_index(&p)).collect();
    println!("{} of {} points land in the {:?} grid", inside.len(), cloud.len(), spec.dims);
    Ok(())
}
