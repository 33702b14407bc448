//! Rigid transforms, pinhole projection and voxel-grid addressing.
//!
//! Everything here is immutable after construction and computed in `f64`.

use nalgebra::{Matrix3, Matrix3x4, Vector3, Vector4};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Orthonormality tolerance on `RᵀR − I` (max-abs norm).
pub const ORTHO_TOL: f64 = 1e-9;

/// A proper rigid-body motion `p ↦ R p + t`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RigidTransform {
    rotation: Matrix3<f64>,
    translation: Vector3<f64>,
}

impl Default for RigidTransform {
    fn default() -> Self {
        Self::identity()
    }
}

impl RigidTransform {
    pub fn identity() -> Self {
        Self {
            rotation: Matrix3::identity(),
            translation: Vector3::zeros(),
        }
    }

    /// Builds a transform, checking that `rotation` is orthonormal with determinant +1.
    pub fn new(rotation: Matrix3<f64>, translation: Vector3<f64>) -> Result<Self> {
        if !rotation.iter().chain(translation.iter()).all(|v| v.is_finite()) {
            return Err(Error::DegenerateInput("non-finite transform entry".into()));
        }
        if ortho_drift(&rotation) > 1e-6 || rotation.determinant() <= 0.0 {
            return Err(Error::DegenerateInput(
                "rotation is not a proper orthonormal matrix".into(),
            ));
        }
        let rotation = if ortho_drift(&rotation) > ORTHO_TOL {
            orthonormalize(&rotation)
        } else {
            rotation
        };
        Ok(Self {
            rotation,
            translation,
        })
    }

    pub fn from_translation(t: Vector3<f64>) -> Self {
        Self {
            rotation: Matrix3::identity(),
            translation: t,
        }
    }

    /// Rotation by `angle` radians about +z, followed by `t`.
    pub fn from_yaw(angle: f64, t: Vector3<f64>) -> Self {
        let (s, c) = angle.sin_cos();
        Self {
            rotation: Matrix3::new(c, -s, 0.0, s, c, 0.0, 0.0, 0.0, 1.0),
            translation: t,
        }
    }

    /// Parses the KITTI row-major 3×4 layout `r00 r01 r02 t0 r10 … t2`.
    pub fn from_row_major_3x4(v: &[f64; 12]) -> Result<Self> {
        let rotation = Matrix3::new(v[0], v[1], v[2], v[4], v[5], v[6], v[8], v[9], v[10]);
        Self::new(rotation, Vector3::new(v[3], v[7], v[11]))
    }

    pub fn to_row_major_3x4(&self) -> [f64; 12] {
        let r = &self.rotation;
        let t = &self.translation;
        [
            r[(0, 0)],
            r[(0, 1)],
            r[(0, 2)],
            t[0],
            r[(1, 0)],
            r[(1, 1)],
            r[(1, 2)],
            t[1],
            r[(2, 0)],
            r[(2, 1)],
            r[(2, 2)],
            t[2],
        ]
    }

    pub fn rotation(&self) -> &Matrix3<f64> {
        &self.rotation
    }

    pub fn translation(&self) -> &Vector3<f64> {
        &self.translation
    }

    pub fn apply(&self, p: &Vector3<f64>) -> Vector3<f64> {
        self.rotation * p + self.translation
    }

    pub fn inverse(&self) -> Self {
        let rt = self.rotation.transpose();
        Self {
            rotation: rt,
            translation: -(rt * self.translation),
        }
    }

    /// `self ∘ other`: applies `other` first, then `self`.
    pub fn compose(&self, other: &RigidTransform) -> Self {
        let mut rotation = self.rotation * other.rotation;
        if ortho_drift(&rotation) > ORTHO_TOL {
            rotation = orthonormalize(&rotation);
        }
        Self {
            rotation,
            translation: self.rotation * other.translation + self.translation,
        }
    }
}

/// Free-function form of [`RigidTransform::compose`].
pub fn compose(a: &RigidTransform, b: &RigidTransform) -> RigidTransform {
    a.compose(b)
}

fn ortho_drift(r: &Matrix3<f64>) -> f64 {
    (r.transpose() * r - Matrix3::identity()).amax()
}

// Gram-Schmidt on the rows, third row rebuilt from the cross product.
fn orthonormalize(r: &Matrix3<f64>) -> Matrix3<f64> {
    let x = r.row(0).transpose().normalize();
    let y0 = r.row(1).transpose();
    let y = (y0 - x * x.dot(&y0)).normalize();
    let z = x.cross(&y);
    Matrix3::from_rows(&[x.transpose(), y.transpose(), z.transpose()])
}

/// Pinhole camera: `intrinsics` is the 3×4 projection applied to camera-frame homogeneous points.
#[derive(Debug, Clone, PartialEq)]
pub struct CameraModel {
    intrinsics: Matrix3x4<f64>,
    cam_from_lidar: RigidTransform,
    width: u32,
    height: u32,
}

impl CameraModel {
    pub fn new(
        intrinsics: Matrix3x4<f64>,
        cam_from_lidar: RigidTransform,
        width: u32,
        height: u32,
    ) -> Result<Self> {
        if width == 0 || height == 0 {
            return Err(Error::DegenerateInput("image size must be positive".into()));
        }
        if !(intrinsics[(0, 0)] > 0.0 && intrinsics[(1, 1)] > 0.0) {
            return Err(Error::DegenerateInput(
                "focal lengths must be positive".into(),
            ));
        }
        Ok(Self {
            intrinsics,
            cam_from_lidar,
            width,
            height,
        })
    }

    /// Convenience constructor from focal lengths and principal point.
    pub fn pinhole(
        fx: f64,
        fy: f64,
        cx: f64,
        cy: f64,
        cam_from_lidar: RigidTransform,
        width: u32,
        height: u32,
    ) -> Result<Self> {
        #[rustfmt::skip]
        let k = Matrix3x4::new(
            fx, 0.0, cx, 0.0,
            0.0, fy, cy, 0.0,
            0.0, 0.0, 1.0, 0.0,
        );
        Self::new(k, cam_from_lidar, width, height)
    }

    pub fn intrinsics(&self) -> &Matrix3x4<f64> {
        &self.intrinsics
    }

    pub fn cam_from_lidar(&self) -> &RigidTransform {
        &self.cam_from_lidar
    }

    pub fn image_size(&self) -> (u32, u32) {
        (self.width, self.height)
    }

    /// Projects a Lidar-frame point; `None` when behind the camera or outside the image.
    pub fn project(&self, p: &Vector3<f64>) -> Option<(f64, f64)> {
        let pc = self.cam_from_lidar.apply(p);
        if pc.z <= 0.0 {
            return None;
        }
        let h = self.intrinsics * Vector4::new(pc.x, pc.y, pc.z, 1.0);
        if h.z <= 0.0 {
            return None;
        }
        let u = h.x / h.z;
        let v = h.y / h.z;
        if u >= 0.0 && v >= 0.0 && u < self.width as f64 && v < self.height as f64 {
            Some((u, v))
        } else {
            None
        }
    }
}

/// A projected point: `(point_index, u, v)` in pixel units.
pub type Projection = (usize, f64, f64);

/// Projects every point of `cloud`, keeping those in front of the camera and inside the image.
pub fn project_points(cloud: &PointCloud, cam: &CameraModel) -> Vec<Projection> {
    cloud
        .iter_xyz()
        .enumerate()
        .filter_map(|(i, p)| cam.project(&p).map(|(u, v)| (i, u, v)))
        .collect()
}

/// One Lidar sweep: `(x, y, z, intensity)` rows.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct PointCloud {
    points: Vec<[f32; 4]>,
}

impl PointCloud {
    pub fn new(points: Vec<[f32; 4]>) -> Result<Self> {
        if let Some(i) = points.iter().position(|p| !p.iter().all(|v| v.is_finite())) {
            return Err(Error::DegenerateInput(format!(
                "point {i} has a non-finite coordinate"
            )));
        }
        Ok(Self { points })
    }

    /// Builds a cloud from xyz positions with zero intensity.
    pub fn from_xyz(xyz: &[Vector3<f64>]) -> Result<Self> {
        Self::new(
            xyz.iter()
                .map(|p| [p.x as f32, p.y as f32, p.z as f32, 0.0])
                .collect(),
        )
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn rows(&self) -> &[[f32; 4]] {
        &self.points
    }

    pub fn xyz(&self, i: usize) -> Vector3<f64> {
        let p = &self.points[i];
        Vector3::new(p[0] as f64, p[1] as f64, p[2] as f64)
    }

    pub fn iter_xyz(&self) -> impl Iterator<Item = Vector3<f64>> + '_ {
        self.points
            .iter()
            .map(|p| Vector3::new(p[0] as f64, p[1] as f64, p[2] as f64))
    }
}

/// Integer cell coordinate `(x, y, z)` inside a [`VoxelGridSpec`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct VoxelIndex(pub [u32; 3]);

impl VoxelIndex {
    pub fn new(x: u32, y: u32, z: u32) -> Self {
        Self([x, y, z])
    }

    pub fn x(&self) -> u32 {
        self.0[0]
    }

    pub fn y(&self) -> u32 {
        self.0[1]
    }

    pub fn z(&self) -> u32 {
        self.0[2]
    }
}

/// Axis-aligned regular grid with half-open cells `[origin + i·s, origin + (i+1)·s)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct VoxelGridSpec {
    pub origin: [f64; 3],
    pub voxel_size: f64,
    pub dims: [u32; 3],
}

impl VoxelGridSpec {
    pub fn new(origin: [f64; 3], voxel_size: f64, dims: [u32; 3]) -> Result<Self> {
        let spec = Self {
            origin,
            voxel_size,
            dims,
        };
        spec.validate()?;
        Ok(spec)
    }

    /// The 51.2 × 51.2 × 6.4 m volume in front of the sensor at 0.2 m resolution.
    pub fn benchmark() -> Self {
        Self {
            origin: [0.0, -25.6, -2.0],
            voxel_size: 0.2,
            dims: [256, 256, 32],
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.voxel_size > 0.0 && self.voxel_size.is_finite()) {
            return Err(Error::Config("voxel_size must be positive".into()));
        }
        if self.dims.iter().any(|&d| d == 0) {
            return Err(Error::Config("grid dims must be positive".into()));
        }
        if !self.origin.iter().all(|v| v.is_finite()) {
            return Err(Error::Config("grid origin must be finite".into()));
        }
        Ok(())
    }

    pub fn extent(&self) -> [f64; 3] {
        self.dims.map(|d| d as f64 * self.voxel_size)
    }

    pub fn cell_count(&self) -> usize {
        self.dims.iter().map(|&d| d as usize).product()
    }

    pub fn contains(&self, idx: VoxelIndex) -> bool {
        idx.0.iter().zip(&self.dims).all(|(i, d)| i < d)
    }

    /// `floor((p − origin) / voxel_size)` when it lands inside the grid.
    pub fn voxel_index(&self, p: &Vector3<f64>) -> Option<VoxelIndex> {
        let mut idx = [0u32; 3];
        for a in 0..3 {
            let f = ((p[a] - self.origin[a]) / self.voxel_size).floor();
            if !(f >= 0.0 && f < self.dims[a] as f64) {
                return None;
            }
            idx[a] = f as u32;
        }
        Some(VoxelIndex(idx))
    }

    pub fn voxel_center(&self, idx: VoxelIndex) -> Vector3<f64> {
        Vector3::from_fn(|a, _| self.origin[a] + (idx.0[a] as f64 + 0.5) * self.voxel_size)
    }

    /// Row-major x-fastest linear index.
    pub fn linear(&self, idx: VoxelIndex) -> usize {
        let [dx, dy, _] = self.dims.map(|d| d as usize);
        idx.0[0] as usize + dx * (idx.0[1] as usize + dy * idx.0[2] as usize)
    }

    pub fn unlinear(&self, lin: usize) -> VoxelIndex {
        let [dx, dy, _] = self.dims.map(|d| d as usize);
        VoxelIndex([
            (lin % dx) as u32,
            ((lin / dx) % dy) as u32,
            (lin / (dx * dy)) as u32,
        ])
    }
}

/// Free-function form of [`VoxelGridSpec::voxel_index`].
pub fn voxel_index(p: &Vector3<f64>, spec: &VoxelGridSpec) -> Option<VoxelIndex> {
    spec.voxel_index(p)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use proptest::prelude::*;
    use std::f64::consts::FRAC_PI_2;

    fn rand_transform(yaw: f64, pitch: f64, roll: f64, t: [f64; 3]) -> RigidTransform {
        let r = nalgebra::Rotation3::from_euler_angles(roll, pitch, yaw);
        RigidTransform::new(*r.matrix(), Vector3::from(t)).unwrap()
    }

    #[test]
    fn compose_with_identity() {
        let t = rand_transform(0.3, -0.2, 0.9, [1.0, 2.0, 3.0]);
        let c = compose(&RigidTransform::identity(), &t);
        assert_relative_eq!(c.rotation(), t.rotation(), epsilon = 1e-12);
        assert_relative_eq!(c.translation(), t.translation(), epsilon = 1e-12);
    }

    #[test]
    fn compose_with_inverse_is_identity() {
        let t = rand_transform(1.3, 0.4, -0.7, [5.0, -2.0, 0.5]);
        let c = compose(&t, &t.inverse());
        assert!((c.rotation() - Matrix3::identity()).amax() < 1e-9);
        assert!(c.translation().amax() < 1e-9);
    }

    #[test]
    fn two_quarter_turns_flip_x() {
        let q = RigidTransform::from_yaw(FRAC_PI_2, Vector3::zeros());
        let p = compose(&q, &q).apply(&Vector3::new(1.0, 0.0, 0.0));
        assert_relative_eq!(p, Vector3::new(-1.0, 0.0, 0.0), epsilon = 1e-12);
    }

    #[test]
    fn kitti_identity_pose_line() {
        let t = RigidTransform::from_row_major_3x4(&[
            1.0, 0.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 0.0, 1.0, 0.0,
        ])
        .unwrap();
        assert_eq!(t, RigidTransform::identity());
    }

    #[test]
    fn rejects_reflection() {
        let r = Matrix3::from_diagonal(&Vector3::new(1.0, 1.0, -1.0));
        assert!(RigidTransform::new(r, Vector3::zeros()).is_err());
    }

    // Camera looking down +x of the Lidar frame (KITTI convention: cam z = lidar x).
    fn forward_camera() -> CameraModel {
        let r = Matrix3::new(0.0, -1.0, 0.0, 0.0, 0.0, -1.0, 1.0, 0.0, 0.0);
        let ext = RigidTransform::new(r, Vector3::zeros()).unwrap();
        CameraModel::pinhole(500.0, 400.0, 320.0, 120.0, ext, 640, 240).unwrap()
    }

    #[test]
    fn optical_axis_hits_principal_point() {
        let cam = forward_camera();
        let (u, v) = cam.project(&Vector3::new(7.0, 0.0, 0.0)).unwrap();
        assert_relative_eq!(u, 320.0);
        assert_relative_eq!(v, 120.0);
    }

    #[test]
    fn behind_camera_excluded() {
        let cam = forward_camera();
        let cloud = PointCloud::from_xyz(&[
            Vector3::new(-3.0, 0.0, 0.0),
            Vector3::new(0.0, 1.0, 0.0),
            Vector3::new(3.0, 0.0, 0.0),
        ])
        .unwrap();
        let proj = project_points(&cloud, &cam);
        assert_eq!(proj.len(), 1);
        assert_eq!(proj[0].0, 2);
    }

    #[test]
    fn projection_matches_hand_arithmetic() {
        let cam = forward_camera();
        // camera frame (x_c, y_c, z_c) = (-y, -z, x)
        let pts = [
            Vector3::new(10.0, -2.0, 1.0),
            Vector3::new(4.0, 1.0, -0.5),
            Vector3::new(20.0, 3.0, 2.0),
        ];
        let cloud = PointCloud::from_xyz(&pts).unwrap();
        let proj = project_points(&cloud, &cam);
        let expected = [
            (500.0 * 2.0 / 10.0 + 320.0, 400.0 * -1.0 / 10.0 + 120.0),
            (500.0 * -1.0 / 4.0 + 320.0, 400.0 * 0.5 / 4.0 + 120.0),
            (500.0 * -3.0 / 20.0 + 320.0, 400.0 * -2.0 / 20.0 + 120.0),
        ];
        assert_eq!(proj.len(), 3);
        for ((_, u, v), (eu, ev)) in proj.iter().zip(expected) {
            assert_relative_eq!(*u, eu, epsilon = 1e-4);
            assert_relative_eq!(*v, ev, epsilon = 1e-4);
        }
    }

    #[test]
    fn voxel_index_anchors() {
        let spec = VoxelGridSpec::benchmark();
        let o = Vector3::from(spec.origin);
        assert_eq!(spec.voxel_index(&o), Some(VoxelIndex::new(0, 0, 0)));
        assert_eq!(spec.voxel_index(&(o + Vector3::new(51.2, 51.2, 6.4))), None);
        assert_eq!(
            spec.voxel_index(&Vector3::new(10.05, 0.0, 0.0)),
            Some(VoxelIndex::new(50, 128, 10))
        );
        assert_eq!(spec.voxel_index(&Vector3::new(-0.01, 0.0, 0.0)), None);
    }

    #[test]
    fn linear_is_x_fastest() {
        let spec = VoxelGridSpec::new([0.0; 3], 1.0, [4, 3, 2]).unwrap();
        assert_eq!(spec.linear(VoxelIndex::new(1, 0, 0)), 1);
        assert_eq!(spec.linear(VoxelIndex::new(0, 1, 0)), 4);
        assert_eq!(spec.linear(VoxelIndex::new(0, 0, 1)), 12);
        for lin in 0..spec.cell_count() {
            assert_eq!(spec.linear(spec.unlinear(lin)), lin);
        }
    }

    proptest! {
        #[test]
        fn center_round_trip(x in 0u32..256, y in 0u32..256, z in 0u32..32) {
            let spec = VoxelGridSpec::benchmark();
            let i = VoxelIndex::new(x, y, z);
            prop_assert_eq!(spec.voxel_index(&spec.voxel_center(i)), Some(i));
        }

        #[test]
        fn compose_is_sequential_application(
            a in prop::array::uniform3(-3.0f64..3.0),
            b in prop::array::uniform3(-3.0f64..3.0),
            ta in prop::array::uniform3(-10.0f64..10.0),
            tb in prop::array::uniform3(-10.0f64..10.0),
            p in prop::array::uniform3(-50.0f64..50.0),
        ) {
            let ta_ = rand_transform(a[0], a[1], a[2], ta);
            let tb_ = rand_transform(b[0], b[1], b[2], tb);
            let p = Vector3::from(p);
            let lhs = compose(&ta_, &tb_).apply(&p);
            let rhs = ta_.apply(&tb_.apply(&p));
            prop_assert!((lhs - rhs).amax() < 1e-9);
        }

        #[test]
        fn projection_is_order_free(seed in 0u64..1000) {
            use rand::{Rng, SeedableRng};
            let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
            let pts: Vec<_> = (0..40)
                .map(|_| Vector3::new(rng.gen_range(-5.0..30.0), rng.gen_range(-10.0..10.0), rng.gen_range(-3.0..3.0)))
                .collect();
            let cam = forward_camera();
            let fwd = project_points(&PointCloud::from_xyz(&pts).unwrap(), &cam);
            let rev: Vec<_> = pts.iter().rev().cloned().collect();
            let bwd = project_points(&PointCloud::from_xyz(&rev).unwrap(), &cam);
            let n = pts.len();
            let mut a: Vec<_> = fwd.iter().map(|&(i, u, v)| (i, u.to_bits(), v.to_bits())).collect();
            let mut b: Vec<_> = bwd.iter().map(|&(i, u, v)| (n - 1 - i, u.to_bits(), v.to_bits())).collect();
            a.sort();
            b.sort();
            prop_assert_eq!(a, b);
        }
    }
}
