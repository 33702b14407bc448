//! Ray-cast synthetic driving sequences with exact masklets, tracks and ground truth.
//!
//! The ego vehicle drives along +x over a flat ground plane past a few static
//! boxes while one box drives towards it. A 64-beam spinning Lidar and a forward
//! camera share the sensor origin. Rasters carry one ID per object (the ground
//! is ID 1) and every visible object gets a noisy copy of its class prototype as
//! its per-frame feature.

use std::collections::{BTreeMap, BTreeSet};
use std::path::{Path, PathBuf};

use nalgebra::{Matrix3, Vector3};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::bbox::OrientedBox;
use crate::config::DatasetProfile;
use crate::error::Result;
use crate::geom::{CameraModel, PointCloud, RigidTransform, VoxelGridSpec, VoxelIndex};
use crate::io::{
    write_features, write_gt_grid, write_poses, write_raster, write_scan, write_tracks, write_vocabulary,
    Calibration, Frame, GroundTruthGrid, MaskletFrame, SequenceManifest,
};
use crate::label::{FrameSource, TrackBox};
use crate::semantics::{ClassKind, ClassVocabulary, VocabClass, FEATURE_DIM};

/// Ground height in sensor coordinates.
pub const GROUND_Z: f64 = -1.73;

#[derive(Debug, Clone, PartialEq)]
pub struct SceneConfig {
    pub frames: usize,
    pub seed: u64,
    /// Ego speed in meters per frame.
    pub speed: f64,
    pub beams: usize,
    pub azimuth_steps: usize,
    pub image_size: (u32, u32),
    pub focal: f64,
    /// Per-component standard deviation of the feature noise.
    pub feature_noise: f64,
    /// Range noise standard deviation in meters.
    pub range_noise: f64,
    pub max_range: f64,
}

impl Default for SceneConfig {
    fn default() -> Self {
        Self {
            frames: 96,
            seed: 7,
            speed: 0.5,
            beams: 64,
            azimuth_steps: 1024,
            image_size: (480, 144),
            focal: 240.0,
            feature_noise: 0.02,
            range_noise: 0.005,
            max_range: 80.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SceneObject {
    /// Masklet ID; also the ground-truth instance ID.
    pub id: u32,
    pub class: String,
    /// Box in world coordinates at frame 0.
    pub shape: OrientedBox,
    /// World velocity in meters per frame.
    pub velocity: [f64; 3],
}

impl SceneObject {
    pub fn is_dynamic(&self) -> bool {
        self.velocity.iter().any(|v| *v != 0.0)
    }

    pub fn box_at(&self, frame: usize) -> OrientedBox {
        let mut b = self.shape;
        for a in 0..3 {
            b.center[a] += self.velocity[a] * frame as f64;
        }
        b
    }
}

/// ID painted on ground pixels.
pub const GROUND_ID: u32 = 1;

#[derive(Debug, Clone)]
pub struct SyntheticScene {
    pub config: SceneConfig,
    pub objects: Vec<SceneObject>,
    /// World-from-sensor per frame.
    pub poses: Vec<RigidTransform>,
    pub camera: CameraModel,
    pub vocab: ClassVocabulary,
    /// Class name → unit prototype feature.
    pub prototypes: BTreeMap<String, Vec<f32>>,
    tracks: Vec<Vec<TrackBox>>,
}

fn lidar_to_camera() -> RigidTransform {
    // camera x = −lidar y, camera y = −lidar z, camera z = lidar x
    let r = Matrix3::new(0.0, -1.0, 0.0, 0.0, 0.0, -1.0, 1.0, 0.0, 0.0);
    RigidTransform::new(r, Vector3::zeros()).expect("permutation matrix is a rotation")
}

fn unit_gaussian(rng: &mut ChaCha8Rng, dim: usize) -> Vec<f32> {
    let n = Normal::new(0.0, 1.0).expect("valid normal");
    let v: Vec<f64> = (0..dim).map(|_| n.sample(rng)).collect();
    let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    v.iter().map(|x| (x / norm) as f32).collect()
}

fn perturb(rng: &mut ChaCha8Rng, v: &[f32], sigma: f64) -> Vec<f32> {
    let n = Normal::new(0.0, sigma.max(1e-12)).expect("valid normal");
    v.iter().map(|&x| (x as f64 + n.sample(rng)) as f32).collect()
}

/// Slab test; distance along the unit ray to the first hit in front of the origin.
fn ray_box(o: &Vector3<f64>, d: &Vector3<f64>, b: &OrientedBox) -> Option<f64> {
    let (s, c) = b.yaw.sin_cos();
    let rel = o - Vector3::from(b.center);
    let lo = Vector3::new(c * rel.x + s * rel.y, -s * rel.x + c * rel.y, rel.z);
    let ld = Vector3::new(c * d.x + s * d.y, -s * d.x + c * d.y, d.z);
    let (mut t0, mut t1) = (f64::NEG_INFINITY, f64::INFINITY);
    for a in 0..3 {
        let h = b.size[a] / 2.0;
        if ld[a].abs() < 1e-15 {
            if lo[a].abs() > h {
                return None;
            }
            continue;
        }
        let (ta, tb) = ((-h - lo[a]) / ld[a], (h - lo[a]) / ld[a]);
        t0 = t0.max(ta.min(tb));
        t1 = t1.min(ta.max(tb));
    }
    (t0 <= t1 && t0 > 1e-9).then_some(t0)
}

fn grown(b: &OrientedBox, by: f64) -> OrientedBox {
    OrientedBox { size: b.size.map(|s| s + by), ..*b }
}

impl SyntheticScene {
    /// The standard scene: a car, a truck and a pole beside the road, and an
    /// oncoming car in the opposite lane.
    pub fn generate(config: SceneConfig) -> Result<Self> {
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let classes = [
            ("road", ClassKind::Stuff),
            ("car", ClassKind::Thing),
            ("truck", ClassKind::Thing),
            ("pole", ClassKind::Thing),
        ];
        let mut prototypes = BTreeMap::new();
        let mut vocab_classes = Vec::new();
        for (i, (name, kind)) in classes.iter().enumerate() {
            let proto = unit_gaussian(&mut rng, FEATURE_DIM);
            let prompts = (0..2).map(|_| perturb(&mut rng, &proto, 0.01)).collect();
            vocab_classes.push(VocabClass {
                name: name.to_string(),
                kind: *kind,
                code: i as u16 + 1,
                prompts,
            });
            prototypes.insert(name.to_string(), proto);
        }
        let vocab = ClassVocabulary::new(vocab_classes)?;

        let ground = |h: f64| GROUND_Z + h / 2.0;
        let objects = vec![
            SceneObject {
                id: 2,
                class: "car".into(),
                shape: OrientedBox { center: [22.0, 5.0, ground(1.5)], size: [4.2, 1.8, 1.5], yaw: 0.3 },
                velocity: [0.0; 3],
            },
            SceneObject {
                id: 3,
                class: "truck".into(),
                shape: OrientedBox { center: [30.0, -7.0, ground(2.8)], size: [6.0, 2.5, 2.8], yaw: -0.1 },
                velocity: [0.0; 3],
            },
            SceneObject {
                id: 4,
                class: "pole".into(),
                shape: OrientedBox { center: [38.0, 4.5, ground(3.0)], size: [0.6, 0.6, 3.0], yaw: 0.0 },
                velocity: [0.0; 3],
            },
            SceneObject {
                id: 5,
                class: "car".into(),
                shape: OrientedBox { center: [60.0, -3.5, ground(1.5)], size: [4.4, 1.9, 1.5], yaw: 0.0 },
                velocity: [-0.4, 0.0, 0.0],
            },
        ];

        let poses = (0..config.frames)
            .map(|t| {
                let x = config.speed * t as f64;
                let yaw = 0.02 * (t as f64 / 10.0).sin();
                RigidTransform::from_yaw(yaw, Vector3::new(x, 0.1 * (t as f64 / 15.0).sin(), 0.0))
            })
            .collect::<Vec<_>>();
        let (w, h) = config.image_size;
        let camera = CameraModel::pinhole(
            config.focal,
            config.focal,
            w as f64 / 2.0,
            h as f64 / 2.0,
            lidar_to_camera(),
            w,
            h,
        )?;
        let tracks = (0..config.frames)
            .map(|t| {
                let inv = poses[t].inverse();
                objects
                    .iter()
                    .filter(|o| o.is_dynamic())
                    .map(|o| {
                        let b = o.box_at(t);
                        let c = inv.apply(&Vector3::from(b.center));
                        let yaw = b.yaw - poses[t].rotation()[(1, 0)].atan2(poses[t].rotation()[(0, 0)]);
                        TrackBox { frame_index: t, center: [c.x, c.y, c.z], size: b.size, yaw }
                    })
                    .collect()
            })
            .collect();
        Ok(Self { config, objects, poses, camera, vocab, prototypes, tracks })
    }

    pub fn object(&self, id: u32) -> Option<&SceneObject> {
        self.objects.iter().find(|o| o.id == id)
    }

    /// First hit along a world ray: `(distance, id)` with ground as [`GROUND_ID`].
    fn cast(&self, frame: usize, o: &Vector3<f64>, d: &Vector3<f64>) -> Option<(f64, u32)> {
        let mut best: Option<(f64, u32)> = None;
        if d.z < -1e-12 {
            let t = (GROUND_Z - o.z) / d.z;
            if t > 0.0 {
                best = Some((t, GROUND_ID));
            }
        }
        for obj in &self.objects {
            if let Some(t) = ray_box(o, d, &obj.box_at(frame)) {
                if best.is_none_or(|(b, _)| t < b) {
                    best = Some((t, obj.id));
                }
            }
        }
        best.filter(|(t, _)| *t <= self.config.max_range)
    }

    /// Lidar scan of a frame in sensor coordinates.
    pub fn scan(&self, frame: usize) -> PointCloud {
        let c = &self.config;
        let pose = &self.poses[frame];
        let origin = pose.apply(&Vector3::zeros());
        let mut rng = ChaCha8Rng::seed_from_u64(c.seed ^ (0x5eed_0000 + frame as u64));
        let noise = Normal::new(0.0, c.range_noise.max(1e-12)).expect("valid normal");
        let mut rows = Vec::new();
        for b in 0..c.beams {
            let elev = (2.0 - 26.8 * b as f64 / (c.beams - 1).max(1) as f64).to_radians();
            for a in 0..c.azimuth_steps {
                let az = std::f64::consts::TAU * a as f64 / c.azimuth_steps as f64;
                let local = Vector3::new(elev.cos() * az.cos(), elev.cos() * az.sin(), elev.sin());
                let dir = pose.rotation() * local;
                if let Some((t, _)) = self.cast(frame, &origin, &dir) {
                    let r = t + noise.sample(&mut rng);
                    let p = local * r;
                    rows.push([p.x as f32, p.y as f32, p.z as f32, 0.5]);
                }
            }
        }
        PointCloud::new(rows).expect("ray-cast points are finite")
    }

    /// Camera raster and per-instance features of a frame.
    pub fn masklet(&self, frame: usize) -> MaskletFrame {
        let (w, h) = self.config.image_size;
        let pose = &self.poses[frame];
        let origin = pose.apply(&Vector3::zeros());
        let lidar_from_cam = lidar_to_camera().inverse();
        let (f, cx, cy) = (self.config.focal, w as f64 / 2.0, h as f64 / 2.0);
        let mut ids = vec![0u32; (w * h) as usize];
        for v in 0..h {
            for u in 0..w {
                let ray_c = Vector3::new((u as f64 + 0.5 - cx) / f, (v as f64 + 0.5 - cy) / f, 1.0).normalize();
                let dir = pose.rotation() * (lidar_from_cam.rotation() * ray_c);
                if let Some((_, id)) = self.cast(frame, &origin, &dir) {
                    ids[(v * w + u) as usize] = id;
                }
            }
        }
        let mut m = MaskletFrame::new(frame, w, h, ids).expect("raster matches its size");
        let visible: BTreeSet<u32> = m.ids.iter().copied().filter(|&i| i != 0).collect();
        for id in visible {
            let class = if id == GROUND_ID { "road" } else { &self.object(id).expect("known id").class };
            let mut rng = ChaCha8Rng::seed_from_u64(self.config.seed ^ ((frame as u64) << 20) ^ id as u64);
            let feat = perturb(&mut rng, &self.prototypes[class], self.config.feature_noise);
            m.features.insert(id, crate::io::normalized(&feat).expect("nonzero feature"));
        }
        m
    }

    pub fn frame_data(&self, frame: usize) -> Frame {
        Frame {
            index: frame,
            cloud: self.scan(frame),
            pose: self.poses[frame],
            masklet: Some(self.masklet(frame)),
        }
    }

    /// Maps a point in the reference sensor frame to world coordinates.
    fn reference_to_world(&self, reference: usize) -> impl Fn(&Vector3<f64>) -> Vector3<f64> + '_ {
        move |p| self.poses[reference].apply(p)
    }

    /// Dense labels at the reference frame: cells touching a box take its class
    /// and ID, cells holding the ground plane are road.
    pub fn ground_truth(&self, reference: usize, spec: &VoxelGridSpec, shift: [f64; 3]) -> GroundTruthGrid {
        let mut gt = GroundTruthGrid::empty(*spec);
        let to_world = self.reference_to_world(reference);
        let s = Vector3::from(shift);
        for i in 0..spec.cell_count() {
            let v = spec.unlinear(i);
            let c_ref = spec.voxel_center(v) - s;
            let c = to_world(&c_ref);
            let hit = self
                .objects
                .iter()
                .find(|o| grown(&o.box_at(reference), spec.voxel_size).contains(&c));
            if let Some(o) = hit {
                let code = self.vocab.classes().iter().find(|k| k.name == o.class).map_or(0, |k| k.code);
                gt.set(v, code, o.id as u16);
            } else if (c.z - GROUND_Z).abs() <= spec.voxel_size / 2.0 {
                gt.set(v, 1, 0);
            }
        }
        gt
    }

    /// Cells touching the object's box at the reference frame (centers inside the
    /// box grown by half a voxel per side), excluding the ground layer.
    pub fn box_voxels(&self, id: u32, reference: usize, spec: &VoxelGridSpec, shift: [f64; 3]) -> BTreeSet<VoxelIndex> {
        let Some(obj) = self.object(id) else {
            return BTreeSet::new();
        };
        let b = grown(&obj.box_at(reference), spec.voxel_size);
        let to_world = self.reference_to_world(reference);
        let s = Vector3::from(shift);
        (0..spec.cell_count())
            .map(|i| spec.unlinear(i))
            .filter(|&v| {
                let c = to_world(&(spec.voxel_center(v) - s));
                c.z > GROUND_Z + spec.voxel_size && b.contains(&c)
            })
            .collect()
    }

    /// Writes the full sequence under `dir` and returns the manifest path.
    ///
    /// Layout: `velodyne/`, `masklets/`, `features/`, `poses.txt`, `calib.txt`,
    /// `tracks.jsonl`, `vocab/` and `manifest.toml`.
    pub fn write(&self, dir: &Path, profile: DatasetProfile) -> Result<PathBuf> {
        let mut scans = Vec::new();
        for t in 0..self.config.frames {
            let scan = PathBuf::from(format!("velodyne/{t:06}.bin"));
            write_scan(&dir.join(&scan), &self.scan(t))?;
            scans.push(scan);
            let m = self.masklet(t);
            write_raster(&dir.join(format!("masklets/{t:06}.idm")), m.width, m.height, &m.ids)?;
            write_features(
                &dir.join(format!("features/{t:06}.fvec")),
                &dir.join(format!("features/{t:06}.ids")),
                &m.features,
            )?;
        }
        write_poses(&dir.join("poses.txt"), &self.poses)?;
        let mut calib = Calibration::default();
        calib
            .entries
            .insert("P2".into(), self.camera.intrinsics().transpose().iter().copied().collect());
        calib
            .entries
            .insert("Tr".into(), self.camera.cam_from_lidar().to_row_major_3x4().to_vec());
        calib.write(&dir.join("calib.txt"))?;
        let all_tracks: Vec<TrackBox> = self.tracks.iter().flatten().copied().collect();
        write_tracks(&dir.join("tracks.jsonl"), &all_tracks)?;
        write_vocabulary(&dir.join("vocab"), &self.vocab)?;
        let manifest = SequenceManifest {
            dataset_profile: profile,
            scan_paths: scans,
            pose_path: "poses.txt".into(),
            calib_path: "calib.txt".into(),
            masklet_dir: "masklets".into(),
            feature_dir: "features".into(),
            image_size: [self.config.image_size.0, self.config.image_size.1],
            projection_key: "P2".into(),
            lidar_to_camera_key: "Tr".into(),
            tracks_path: Some("tracks.jsonl".into()),
            alignment_shift: None,
            grid_spec: None,
        };
        let path = dir.join("manifest.toml");
        manifest.write(&path)?;
        Ok(path)
    }

    /// Writes the reference-frame ground truth as a CALG file.
    pub fn write_ground_truth(&self, path: &Path, reference: usize, spec: &VoxelGridSpec, shift: [f64; 3]) -> Result<()> {
        write_gt_grid(path, &self.ground_truth(reference, spec, shift))
    }
}

impl FrameSource for SyntheticScene {
    fn len(&self) -> usize {
        self.config.frames
    }

    fn frame(&self, index: usize) -> Result<Frame> {
        Ok(self.frame_data(index))
    }

    fn camera(&self) -> &CameraModel {
        &self.camera
    }

    fn tracks(&self, index: usize) -> &[TrackBox] {
        self.tracks.get(index).map_or(&[], |v| v.as_slice())
    }

    fn scan(&self, index: usize) -> Result<(PointCloud, RigidTransform)> {
        Ok((SyntheticScene::scan(self, index), self.poses[index]))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small() -> SyntheticScene {
        SyntheticScene::generate(SceneConfig {
            frames: 4,
            beams: 16,
            azimuth_steps: 256,
            image_size: (96, 32),
            focal: 48.0,
            ..SceneConfig::default()
        })
        .unwrap()
    }

    #[test]
    fn ray_hits_box_face() {
        let b = OrientedBox { center: [10.0, 0.0, 0.0], size: [2.0; 3], yaw: 0.0 };
        let t = ray_box(&Vector3::zeros(), &Vector3::x(), &b).unwrap();
        assert!((t - 9.0).abs() < 1e-12);
        assert!(ray_box(&Vector3::zeros(), &-Vector3::x(), &b).is_none());
    }

    #[test]
    fn ground_points_lie_on_the_plane() {
        let s = small();
        let scan = s.scan(0);
        assert!(!scan.is_empty());
        let low = scan.iter_xyz().filter(|p| (p.z - GROUND_Z).abs() < 0.05).count();
        assert!(low > scan.len() / 2);
    }

    #[test]
    fn raster_sees_ground_and_features_are_unit() {
        let s = small();
        let m = s.masklet(0);
        assert!(m.ids.contains(&GROUND_ID));
        for f in m.features.values() {
            let n: f64 = f.iter().map(|&x| x as f64 * x as f64).sum::<f64>().sqrt();
            assert!((n - 1.0).abs() < 1e-5);
        }
    }

    #[test]
    fn generation_is_deterministic() {
        let (a, b) = (small(), small());
        assert_eq!(a.scan(2), b.scan(2));
        assert_eq!(a.masklet(2), b.masklet(2));
    }

    #[test]
    fn tracks_follow_the_moving_object() {
        let s = small();
        let t = FrameSource::tracks(&s, 3);
        assert_eq!(t.len(), 1);
        let world = s.poses[3].apply(&Vector3::from(t[0].center));
        let truth = s.object(5).unwrap().box_at(3).center;
        assert!((world - Vector3::from(truth)).norm() < 1e-9);
    }
}
