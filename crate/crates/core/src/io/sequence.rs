//! Sequence manifests and lazy per-frame loading.
//!
//! A manifest is a TOML file; relative paths resolve against its directory.
//!
//! ```toml
//! dataset_profile = "semantic_kitti"        # or "kitti360", "custom"
//! scan_paths = ["velodyne/000000.bin", "velodyne/000001.bin"]
//! pose_path = "poses.txt"
//! calib_path = "calib.txt"
//! masklet_dir = "masklets"                  # <frame:06>.idm
//! feature_dir = "features"                  # <frame:06>.fvec + <frame:06>.ids
//! image_size = [1241, 376]
//! # optional
//! projection_key = "P2"
//! lidar_to_camera_key = "Tr"
//! tracks_path = "tracks.jsonl"
//! alignment_shift = [0.0, 0.0, 0.0]
//! [grid_spec]
//! origin = [0.0, -25.6, -2.0]
//! voxel_size = 0.2
//! dims = [256, 256, 32]
//! ```

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::bytes::write_file;
use super::kitti::{read_poses, read_scan, Calibration};
use super::masklet::{read_features, read_raster, MaskletFrame};
use crate::config::DatasetProfile;
use crate::error::{Error, Result};
use crate::geom::{CameraModel, PointCloud, RigidTransform, VoxelGridSpec};
use crate::label::TrackBox;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SequenceManifest {
    pub dataset_profile: DatasetProfile,
    pub scan_paths: Vec<PathBuf>,
    pub pose_path: PathBuf,
    pub calib_path: PathBuf,
    pub masklet_dir: PathBuf,
    pub feature_dir: PathBuf,
    pub image_size: [u32; 2],
    #[serde(default = "default_projection_key")]
    pub projection_key: String,
    #[serde(default = "default_lidar_to_camera_key")]
    pub lidar_to_camera_key: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tracks_path: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub alignment_shift: Option<[f64; 3]>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub grid_spec: Option<VoxelGridSpec>,
}

fn default_projection_key() -> String {
    "P2".into()
}

fn default_lidar_to_camera_key() -> String {
    "Tr".into()
}

impl SequenceManifest {
    pub fn read(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut m: SequenceManifest =
            toml::from_str(&text).map_err(|e| Error::malformed(path, e.to_string()))?;
        m.resolve(path.parent().unwrap_or(Path::new(".")));
        Ok(m)
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        let text = toml::to_string_pretty(self).map_err(|e| Error::Invariant(e.to_string()))?;
        write_file(path, text.as_bytes())
    }

    fn resolve(&mut self, base: &Path) {
        let fix = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        self.scan_paths.iter_mut().for_each(fix);
        fix(&mut self.pose_path);
        fix(&mut self.calib_path);
        fix(&mut self.masklet_dir);
        fix(&mut self.feature_dir);
        if let Some(t) = self.tracks_path.as_mut() {
            fix(t);
        }
    }

    /// Manifest override, else the profile's shift.
    pub fn effective_shift(&self) -> [f64; 3] {
        self.alignment_shift
            .unwrap_or_else(|| self.dataset_profile.alignment_shift())
    }

    pub fn effective_grid(&self) -> VoxelGridSpec {
        self.grid_spec.unwrap_or_else(VoxelGridSpec::benchmark)
    }

    pub fn raster_path(&self, frame: usize) -> PathBuf {
        self.masklet_dir.join(format!("{frame:06}.idm"))
    }

    pub fn feature_paths(&self, frame: usize) -> (PathBuf, PathBuf) {
        (
            self.feature_dir.join(format!("{frame:06}.fvec")),
            self.feature_dir.join(format!("{frame:06}.ids")),
        )
    }
}

/// One decoded frame.
#[derive(Debug, Clone)]
pub struct Frame {
    pub index: usize,
    pub cloud: PointCloud,
    /// World-from-sensor.
    pub pose: RigidTransform,
    /// `None` when no raster exists for this frame.
    pub masklet: Option<MaskletFrame>,
}

/// An opened sequence: poses, camera and tracks eagerly, scans and masklets on demand.
#[derive(Debug, Clone)]
pub struct Sequence {
    pub manifest: SequenceManifest,
    pub poses: Vec<RigidTransform>,
    pub camera: CameraModel,
    /// Dynamic-object boxes in each frame's sensor coordinates, keyed by frame.
    pub tracks: BTreeMap<usize, Vec<TrackBox>>,
}

impl Sequence {
    pub fn len(&self) -> usize {
        self.poses.len()
    }

    pub fn is_empty(&self) -> bool {
        self.poses.is_empty()
    }

    pub fn frame(&self, index: usize) -> Result<Frame> {
        let m = &self.manifest;
        let path = m.scan_paths.get(index).ok_or_else(|| {
            Error::Config(format!("frame {index} outside a {}-frame sequence", self.len()))
        })?;
        let cloud = read_scan(path)?;
        let raster = m.raster_path(index);
        let masklet = if raster.exists() {
            let (w, h, ids) = read_raster(&raster)?;
            let mut frame = MaskletFrame::new(index, w, h, ids)?;
            let (fvec, idx) = m.feature_paths(index);
            if fvec.exists() {
                frame.features = read_features(&fvec, &idx)?;
            }
            Some(frame)
        } else {
            None
        };
        Ok(Frame {
            index,
            cloud,
            pose: self.poses[index],
            masklet,
        })
    }

    pub fn iter(&self) -> impl Iterator<Item = Result<Frame>> + '_ {
        (0..self.len()).map(|i| self.frame(i))
    }
}

/// Opens a sequence, validating pose/scan counts and the calibration.
pub fn load_sequence(manifest: &SequenceManifest) -> Result<Sequence> {
    let poses = read_poses(&manifest.pose_path)?;
    if poses.len() != manifest.scan_paths.len() {
        return Err(Error::CountMismatch {
            what: "poses vs scans",
            left: poses.len(),
            right: manifest.scan_paths.len(),
        });
    }
    let calib = Calibration::read(&manifest.calib_path)?;
    let proj = calib.projection(&manifest.projection_key, &manifest.calib_path)?;
    let ext = calib.rigid(&manifest.lidar_to_camera_key, &manifest.calib_path)?;
    let [w, h] = manifest.image_size;
    let camera = CameraModel::new(proj, ext, w, h)?;
    let tracks = match &manifest.tracks_path {
        Some(p) => read_tracks(p)?,
        None => BTreeMap::new(),
    };
    Ok(Sequence {
        manifest: manifest.clone(),
        poses,
        camera,
        tracks,
    })
}

/// JSON lines of `{"frame_index", "center", "size", "yaw"}`.
pub fn read_tracks(path: &Path) -> Result<BTreeMap<usize, Vec<TrackBox>>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut out: BTreeMap<usize, Vec<TrackBox>> = BTreeMap::new();
    for (n, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let b: TrackBox = serde_json::from_str(line)
            .map_err(|e| Error::malformed(path, format!("line {}: {e}", n + 1)))?;
        out.entry(b.frame_index).or_default().push(b);
    }
    Ok(out)
}

pub fn write_tracks(path: &Path, tracks: &[TrackBox]) -> Result<()> {
    let mut out = String::new();
    for t in tracks {
        out.push_str(&serde_json::to_string(t).map_err(|e| Error::Invariant(e.to_string()))?);
        out.push('\n');
    }
    write_file(path, out.as_bytes())
}
