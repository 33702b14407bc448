//! Dataset profiles and run configuration.
//!
//! A run config is a TOML file. Every section is optional and falls back to the
//! selected profile:
//!
//! ```toml
//! dataset_profile = "kitti360"
//! manifest = "seq00/manifest.toml"
//! vocabulary = "vocab/vocab.json"
//! output_dir = "out"
//! seed = 0
//!
//! [window]
//! t_fw = 32
//! t_bw = 8
//! stride = 2
//! occ_fw = 72
//! occ_bw = 36
//! occ_stride = 1
//!
//! [crf]
//! iterations = 5
//! theta = 0.01171875
//! pairwise_weight = 3.0
//! kernel_cutoff = 9.0
//!
//! [thresholds]
//! tau_vox = 0.3
//! tau_obj = 0.5
//! tau_ovr = 0.4
//! ```

use std::fmt;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::crf::CrfParams;
use crate::error::{Error, Result};
use crate::geom::VoxelGridSpec;
use crate::label::{GroundParams, RefineParams, WindowConfig, DYNAMIC_IOU};
use crate::post::Thresholds;
use crate::train::LossWeights;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DatasetProfile {
    SemanticKitti,
    #[serde(rename = "kitti360")]
    Kitti360,
    Custom,
}

impl DatasetProfile {
    pub const ALL: [DatasetProfile; 3] = [Self::SemanticKitti, Self::Kitti360, Self::Custom];

    pub fn name(&self) -> &'static str {
        match self {
            Self::SemanticKitti => "semantic_kitti",
            Self::Kitti360 => "kitti360",
            Self::Custom => "custom",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|p| p.name() == s)
            .ok_or_else(|| Error::Config(format!("unknown dataset profile `{s}`")))
    }

    pub fn alignment_shift(&self) -> [f64; 3] {
        match self {
            Self::Kitti360 => [0.79, 0.3, -0.25],
            _ => [0.0; 3],
        }
    }

    pub fn settings(&self) -> Settings {
        let kitti360 = *self == Self::Kitti360;
        Settings {
            profile: *self,
            grid: VoxelGridSpec::benchmark(),
            window: WindowConfig {
                t_fw: 32,
                t_bw: 8,
                stride: 2,
                occ_fw: 72,
                occ_bw: if kitti360 { 36 } else { 1 },
                occ_stride: 1,
            },
            crf: CrfParams::default(),
            thresholds: if kitti360 {
                Thresholds { tau_vox: 0.3, tau_obj: 0.5, tau_ovr: 0.4 }
            } else {
                Thresholds { tau_vox: 0.1, tau_obj: 0.1, tau_ovr: 0.1 }
            },
            dynamic_removal: kitti360,
            dynamic_iou: DYNAMIC_IOU,
            alignment_shift: self.alignment_shift(),
            ground: GroundParams::default(),
            refine: RefineParams::default(),
            loss_weights: LossWeights::default(),
        }
    }
}

impl fmt::Display for DatasetProfile {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// Every tunable of the pseudo-labeling and post-processing stages.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Settings {
    pub profile: DatasetProfile,
    pub grid: VoxelGridSpec,
    pub window: WindowConfig,
    pub crf: CrfParams,
    pub thresholds: Thresholds,
    pub dynamic_removal: bool,
    pub dynamic_iou: f64,
    pub alignment_shift: [f64; 3],
    pub ground: GroundParams,
    pub refine: RefineParams,
    pub loss_weights: LossWeights,
}

/// Run configuration as written in TOML; unset fields come from the profile.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub dataset_profile: Option<DatasetProfile>,
    pub manifest: Option<PathBuf>,
    pub vocabulary: Option<PathBuf>,
    pub output_dir: Option<PathBuf>,
    pub seed: Option<u64>,
    pub window: Option<WindowConfig>,
    pub crf: Option<CrfParams>,
    pub thresholds: Option<Thresholds>,
    pub dynamic_removal: Option<bool>,
    pub dynamic_iou: Option<f64>,
    pub alignment_shift: Option<[f64; 3]>,
    pub ground: Option<GroundParams>,
    pub refine: Option<RefineParams>,
}

impl RunConfig {
    pub fn read(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        let mut cfg: RunConfig =
            toml::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        let base = path.parent().unwrap_or(Path::new("."));
        for p in [&mut cfg.manifest, &mut cfg.vocabulary, &mut cfg.output_dir]
            .into_iter()
            .flatten()
        {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        }
        Ok(cfg)
    }

    pub fn seed(&self) -> u64 {
        self.seed.unwrap_or(0)
    }

    /// Profile defaults overlaid with the fields set here; `fallback` is used when
    /// no profile is named.
    pub fn settings(&self, fallback: DatasetProfile) -> Result<Settings> {
        let mut s = self.dataset_profile.unwrap_or(fallback).settings();
        if let Some(w) = self.window {
            s.window = w;
        }
        if let Some(c) = self.crf {
            s.crf = c;
        }
        if let Some(t) = self.thresholds {
            s.thresholds = t;
        }
        if let Some(d) = self.dynamic_removal {
            s.dynamic_removal = d;
        }
        if let Some(d) = self.dynamic_iou {
            s.dynamic_iou = d;
        }
        if let Some(a) = self.alignment_shift {
            s.alignment_shift = a;
        }
        if let Some(g) = self.ground {
            s.ground = g;
        }
        if let Some(r) = &self.refine {
            s.refine = r.clone();
        }
        s.validate()?;
        Ok(s)
    }
}

impl Settings {
    pub fn validate(&self) -> Result<()> {
        self.grid.validate().map_err(|e| Error::Config(e.to_string()))?;
        self.crf.validate()?;
        self.thresholds.validate()?;
        if self.window.stride == 0 || self.window.occ_stride == 0 {
            return Err(Error::Config("window strides must be at least 1".into()));
        }
        if self.refine.eps.is_empty() || self.refine.eps.iter().any(|e| !(*e > 0.0)) {
            return Err(Error::Config("refine.eps must be a non-empty list of positive radii".into()));
        }
        if self.refine.min_pts == 0 {
            return Err(Error::Config("refine.min_pts must be at least 1".into()));
        }
        if !(0.0..=1.0).contains(&self.dynamic_iou) {
            return Err(Error::Config("dynamic_iou must lie in [0, 1]".into()));
        }
        Ok(())
    }
}

/// Plain-text table of the per-profile defaults, used in `--help`.
pub fn defaults_table() -> String {
    let profiles = [DatasetProfile::SemanticKitti, DatasetProfile::Kitti360];
    let s: Vec<Settings> = profiles.iter().map(|p| p.settings()).collect();
    let rows: Vec<(&str, Box<dyn Fn(&Settings) -> String>)> = vec![
        ("window.t_fw", Box::new(|s| s.window.t_fw.to_string())),
        ("window.t_bw", Box::new(|s| s.window.t_bw.to_string())),
        ("window.stride", Box::new(|s| s.window.stride.to_string())),
        ("window.occ_fw", Box::new(|s| s.window.occ_fw.to_string())),
        ("window.occ_bw", Box::new(|s| s.window.occ_bw.to_string())),
        ("window.occ_stride", Box::new(|s| s.window.occ_stride.to_string())),
        ("crf.iterations", Box::new(|s| s.crf.iterations.to_string())),
        ("crf.theta", Box::new(|s| format!("{}", s.crf.theta))),
        ("crf.pairwise_weight", Box::new(|s| format!("{}", s.crf.pairwise_weight))),
        ("crf.kernel_cutoff", Box::new(|s| format!("{}", s.crf.kernel_cutoff))),
        ("thresholds.tau_vox", Box::new(|s| format!("{}", s.thresholds.tau_vox))),
        ("thresholds.tau_obj", Box::new(|s| format!("{}", s.thresholds.tau_obj))),
        ("thresholds.tau_ovr", Box::new(|s| format!("{}", s.thresholds.tau_ovr))),
        ("dynamic_removal", Box::new(|s| s.dynamic_removal.to_string())),
        ("dynamic_iou", Box::new(|s| format!("{}", s.dynamic_iou))),
        ("alignment_shift", Box::new(|s| format!("{:?}", s.alignment_shift))),
        ("grid.origin", Box::new(|s| format!("{:?}", s.grid.origin))),
        ("grid.voxel_size", Box::new(|s| format!("{}", s.grid.voxel_size))),
        ("grid.dims", Box::new(|s| format!("{:?}", s.grid.dims))),
        ("ground.threshold", Box::new(|s| format!("{}", s.ground.threshold))),
        ("ground.iterations", Box::new(|s| s.ground.iterations.to_string())),
        ("refine.eps", Box::new(|s| format!("{:?}", s.refine.eps))),
        ("refine.min_pts", Box::new(|s| s.refine.min_pts.to_string())),
        ("refine.iou_threshold", Box::new(|s| format!("{}", s.refine.iou_threshold))),
    ];
    let mut out = format!("{:<22} {:<26} {}\n", "knob", "semantic_kitti", "kitti360");
    for (name, f) in rows {
        out.push_str(&format!("{:<22} {:<26} {}\n", name, f(&s[0]), f(&s[1])));
    }
    out.push_str("custom: semantic_kitti values\n");
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn profile_names_round_trip() {
        for p in DatasetProfile::ALL {
            assert_eq!(DatasetProfile::parse(p.name()).unwrap(), p);
            let json = serde_json::to_string(&p).unwrap();
            assert_eq!(json, format!("\"{}\"", p.name()));
        }
        assert!(DatasetProfile::parse("nuscenes").is_err());
    }

    #[test]
    fn overrides_apply() {
        let cfg: RunConfig = toml::from_str(
            "dataset_profile = \"kitti360\"\nseed = 3\n[thresholds]\ntau_vox = 0.2\ntau_obj = 0.5\ntau_ovr = 0.4\n",
        )
        .unwrap();
        let s = cfg.settings(DatasetProfile::SemanticKitti).unwrap();
        assert_eq!(s.profile, DatasetProfile::Kitti360);
        assert_eq!(s.thresholds.tau_vox, 0.2);
        assert_eq!(s.window.occ_bw, 36);
        assert_eq!(cfg.seed(), 3);
    }

    #[test]
    fn unknown_keys_are_config_errors() {
        assert!(toml::from_str::<RunConfig>("bogus = 1").is_err());
        let bad = RunConfig {
            crf: Some(CrfParams { iterations: 0, ..Default::default() }),
            ..Default::default()
        };
        assert!(matches!(bad.settings(DatasetProfile::Custom), Err(Error::Config(_))));
    }

    #[test]
    fn help_table_lists_knobs() {
        let t = defaults_table();
        assert!(t.contains("window.occ_bw"));
        assert!(t.contains("[0.79, 0.3, -0.25]"));
    }
}
