//! Velodyne scans, pose lists and calibration text files.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

use nalgebra::Matrix3x4;

use super::bytes::{read_file, write_file, Writer};
use crate::error::{Error, Result};
use crate::geom::{PointCloud, RigidTransform};

/// Reads an N×4 little-endian `f32` scan with no header.
pub fn read_scan(path: &Path) -> Result<PointCloud> {
    let bytes = read_file(path)?;
    decode_scan(&bytes, path)
}

pub fn decode_scan(bytes: &[u8], path: &Path) -> Result<PointCloud> {
    if bytes.len() % 16 != 0 {
        return Err(Error::malformed(
            path,
            format!("scan size {} is not a multiple of 16 bytes", bytes.len()),
        ));
    }
    let points = bytes
        .chunks_exact(16)
        .map(|c| {
            let f = |i: usize| f32::from_le_bytes(c[4 * i..4 * i + 4].try_into().unwrap());
            [f(0), f(1), f(2), f(3)]
        })
        .collect();
    PointCloud::new(points).map_err(|e| Error::malformed(path, e.to_string()))
}

pub fn write_scan(path: &Path, cloud: &PointCloud) -> Result<()> {
    let mut w = Writer::default();
    for p in cloud.rows() {
        w.f32_slice(p);
    }
    write_file(path, &w.buf)
}

/// One world-from-sensor pose per non-empty line, 12 floats row-major.
pub fn read_poses(path: &Path) -> Result<Vec<RigidTransform>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_poses(&text, path)
}

pub fn parse_poses(text: &str, path: &Path) -> Result<Vec<RigidTransform>> {
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(n, line)| {
            let vals = parse_floats(line.split_whitespace(), path, n)?;
            let arr: [f64; 12] = vals.try_into().map_err(|v: Vec<f64>| {
                Error::malformed(path, format!("line {}: {} values, expected 12", n + 1, v.len()))
            })?;
            RigidTransform::from_row_major_3x4(&arr)
                .map_err(|e| Error::malformed(path, format!("line {}: {e}", n + 1)))
        })
        .collect()
}

pub fn write_poses(path: &Path, poses: &[RigidTransform]) -> Result<()> {
    let mut out = String::new();
    for p in poses {
        let line: Vec<String> = p.to_row_major_3x4().iter().map(|v| format!("{v:e}")).collect();
        writeln!(out, "{}", line.join(" ")).unwrap();
    }
    write_file(path, out.as_bytes())
}

fn parse_floats<'a>(
    tokens: impl Iterator<Item = &'a str>,
    path: &Path,
    line: usize,
) -> Result<Vec<f64>> {
    tokens
        .map(|t| {
            t.parse::<f64>().map_err(|_| {
                Error::malformed(path, format!("line {}: cannot parse {t:?}", line + 1))
            })
        })
        .collect()
}

/// `KEY: v1 … vN` calibration entries.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Calibration {
    pub entries: BTreeMap<String, Vec<f64>>,
}

impl Calibration {
    pub fn read(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text, path)
    }

    pub fn parse(text: &str, path: &Path) -> Result<Self> {
        let mut entries = BTreeMap::new();
        for (n, line) in text.lines().enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let (key, rest) = line.split_once(':').ok_or_else(|| {
                Error::malformed(path, format!("line {}: missing ':'", n + 1))
            })?;
            entries.insert(
                key.trim().to_string(),
                parse_floats(rest.split_whitespace(), path, n)?,
            );
        }
        Ok(Self { entries })
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        let mut out = String::new();
        for (k, v) in &self.entries {
            let vals: Vec<String> = v.iter().map(|x| format!("{x:e}")).collect();
            writeln!(out, "{k}: {}", vals.join(" ")).unwrap();
        }
        write_file(path, out.as_bytes())
    }

    fn twelve(&self, key: &str, path: &Path) -> Result<[f64; 12]> {
        let v = self
            .entries
            .get(key)
            .ok_or_else(|| Error::malformed(path, format!("missing calibration key {key}")))?;
        v.as_slice()
            .try_into()
            .map_err(|_| Error::malformed(path, format!("key {key}: expected 12 values")))
    }

    pub fn projection(&self, key: &str, path: &Path) -> Result<Matrix3x4<f64>> {
        Ok(Matrix3x4::from_row_slice(&self.twelve(key, path)?))
    }

    pub fn rigid(&self, key: &str, path: &Path) -> Result<RigidTransform> {
        RigidTransform::from_row_major_3x4(&self.twelve(key, path)?)
            .map_err(|e| Error::malformed(path, format!("key {key}: {e}")))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn two_point_scan() {
        let mut w = Writer::default();
        w.f32_slice(&[1.0, 2.0, 3.0, 0.5, -1.0, -2.0, -3.0, 0.25]);
        assert_eq!(w.buf.len(), 32);
        let cloud = decode_scan(&w.buf, Path::new("x.bin")).unwrap();
        assert_eq!(cloud.len(), 2);
        assert_eq!(cloud.rows()[1], [-1.0, -2.0, -3.0, 0.25]);
    }

    #[test]
    fn truncated_scan_is_malformed() {
        let err = decode_scan(&[0u8; 17], Path::new("x.bin")).unwrap_err();
        assert!(matches!(err, Error::MalformedFile { .. }));
    }

    #[test]
    fn identity_pose_line() {
        let poses = parse_poses("1 0 0 0 0 1 0 0 0 0 1 0\n", Path::new("p.txt")).unwrap();
        assert_eq!(poses, vec![RigidTransform::identity()]);
    }

    #[test]
    fn short_pose_line_rejected() {
        assert!(parse_poses("1 0 0 0\n", Path::new("p.txt")).is_err());
    }

    #[test]
    fn calib_keys() {
        let text = "P2: 500 0 320 0 0 500 120 0 0 0 1 0\nTr: 0 -1 0 0 0 0 -1 0 1 0 0 0\n";
        let c = Calibration::parse(text, Path::new("c.txt")).unwrap();
        let p = c.projection("P2", Path::new("c.txt")).unwrap();
        assert_eq!(p[(0, 2)], 320.0);
        let tr = c.rigid("Tr", Path::new("c.txt")).unwrap();
        assert_eq!(tr.rotation()[(2, 0)], 1.0);
        assert!(c.rigid("Tr_missing", Path::new("c.txt")).is_err());
    }
}
