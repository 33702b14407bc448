//! `IDM1` instance rasters and `FVEC` feature files.
//!
//! ```text
//! IDM1: "IDM1" | u32 width | u32 height | width·height × u32 id   (row-major, 0 = background)
//! FVEC: "FVEC" | u32 count | u32 dim    | count·dim × f32
//! ids sidecar: count × u32, record i of the FVEC file belongs to instance ids[i]
//! ```

use std::collections::BTreeMap;
use std::path::Path;

use super::bytes::{read_file, u32_len, write_file, Reader, Writer};
use crate::error::{Error, Result};

pub const IDM_MAGIC: &[u8; 4] = b"IDM1";
pub const FVEC_MAGIC: &[u8; 4] = b"FVEC";

/// One frame's masklet raster plus the features of the instances it shows.
#[derive(Debug, Clone, PartialEq)]
pub struct MaskletFrame {
    pub frame_index: usize,
    pub width: u32,
    pub height: u32,
    /// Row-major (`v * width + u`) instance IDs.
    pub ids: Vec<u32>,
    /// Unit-norm feature per instance ID.
    pub features: BTreeMap<u32, Vec<f32>>,
}

impl MaskletFrame {
    pub fn new(frame_index: usize, width: u32, height: u32, ids: Vec<u32>) -> Result<Self> {
        if ids.len() != width as usize * height as usize {
            return Err(Error::SizeMismatch(format!(
                "raster has {} ids for {width}x{height}",
                ids.len()
            )));
        }
        Ok(Self {
            frame_index,
            width,
            height,
            ids,
            features: BTreeMap::new(),
        })
    }

    pub fn id_at(&self, u: u32, v: u32) -> u32 {
        self.ids[v as usize * self.width as usize + u as usize]
    }
}

pub fn read_raster(path: &Path) -> Result<(u32, u32, Vec<u32>)> {
    let bytes = read_file(path)?;
    decode_raster(&bytes, path)
}

pub fn decode_raster(bytes: &[u8], path: &Path) -> Result<(u32, u32, Vec<u32>)> {
    let mut r = Reader::new(bytes, path);
    r.magic(IDM_MAGIC)?;
    let width = r.u32()?;
    let height = r.u32()?;
    let n = width as usize * height as usize;
    if r.remaining() != n * 4 {
        return Err(r.err(format!(
            "{} payload bytes for a {width}x{height} raster",
            r.remaining()
        )));
    }
    let ids = (0..n).map(|_| r.u32()).collect::<Result<Vec<_>>>()?;
    Ok((width, height, ids))
}

pub fn encode_raster(width: u32, height: u32, ids: &[u32]) -> Vec<u8> {
    let mut w = Writer::default();
    w.bytes(IDM_MAGIC);
    w.u32(width);
    w.u32(height);
    for id in ids {
        w.u32(*id);
    }
    w.buf
}

pub fn write_raster(path: &Path, width: u32, height: u32, ids: &[u32]) -> Result<()> {
    write_file(path, &encode_raster(width, height, ids))
}

/// Raw FVEC records as stored (no normalization).
pub fn read_fvec(path: &Path) -> Result<(u32, Vec<Vec<f32>>)> {
    let bytes = read_file(path)?;
    decode_fvec(&bytes, path)
}

pub fn decode_fvec(bytes: &[u8], path: &Path) -> Result<(u32, Vec<Vec<f32>>)> {
    let mut r = Reader::new(bytes, path);
    r.magic(FVEC_MAGIC)?;
    let count = r.u32()? as usize;
    let dim = r.u32()?;
    if r.remaining() != count * dim as usize * 4 {
        return Err(r.err(format!(
            "{} payload bytes for {count} vectors of dim {dim}",
            r.remaining()
        )));
    }
    let mut vecs = Vec::with_capacity(count);
    for _ in 0..count {
        let v = r.f32_vec(dim as usize)?;
        if !v.iter().all(|x| x.is_finite()) {
            return Err(r.err("non-finite feature value"));
        }
        vecs.push(v);
    }
    Ok((dim, vecs))
}

pub fn encode_fvec(dim: u32, vecs: &[Vec<f32>]) -> Result<Vec<u8>> {
    let mut w = Writer::default();
    w.bytes(FVEC_MAGIC);
    w.u32(u32_len(vecs.len(), "vector")?);
    w.u32(dim);
    for v in vecs {
        if v.len() != dim as usize {
            return Err(Error::SizeMismatch(format!(
                "vector of length {} in a dim-{dim} file",
                v.len()
            )));
        }
        w.f32_slice(v);
    }
    Ok(w.buf)
}

pub fn write_fvec(path: &Path, dim: u32, vecs: &[Vec<f32>]) -> Result<()> {
    write_file(path, &encode_fvec(dim, vecs)?)
}

pub fn read_ids(path: &Path) -> Result<Vec<u32>> {
    let bytes = read_file(path)?;
    if bytes.len() % 4 != 0 {
        return Err(Error::malformed(path, "id sidecar length not a multiple of 4"));
    }
    Ok(bytes
        .chunks_exact(4)
        .map(|c| u32::from_le_bytes(c.try_into().unwrap()))
        .collect())
}

pub fn write_ids(path: &Path, ids: &[u32]) -> Result<()> {
    let mut w = Writer::default();
    for id in ids {
        w.u32(*id);
    }
    write_file(path, &w.buf)
}

/// L2-normalizes in `f64`, failing on zero vectors.
pub fn normalized(v: &[f32]) -> Option<Vec<f32>> {
    let n = v.iter().map(|&x| x as f64 * x as f64).sum::<f64>().sqrt();
    (n > 0.0).then(|| v.iter().map(|&x| (x as f64 / n) as f32).collect())
}

/// Reads an FVEC file with its ID sidecar into a unit-norm feature map.
pub fn read_features(fvec_path: &Path, ids_path: &Path) -> Result<BTreeMap<u32, Vec<f32>>> {
    let (_, vecs) = read_fvec(fvec_path)?;
    let ids = read_ids(ids_path)?;
    if ids.len() != vecs.len() {
        return Err(Error::CountMismatch {
            what: "feature ids vs feature vectors",
            left: ids.len(),
            right: vecs.len(),
        });
    }
    let mut out = BTreeMap::new();
    for (id, v) in ids.into_iter().zip(vecs) {
        let v = normalized(&v).ok_or_else(|| {
            Error::malformed(fvec_path, format!("instance {id} has a zero feature"))
        })?;
        if out.insert(id, v).is_some() {
            return Err(Error::malformed(
                fvec_path,
                format!("instance {id} has more than one feature"),
            ));
        }
    }
    Ok(out)
}

pub fn write_features(
    fvec_path: &Path,
    ids_path: &Path,
    features: &BTreeMap<u32, Vec<f32>>,
) -> Result<()> {
    let dim = features.values().next().map_or(0, |v| v.len());
    let vecs: Vec<Vec<f32>> = features.values().cloned().collect();
    write_fvec(fvec_path, u32_len(dim, "dim")?, &vecs)?;
    write_ids(ids_path, &features.keys().copied().collect::<Vec<_>>())
}
