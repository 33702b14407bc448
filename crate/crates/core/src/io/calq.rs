//! `CALQ` soft-prediction files written by an external completion model.
//!
//! ```text
//! "CALQ" | u32 query count Q | u32 occupied voxel count N
//! N × (u16 x, u16 y, u16 z)
//! per query: N × f32 probability | u32 dim | dim × f32 feature
//! ```

use std::path::Path;

use super::bytes::{read_file, u32_len, write_file, Reader, Writer};
use crate::error::{Error, Result};
use crate::geom::VoxelIndex;
use crate::post::{SoftPrediction, SoftQuery};

pub const CALQ_MAGIC: &[u8; 4] = b"CALQ";

pub fn encode_soft_prediction(pred: &SoftPrediction) -> Result<Vec<u8>> {
    let mut w = Writer::default();
    w.bytes(CALQ_MAGIC);
    w.u32(u32_len(pred.queries.len(), "query")?);
    w.u32(u32_len(pred.voxels.len(), "voxel")?);
    for v in &pred.voxels {
        for c in v.0 {
            let c = u16::try_from(c)
                .map_err(|_| Error::Invariant(format!("voxel {v:?} exceeds u16 range")))?;
            w.u16(c);
        }
    }
    for q in &pred.queries {
        if q.probs.len() != pred.voxels.len() {
            return Err(Error::SizeMismatch(format!(
                "query has {} probabilities for {} voxels",
                q.probs.len(),
                pred.voxels.len()
            )));
        }
        w.f32_slice(&q.probs);
        w.u32(u32_len(q.feature.len(), "feature dim")?);
        w.f32_slice(&q.feature);
    }
    Ok(w.buf)
}

pub fn write_soft_prediction(path: &Path, pred: &SoftPrediction) -> Result<()> {
    write_file(path, &encode_soft_prediction(pred)?)
}

pub fn read_soft_prediction(path: &Path) -> Result<SoftPrediction> {
    decode_soft_prediction(&read_file(path)?, path)
}

pub fn decode_soft_prediction(bytes: &[u8], path: &Path) -> Result<SoftPrediction> {
    let mut r = Reader::new(bytes, path);
    r.magic(CALQ_MAGIC)?;
    let nq = r.u32()? as usize;
    let nv = r.u32()? as usize;
    let mut voxels = Vec::with_capacity(nv);
    for _ in 0..nv {
        voxels.push(VoxelIndex([r.u16()? as u32, r.u16()? as u32, r.u16()? as u32]));
    }
    let mut queries = Vec::with_capacity(nq);
    for q in 0..nq {
        let probs = r.f32_vec(nv)?;
        if !probs.iter().all(|p| (0.0..=1.0).contains(p)) {
            return Err(r.err(format!("query {q} has a probability outside [0, 1]")));
        }
        let dim = r.u32()? as usize;
        let feature = r.f32_vec(dim)?;
        if !feature.iter().all(|x| x.is_finite()) {
            return Err(r.err(format!("query {q} has a non-finite feature")));
        }
        queries.push(SoftQuery { probs, feature });
    }
    r.finish()?;
    Ok(SoftPrediction { voxels, queries })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip() {
        let pred = SoftPrediction {
            voxels: vec![VoxelIndex::new(1, 2, 3), VoxelIndex::new(4, 5, 6)],
            queries: vec![
                SoftQuery { probs: vec![0.25, 1.0], feature: vec![1.0, 0.0, 0.0] },
                SoftQuery { probs: vec![0.0, 0.5], feature: vec![0.0, 1.0, 0.0] },
            ],
        };
        let bytes = encode_soft_prediction(&pred).unwrap();
        assert_eq!(decode_soft_prediction(&bytes, Path::new("q")).unwrap(), pred);
    }

    #[test]
    fn probability_range_checked() {
        let pred = SoftPrediction {
            voxels: vec![VoxelIndex::new(0, 0, 0)],
            queries: vec![SoftQuery { probs: vec![1.5], feature: vec![1.0] }],
        };
        let bytes = encode_soft_prediction(&pred).unwrap();
        assert!(decode_soft_prediction(&bytes, Path::new("q")).is_err());
    }
}
