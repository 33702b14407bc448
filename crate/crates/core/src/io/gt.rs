//! `CALG` dense ground-truth grids.
//!
//! ```text
//! "CALG" | n × u16 class | n × u16 instance | ceil(n/8) bytes invalid mask
//! ```
//! with `n = dx·dy·dz`, x-fastest ordering, and the invalid mask packed
//! LSB-first (voxel `i` is bit `i % 8` of byte `i / 8`).

use std::path::Path;

use super::bytes::{read_file, write_file, Reader, Writer};
use crate::error::{Error, Result};
use crate::geom::{VoxelGridSpec, VoxelIndex};

pub const CALG_MAGIC: &[u8; 4] = b"CALG";

/// Dense per-voxel class/instance labels used only for evaluation.
#[derive(Debug, Clone, PartialEq)]
pub struct GroundTruthGrid {
    pub spec: VoxelGridSpec,
    pub labels: Vec<u16>,
    pub instance_ids: Vec<u16>,
    /// `true` marks voxels excluded from every metric.
    pub invalid: Vec<bool>,
}

impl GroundTruthGrid {
    pub fn empty(spec: VoxelGridSpec) -> Self {
        let n = spec.cell_count();
        Self {
            spec,
            labels: vec![0; n],
            instance_ids: vec![0; n],
            invalid: vec![false; n],
        }
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn set(&mut self, idx: VoxelIndex, class: u16, instance: u16) {
        let i = self.spec.linear(idx);
        self.labels[i] = class;
        self.instance_ids[i] = instance;
    }

    pub fn label(&self, idx: VoxelIndex) -> u16 {
        self.labels[self.spec.linear(idx)]
    }

    pub fn is_valid(&self, i: usize) -> bool {
        !self.invalid[i]
    }

    /// Linear indices of valid voxels with a nonzero class.
    pub fn occupied_valid(&self) -> impl Iterator<Item = usize> + '_ {
        (0..self.len()).filter(|&i| self.labels[i] != 0 && !self.invalid[i])
    }
}

pub fn encode_gt_grid(gt: &GroundTruthGrid) -> Vec<u8> {
    let n = gt.len();
    let mut w = Writer::default();
    w.bytes(CALG_MAGIC);
    for &l in &gt.labels {
        w.u16(l);
    }
    for &i in &gt.instance_ids {
        w.u16(i);
    }
    let mut mask = vec![0u8; n.div_ceil(8)];
    for (i, &bad) in gt.invalid.iter().enumerate() {
        if bad {
            mask[i / 8] |= 1 << (i % 8);
        }
    }
    w.bytes(&mask);
    w.buf
}

pub fn write_gt_grid(path: &Path, gt: &GroundTruthGrid) -> Result<()> {
    write_file(path, &encode_gt_grid(gt))
}

pub fn read_gt_grid(path: &Path, spec: &VoxelGridSpec) -> Result<GroundTruthGrid> {
    decode_gt_grid(&read_file(path)?, path, spec)
}

pub fn decode_gt_grid(bytes: &[u8], path: &Path, spec: &VoxelGridSpec) -> Result<GroundTruthGrid> {
    let n = spec.cell_count();
    let expected = 4 + 4 * n + n.div_ceil(8);
    if bytes.len() != expected {
        return Err(Error::malformed(
            path,
            format!("{} bytes, expected {expected} for {n} voxels", bytes.len()),
        ));
    }
    let mut r = Reader::new(bytes, path);
    r.magic(CALG_MAGIC)?;
    let labels = (0..n).map(|_| r.u16()).collect::<Result<Vec<_>>>()?;
    let instance_ids = (0..n).map(|_| r.u16()).collect::<Result<Vec<_>>>()?;
    let mask = r.take(n.div_ceil(8))?;
    let invalid = (0..n).map(|i| mask[i / 8] >> (i % 8) & 1 == 1).collect();
    r.finish()?;
    Ok(GroundTruthGrid {
        spec: *spec,
        labels,
        instance_ids,
        invalid,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn small() -> VoxelGridSpec {
        VoxelGridSpec::new([0.0; 3], 0.2, [4, 3, 2]).unwrap()
    }

    #[test]
    fn all_zero_file() {
        let spec = small();
        let bytes = encode_gt_grid(&GroundTruthGrid::empty(spec));
        let gt = decode_gt_grid(&bytes, Path::new("g"), &spec).unwrap();
        assert!(gt.labels.iter().all(|&l| l == 0));
        assert!(gt.invalid.iter().all(|&b| !b));
    }

    #[test]
    fn linear_zero_is_origin_voxel() {
        let spec = small();
        let mut bytes = encode_gt_grid(&GroundTruthGrid::empty(spec));
        bytes[4] = 7;
        let gt = decode_gt_grid(&bytes, Path::new("g"), &spec).unwrap();
        assert_eq!(gt.label(VoxelIndex::new(0, 0, 0)), 7);
        assert_eq!(gt.label(VoxelIndex::new(1, 0, 0)), 0);
    }

    #[test]
    fn wrong_length_rejected() {
        let spec = small();
        let mut bytes = encode_gt_grid(&GroundTruthGrid::empty(spec));
        bytes.push(0);
        assert!(decode_gt_grid(&bytes, Path::new("g"), &spec).is_err());
    }

    proptest! {
        #[test]
        fn round_trip_is_byte_identical(
            labels in prop::collection::vec(0u16..20, 24),
            inst in prop::collection::vec(0u16..5, 24),
            invalid in prop::collection::vec(any::<bool>(), 24),
        ) {
            let spec = small();
            let gt = GroundTruthGrid { spec, labels, instance_ids: inst, invalid };
            let bytes = encode_gt_grid(&gt);
            let back = decode_gt_grid(&bytes, Path::new("g"), &spec).unwrap();
            prop_assert_eq!(&back, &gt);
            prop_assert_eq!(encode_gt_grid(&back), bytes);
        }
    }
}
