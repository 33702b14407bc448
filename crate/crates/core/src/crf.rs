//! Mean-field dense CRF over occupied voxels with a truncated Gaussian kernel on
//! normalized voxel coordinates and Potts compatibility.
//!
//! Rows are stored as a shared base probability plus sparse per-label
//! exceptions. Unlabeled voxels start uniform, so a row only carries
//! exceptions for labels that have reached it; the representation is exact.

use std::collections::HashMap;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geom::VoxelIndex;
use crate::label::SparseVoxelGrid;

/// Clamp applied to one-hot seed rows.
pub const UNARY_EPS: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CrfParams {
    pub iterations: usize,
    /// Kernel bandwidth in normalized coordinates (each axis divided by its dims).
    pub theta: f64,
    pub pairwise_weight: f64,
    /// Euclidean radius in voxel units beyond which pairs are ignored.
    pub kernel_cutoff: f64,
}

impl Default for CrfParams {
    fn default() -> Self {
        Self {
            iterations: 5,
            theta: 3.0 / 256.0,
            pairwise_weight: 3.0,
            kernel_cutoff: 9.0,
        }
    }
}

impl CrfParams {
    pub fn validate(&self) -> Result<()> {
        if self.iterations < 1 {
            return Err(Error::Config("crf iterations must be at least 1".into()));
        }
        if !(self.theta > 0.0 && self.theta.is_finite()) {
            return Err(Error::Config(format!("crf theta must be positive, got {}", self.theta)));
        }
        if !(self.pairwise_weight >= 0.0 && self.pairwise_weight.is_finite()) {
            return Err(Error::Config(format!(
                "crf pairwise_weight must be non-negative, got {}",
                self.pairwise_weight
            )));
        }
        if !(self.kernel_cutoff >= 1.0 && self.kernel_cutoff.is_finite()) {
            return Err(Error::Config(format!(
                "crf kernel_cutoff must be at least 1, got {}",
                self.kernel_cutoff
            )));
        }
        Ok(())
    }
}

/// `base` for every label except those listed in `exc` (sorted by label slot).
#[derive(Debug, Clone, PartialEq)]
pub struct SparseRow {
    pub base: f64,
    pub exc: Vec<(u32, f64)>,
}

impl SparseRow {
    pub fn get(&self, l: u32) -> f64 {
        match self.exc.binary_search_by_key(&l, |e| e.0) {
            Ok(k) => self.exc[k].1,
            Err(_) => self.base,
        }
    }
}

/// Per-voxel distributions over the grid's instance IDs.
#[derive(Debug, Clone, PartialEq)]
pub struct LabelDistribution {
    /// Instance ID of each label slot, ascending.
    pub labels: Vec<u32>,
    /// Voxels in index order.
    pub voxels: Vec<VoxelIndex>,
    pub rows: Vec<SparseRow>,
}

impl LabelDistribution {
    pub fn num_labels(&self) -> usize {
        self.labels.len()
    }

    pub fn prob(&self, voxel: usize, slot: usize) -> f64 {
        self.rows[voxel].get(slot as u32)
    }

    pub fn dense_row(&self, voxel: usize) -> Vec<f64> {
        (0..self.labels.len()).map(|l| self.prob(voxel, l)).collect()
    }

    /// Label slot holding the unique largest probability, if any.
    pub fn argmax(&self, voxel: usize) -> Option<usize> {
        unique_argmax(&self.dense_row(voxel))
    }
}

/// Index of the unique strict maximum; `None` on a tie at the top.
pub fn unique_argmax(row: &[f64]) -> Option<usize> {
    let mut best: Option<(usize, f64)> = None;
    let mut tied = false;
    for (i, &p) in row.iter().enumerate() {
        match best {
            Some((_, b)) if p < b => {}
            Some((_, b)) if p == b => tied = true,
            _ => {
                best = Some((i, p));
                tied = false;
            }
        }
    }
    if tied {
        None
    } else {
        best.map(|b| b.0)
    }
}

/// One-hot seeds clamped by [`UNARY_EPS`]; uniform rows for unlabeled occupied voxels.
pub fn build_unary(grid: &SparseVoxelGrid) -> Result<LabelDistribution> {
    let labels: Vec<u32> = grid.instance_ids().into_iter().collect();
    if labels.is_empty() {
        return Err(Error::NoLabels);
    }
    let l = labels.len();
    let slot: HashMap<u32, u32> = labels.iter().enumerate().map(|(i, &id)| (id, i as u32)).collect();
    let voxels: Vec<VoxelIndex> = grid.support().into_iter().collect();
    let rows = voxels
        .iter()
        .map(|v| match grid.label(*v) {
            Some(id) => SparseRow {
                base: UNARY_EPS,
                exc: vec![(slot[&id], 1.0 - UNARY_EPS * (l - 1) as f64)],
            },
            None => SparseRow {
                base: 1.0 / l as f64,
                exc: Vec::new(),
            },
        })
        .collect();
    Ok(LabelDistribution { labels, voxels, rows })
}

enum Lookup {
    Dense(Vec<u32>),
    Hashed(HashMap<[u32; 3], u32>),
}

const DENSE_LOOKUP_LIMIT: usize = 1 << 27;

impl Lookup {
    fn new(voxels: &[VoxelIndex], dims: [u32; 3]) -> Self {
        let cells = dims.iter().map(|&d| d as usize).product::<usize>();
        if cells <= DENSE_LOOKUP_LIMIT {
            let mut slots = vec![u32::MAX; cells];
            for (i, v) in voxels.iter().enumerate() {
                slots[Self::linear(v.0, dims)] = i as u32;
            }
            Lookup::Dense(slots)
        } else {
            Lookup::Hashed(voxels.iter().enumerate().map(|(i, v)| (v.0, i as u32)).collect())
        }
    }

    fn linear(v: [u32; 3], dims: [u32; 3]) -> usize {
        v[0] as usize + dims[0] as usize * (v[1] as usize + dims[1] as usize * v[2] as usize)
    }

    fn get(&self, v: [u32; 3], dims: [u32; 3]) -> Option<usize> {
        match self {
            Lookup::Dense(s) => {
                let i = s[Self::linear(v, dims)];
                (i != u32::MAX).then_some(i as usize)
            }
            Lookup::Hashed(m) => m.get(&v).map(|&i| i as usize),
        }
    }
}

/// Integer offsets within the cutoff sphere (origin excluded) with kernel weights.
pub fn kernel_table(params: &CrfParams, dims: [u32; 3]) -> Vec<([i32; 3], f64)> {
    let r = params.kernel_cutoff.floor() as i32;
    let c2 = params.kernel_cutoff * params.kernel_cutoff;
    let mut out = Vec::new();
    for dz in -r..=r {
        for dy in -r..=r {
            for dx in -r..=r {
                let d2 = (dx * dx + dy * dy + dz * dz) as f64;
                if d2 == 0.0 || d2 > c2 {
                    continue;
                }
                out.push(([dx, dy, dz], kernel(params.theta, [dx, dy, dz], dims)));
            }
        }
    }
    out
}

/// `exp(−‖Δf‖² / 2θ²)` with `f` the voxel index divided by dims per axis.
pub fn kernel(theta: f64, delta: [i32; 3], dims: [u32; 3]) -> f64 {
    let d2: f64 = (0..3).map(|a| (delta[a] as f64 / dims[a] as f64).powi(2)).sum();
    (-d2 / (2.0 * theta * theta)).exp()
}

struct Scratch {
    acc: Vec<f64>,
    touched: Vec<u32>,
}

/// One synchronous mean-field update of every row from the previous iterate.
pub fn meanfield_step(
    q: &LabelDistribution,
    unary: &LabelDistribution,
    params: &CrfParams,
    dims: [u32; 3],
) -> LabelDistribution {
    let lookup = Lookup::new(&q.voxels, dims);
    let table = kernel_table(params, dims);
    step_with(q, unary, params.pairwise_weight, &lookup, &table, dims)
}

fn step_with(
    q: &LabelDistribution,
    unary: &LabelDistribution,
    w: f64,
    lookup: &Lookup,
    table: &[([i32; 3], f64)],
    dims: [u32; 3],
) -> LabelDistribution {
    let l = q.labels.len();
    let rows: Vec<SparseRow> = q
        .voxels
        .par_iter()
        .enumerate()
        .map_init(
            || Scratch {
                acc: vec![0.0; l],
                touched: Vec::new(),
            },
            |s, (i, v)| {
                let mut base_msg = 0.0;
                if w != 0.0 {
                    for (off, k) in table {
                        let mut n = [0u32; 3];
                        let mut inside = true;
                        for a in 0..3 {
                            let c = v.0[a] as i64 + off[a] as i64;
                            if c < 0 || c >= dims[a] as i64 {
                                inside = false;
                                break;
                            }
                            n[a] = c as u32;
                        }
                        if !inside {
                            continue;
                        }
                        let Some(j) = lookup.get(n, dims) else {
                            continue;
                        };
                        let row = &q.rows[j];
                        base_msg += k * row.base;
                        for &(lab, p) in &row.exc {
                            let slot = &mut s.acc[lab as usize];
                            if *slot == 0.0 && !s.touched.contains(&lab) {
                                s.touched.push(lab);
                            }
                            *slot += k * (p - row.base);
                        }
                    }
                }
                let u = &unary.rows[i];
                for &(lab, _) in &u.exc {
                    if !s.touched.contains(&lab) {
                        s.touched.push(lab);
                    }
                }
                s.touched.sort_unstable();
                let base_logit = u.base.ln() + w * base_msg;
                let logits: Vec<(u32, f64)> = s
                    .touched
                    .iter()
                    .map(|&lab| (lab, u.get(lab).ln() + w * (base_msg + s.acc[lab as usize])))
                    .collect();
                let rest = l - logits.len();
                let mut m = logits.iter().map(|e| e.1).fold(f64::NEG_INFINITY, f64::max);
                if rest > 0 {
                    m = m.max(base_logit);
                }
                let base_e = (base_logit - m).exp();
                let z = rest as f64 * base_e + logits.iter().map(|e| (e.1 - m).exp()).sum::<f64>();
                let row = SparseRow {
                    base: if rest > 0 { base_e / z } else { 0.0 },
                    exc: logits.iter().map(|&(lab, x)| (lab, (x - m).exp() / z)).collect(),
                };
                for &lab in &s.touched {
                    s.acc[lab as usize] = 0.0;
                }
                s.touched.clear();
                row
            },
        )
        .collect();
    LabelDistribution {
        labels: q.labels.clone(),
        voxels: q.voxels.clone(),
        rows,
    }
}

/// Runs mean-field inference and returns the final distribution.
pub fn crf_infer(grid: &SparseVoxelGrid, params: &CrfParams) -> Result<LabelDistribution> {
    params.validate()?;
    let unary = build_unary(grid)?;
    let dims = grid.spec.dims;
    let lookup = Lookup::new(&unary.voxels, dims);
    let table = kernel_table(params, dims);
    let mut q = unary.clone();
    for _ in 0..params.iterations {
        q = step_with(&q, &unary, params.pairwise_weight, &lookup, &table, dims);
    }
    Ok(q)
}

/// Expands labels into unlabeled occupied voxels. Seeds and occupancy are unchanged;
/// a voxel whose final row has no unique maximum stays unlabeled.
pub fn crf_refine(grid: &SparseVoxelGrid, params: &CrfParams) -> Result<SparseVoxelGrid> {
    let q = crf_infer(grid, params)?;
    let mut out = grid.clone();
    for (i, v) in q.voxels.iter().enumerate() {
        if grid.cells.contains_key(v) {
            continue;
        }
        if let Some(slot) = q.argmax(i) {
            out.cells.insert(*v, q.labels[slot]);
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geom::VoxelGridSpec;

    fn grid(dims: [u32; 3], labeled: &[([u32; 3], u32)], free: &[[u32; 3]]) -> SparseVoxelGrid {
        let mut g = SparseVoxelGrid::new(VoxelGridSpec::new([0.0; 3], 0.2, dims).unwrap());
        for &(v, id) in labeled {
            g.cells.insert(VoxelIndex(v), id);
            g.occupancy.insert(VoxelIndex(v));
        }
        for &v in free {
            g.occupancy.insert(VoxelIndex(v));
        }
        g
    }

    #[test]
    fn unary_rules() {
        let g = grid([8, 8, 8], &[([0, 0, 0], 5)], &[]);
        let u = build_unary(&g).unwrap();
        assert_eq!(u.dense_row(0), vec![1.0]);

        let g = grid([8, 8, 8], &[([0, 0, 0], 1), ([1, 0, 0], 2), ([2, 0, 0], 3), ([3, 0, 0], 4)], &[[5, 5, 5]]);
        let u = build_unary(&g).unwrap();
        let last = u.voxels.iter().position(|v| v.0 == [5, 5, 5]).unwrap();
        assert_eq!(u.dense_row(last), vec![0.25; 4]);

        let g = grid([8, 8, 8], &[([0, 0, 0], 1), ([1, 0, 0], 2), ([2, 0, 0], 3)], &[]);
        let row = build_unary(&g).unwrap().dense_row(0);
        assert_eq!(row, vec![1.0 - 2e-6, 1e-6, 1e-6]);
        assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-12);

        assert!(matches!(build_unary(&grid([4, 4, 4], &[], &[[0, 0, 0]])), Err(Error::NoLabels)));
    }

    #[test]
    fn single_voxel_is_unchanged() {
        let g = grid([8, 8, 8], &[([3, 3, 3], 1)], &[]);
        let u = build_unary(&g).unwrap();
        let q = meanfield_step(&u, &u, &CrfParams::default(), [8, 8, 8]);
        assert_eq!(q.dense_row(0), u.dense_row(0));
    }

    #[test]
    fn two_voxel_closed_form() {
        // seed A at x=0, uniform voxel at x=1 over {A, B}; B seeded far away so L = 2
        let dims = [64, 64, 64];
        let g = grid(dims, &[([0, 0, 0], 1), ([40, 0, 0], 2)], &[[1, 0, 0]]);
        let p = CrfParams::default();
        let u = build_unary(&g).unwrap();
        let q = meanfield_step(&u, &u, &p, dims);
        let i = u.voxels.iter().position(|v| v.0 == [1, 0, 0]).unwrap();
        let k = kernel(p.theta, [1, 0, 0], dims);
        let (qa, qb) = (1.0 - UNARY_EPS, UNARY_EPS);
        let ea = (p.pairwise_weight * k * qa).exp();
        let eb = (p.pairwise_weight * k * qb).exp();
        let want = ea / (ea + eb);
        assert!((q.prob(i, 0) - want).abs() < 1e-12);
        assert!(q.prob(i, 0) > 0.5);
    }

    #[test]
    fn zero_weight_returns_unary() {
        let dims = [8, 8, 8];
        let g = grid(dims, &[([0, 0, 0], 1), ([1, 0, 0], 2)], &[[2, 0, 0], [0, 1, 0]]);
        let u = build_unary(&g).unwrap();
        let p = CrfParams { pairwise_weight: 0.0, ..CrfParams::default() };
        let q = meanfield_step(&u, &u, &p, dims);
        for i in 0..u.voxels.len() {
            for (a, b) in q.dense_row(i).iter().zip(u.dense_row(i)) {
                assert!((a - b).abs() < 1e-15);
            }
        }
    }

    #[test]
    fn fully_labeled_grid_is_fixed_point() {
        let g = grid([8, 8, 8], &[([0, 0, 0], 1), ([1, 0, 0], 2), ([2, 0, 0], 2)], &[]);
        assert_eq!(crf_refine(&g, &CrfParams::default()).unwrap(), g);
    }

    #[test]
    fn isolated_free_voxel_stays_unlabeled() {
        // beyond the cutoff of every seed: its row stays uniform and has no unique max
        let g = grid([64, 64, 8], &[([0, 0, 0], 1), ([1, 0, 0], 2)], &[[40, 40, 0]]);
        let out = crf_refine(&g, &CrfParams::default()).unwrap();
        assert_eq!(out.labeled_count(), 2);
        assert_eq!(out.occupancy, g.occupancy);
    }

    #[test]
    fn unique_argmax_ties() {
        assert_eq!(unique_argmax(&[0.2, 0.5, 0.3]), Some(1));
        assert_eq!(unique_argmax(&[0.5, 0.5]), None);
        assert_eq!(unique_argmax(&[0.5, 0.5, 0.7]), Some(2));
    }

    #[test]
    fn invalid_params() {
        assert!(CrfParams { iterations: 0, ..Default::default() }.validate().is_err());
        assert!(CrfParams { theta: 0.0, ..Default::default() }.validate().is_err());
        assert!(CrfParams { kernel_cutoff: 0.5, ..Default::default() }.validate().is_err());
    }
}
