//! Grid-hashed DBSCAN and the multi-radius mask refinement built on it.
//!
//! Clusters are the connected components of core points (a point is core when
//! at least `min_pts` points, itself included, lie within `eps`). A border point
//! joins the cluster of its lowest-index core neighbor, which makes the result
//! independent of traversal order.

use std::collections::{BTreeMap, HashMap};

use nalgebra::Vector3;
use serde::{Deserialize, Serialize};

/// Density radii swept from coarse to fine.
pub const DEFAULT_EPS: [f64; 6] = [1.2488, 0.8136, 0.6952, 0.594, 0.4353, 0.3221];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RefineParams {
    pub eps: Vec<f64>,
    pub min_pts: usize,
    /// Minimum point IoU for a cluster to replace a mask.
    pub iou_threshold: f64,
}

impl Default for RefineParams {
    fn default() -> Self {
        Self {
            eps: DEFAULT_EPS.to_vec(),
            min_pts: 5,
            iou_threshold: 0.5,
        }
    }
}

type Cell = (i64, i64, i64);

struct SpatialHash {
    inv: f64,
    cells: HashMap<Cell, Vec<usize>>,
}

impl SpatialHash {
    fn new(points: &[Vector3<f64>], cell: f64) -> Self {
        let inv = 1.0 / cell;
        let mut cells: HashMap<Cell, Vec<usize>> = HashMap::new();
        for (i, p) in points.iter().enumerate() {
            cells.entry(Self::key(inv, p)).or_default().push(i);
        }
        Self { inv, cells }
    }

    fn key(inv: f64, p: &Vector3<f64>) -> Cell {
        (
            (p.x * inv).floor() as i64,
            (p.y * inv).floor() as i64,
            (p.z * inv).floor() as i64,
        )
    }

    fn for_each_near(&self, p: &Vector3<f64>, mut f: impl FnMut(usize)) {
        let (cx, cy, cz) = Self::key(self.inv, p);
        for dx in -1..=1 {
            for dy in -1..=1 {
                for dz in -1..=1 {
                    if let Some(v) = self.cells.get(&(cx + dx, cy + dy, cz + dz)) {
                        v.iter().for_each(|&j| f(j));
                    }
                }
            }
        }
    }
}

fn find(parent: &mut [usize], mut i: usize) -> usize {
    while parent[i] != i {
        parent[i] = parent[parent[i]];
        i = parent[i];
    }
    i
}

/// Cluster label per point (`None` = noise). Labels are numbered in order of
/// each cluster's lowest-index core point.
pub fn dbscan(points: &[Vector3<f64>], eps: f64, min_pts: usize) -> Vec<Option<u32>> {
    let n = points.len();
    let eps2 = eps * eps;
    let hash = SpatialHash::new(points, eps);
    let near = |i: usize, j: usize| (points[i] - points[j]).norm_squared() <= eps2;

    let core: Vec<bool> = (0..n)
        .map(|i| {
            let mut count = 0;
            hash.for_each_near(&points[i], |j| count += near(i, j) as usize);
            count >= min_pts
        })
        .collect();

    // components of the core-core neighbor graph; the root is the lowest index
    let mut parent: Vec<usize> = (0..n).collect();
    for i in (0..n).filter(|&i| core[i]) {
        hash.for_each_near(&points[i], |j| {
            if j > i && core[j] && near(i, j) {
                let (a, b) = (find(&mut parent, i), find(&mut parent, j));
                if a != b {
                    parent[a.max(b)] = a.min(b);
                }
            }
        });
    }

    let mut label: Vec<Option<u32>> = vec![None; n];
    let mut next = 0u32;
    for i in 0..n {
        if core[i] {
            let r = find(&mut parent, i);
            if r == i {
                label[i] = Some(next);
                next += 1;
            } else {
                label[i] = label[r];
            }
        }
    }
    for i in (0..n).filter(|&i| !core[i]) {
        let mut best: Option<usize> = None;
        hash.for_each_near(&points[i], |j| {
            if core[j] && near(i, j) && best.is_none_or(|b| j < b) {
                best = Some(j);
            }
        });
        label[i] = best.and_then(|j| label[j]);
    }
    label
}

/// Replaces each instance's point set by its best-matching DBSCAN cluster over
/// all radii when the point IoU reaches `iou_threshold`.
///
/// Where replacement sets of different instances overlap, the higher-IoU
/// instance wins (lower ID on ties); unreplaced instances keep their original
/// points unless a replacement claims them.
pub fn dbscan_refine(points: &[Vector3<f64>], ids: &[u32], params: &RefineParams) -> Vec<u32> {
    assert_eq!(points.len(), ids.len(), "points and ids differ in length");
    let mut masks: BTreeMap<u32, Vec<usize>> = BTreeMap::new();
    for (i, &id) in ids.iter().enumerate() {
        if id != 0 {
            masks.entry(id).or_default().push(i);
        }
    }
    if masks.is_empty() {
        return ids.to_vec();
    }

    // instance -> (iou, member points of the chosen cluster)
    let mut best: BTreeMap<u32, (f64, Vec<usize>)> = BTreeMap::new();
    for &eps in &params.eps {
        let labels = dbscan(points, eps, params.min_pts);
        let mut sizes: BTreeMap<u32, usize> = BTreeMap::new();
        for l in labels.iter().flatten() {
            *sizes.entry(*l).or_default() += 1;
        }
        for (&id, mask) in &masks {
            let mut inter: BTreeMap<u32, usize> = BTreeMap::new();
            for &i in mask {
                if let Some(l) = labels[i] {
                    *inter.entry(l).or_default() += 1;
                }
            }
            let mut pick: Option<(u32, f64)> = None;
            for (&l, &k) in &inter {
                let iou = k as f64 / (mask.len() + sizes[&l] - k) as f64;
                if pick.is_none_or(|(_, b)| iou > b) {
                    pick = Some((l, iou));
                }
            }
            if let Some((l, iou)) = pick {
                if iou >= params.iou_threshold && best.get(&id).is_none_or(|(b, _)| iou > *b) {
                    let members = (0..points.len()).filter(|&i| labels[i] == Some(l)).collect();
                    best.insert(id, (iou, members));
                }
            }
        }
    }

    let mut out = vec![0u32; ids.len()];
    let mut claim = vec![f64::NEG_INFINITY; ids.len()];
    for (&id, mask) in &masks {
        if !best.contains_key(&id) {
            for &i in mask {
                out[i] = id;
                claim[i] = 0.0;
            }
        }
    }
    for (&id, (iou, members)) in &best {
        for &i in members {
            // ascending id order, so strict `>` keeps the lower id on ties
            if *iou > claim[i] {
                out[i] = id;
                claim[i] = *iou;
            }
        }
    }
    out
}
