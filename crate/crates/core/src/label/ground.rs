use nalgebra::{Matrix3, SymmetricEigen, Vector3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GroundParams {
    /// Inlier distance in meters.
    pub threshold: f64,
    pub iterations: usize,
    /// Candidate planes tilted further than this from horizontal are skipped.
    pub max_tilt_deg: Option<f64>,
    pub seed: u64,
}

impl Default for GroundParams {
    fn default() -> Self {
        Self {
            threshold: 0.2,
            iterations: 200,
            max_tilt_deg: Some(30.0),
            seed: 0,
        }
    }
}

/// Plane `normal · p = offset` with `normal.z >= 0`.
#[derive(Debug, Clone, PartialEq)]
pub struct GroundPlane {
    pub normal: Vector3<f64>,
    pub offset: f64,
    pub inliers: Vec<bool>,
}

impl GroundPlane {
    pub fn distance(&self, p: &Vector3<f64>) -> f64 {
        self.normal.dot(p) - self.offset
    }

    pub fn inlier_count(&self) -> usize {
        self.inliers.iter().filter(|&&b| b).count()
    }
}

fn all_collinear(points: &[Vector3<f64>]) -> bool {
    let p0 = points[0];
    let Some(p1) = points
        .iter()
        .max_by(|a, b| (*a - p0).norm_squared().total_cmp(&(*b - p0).norm_squared()))
    else {
        return true;
    };
    let d = p1 - p0;
    let len = d.norm();
    if len == 0.0 {
        return true;
    }
    let dir = d / len;
    let tol = 1e-9 * len.max(1.0);
    points.iter().all(|p| (p - p0).cross(&dir).norm() <= tol)
}

fn orient(normal: Vector3<f64>, offset: f64) -> (Vector3<f64>, f64) {
    if normal.z < 0.0 {
        (-normal, -offset)
    } else {
        (normal, offset)
    }
}

fn inliers(points: &[Vector3<f64>], n: &Vector3<f64>, d: f64, tau: f64) -> Vec<bool> {
    points.iter().map(|p| (n.dot(p) - d).abs() <= tau).collect()
}

/// Least-squares plane through the points: normal is the smallest principal axis.
pub fn fit_plane_lsq(points: &[Vector3<f64>]) -> Option<(Vector3<f64>, f64)> {
    if points.len() < 3 {
        return None;
    }
    let c = points.iter().sum::<Vector3<f64>>() / points.len() as f64;
    let mut cov = Matrix3::zeros();
    for p in points {
        let d = p - c;
        cov += d * d.transpose();
    }
    let eig = SymmetricEigen::new(cov);
    let k = eig.eigenvalues.imin();
    let n = eig.eigenvectors.column(k).normalize();
    Some(orient(n, n.dot(&c)))
}

/// RANSAC ground plane followed by one least-squares refit on the inliers.
pub fn fit_ground_plane(points: &[Vector3<f64>], params: &GroundParams) -> Result<GroundPlane> {
    if points.len() < 3 {
        return Err(Error::DegenerateInput(format!(
            "{} points, at least 3 required",
            points.len()
        )));
    }
    if all_collinear(points) {
        return Err(Error::DegenerateInput("points are collinear".into()));
    }
    let min_nz = params.max_tilt_deg.map(|t| t.to_radians().cos());
    let mut rng = ChaCha8Rng::seed_from_u64(params.seed);
    let n = points.len();
    let mut best: Option<(usize, Vector3<f64>, f64)> = None;
    for _ in 0..params.iterations {
        let (i, j, k) = (rng.gen_range(0..n), rng.gen_range(0..n), rng.gen_range(0..n));
        let normal = (points[j] - points[i]).cross(&(points[k] - points[i]));
        let len = normal.norm();
        if !(len > 1e-12) {
            continue;
        }
        let (normal, offset) = orient(normal / len, (normal / len).dot(&points[i]));
        if min_nz.is_some_and(|m| normal.z < m) {
            continue;
        }
        let count = points
            .iter()
            .filter(|p| (normal.dot(p) - offset).abs() <= params.threshold)
            .count();
        if best.is_none_or(|(c, _, _)| count > c) {
            best = Some((count, normal, offset));
        }
    }
    let (_, mut normal, mut offset) = best.ok_or_else(|| {
        Error::DegenerateInput("no admissible plane hypothesis was sampled".into())
    })?;
    let first = inliers(points, &normal, offset, params.threshold);
    let support: Vec<Vector3<f64>> = points
        .iter()
        .zip(&first)
        .filter(|(_, &b)| b)
        .map(|(p, _)| *p)
        .collect();
    if let Some((n2, d2)) = fit_plane_lsq(&support) {
        if min_nz.is_none_or(|m| n2.z >= m) {
            normal = n2;
            offset = d2;
        }
    }
    Ok(GroundPlane {
        inliers: inliers(points, &normal, offset, params.threshold),
        normal,
        offset,
    })
}
