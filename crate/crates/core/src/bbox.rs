//! Upright (z-axis) boxes: minimum-area footprint fitting and 3D IoU.

use std::f64::consts::{FRAC_PI_2, FRAC_PI_4, PI};

use nalgebra::{Vector2, Vector3};
use serde::{Deserialize, Serialize};

/// A box rotated by `yaw` about +z. `size[0]` runs along the yaw direction.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OrientedBox {
    pub center: [f64; 3],
    pub size: [f64; 3],
    pub yaw: f64,
}

impl OrientedBox {
    pub fn volume(&self) -> f64 {
        self.size.iter().product()
    }

    /// Footprint corners in counter-clockwise order.
    pub fn corners_xy(&self) -> [Vector2<f64>; 4] {
        let (s, c) = self.yaw.sin_cos();
        let u = Vector2::new(c, s) * (self.size[0] / 2.0);
        let v = Vector2::new(-s, c) * (self.size[1] / 2.0);
        let o = Vector2::new(self.center[0], self.center[1]);
        [o - u - v, o + u - v, o + u + v, o - u + v]
    }

    pub fn contains(&self, p: &Vector3<f64>) -> bool {
        let (s, c) = self.yaw.sin_cos();
        let d = Vector3::new(p.x - self.center[0], p.y - self.center[1], p.z - self.center[2]);
        let lu = c * d.x + s * d.y;
        let lv = -s * d.x + c * d.y;
        lu.abs() <= self.size[0] / 2.0 && lv.abs() <= self.size[1] / 2.0 && d.z.abs() <= self.size[2] / 2.0
    }
}

/// Minimum-area enclosing rectangle of a planar point set.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Rect2 {
    pub center: Vector2<f64>,
    /// `(length, width)` with `length >= width`; length runs along `yaw`.
    pub size: Vector2<f64>,
    /// In `[−π/2, π/2)`.
    pub yaw: f64,
}

impl Rect2 {
    pub fn area(&self) -> f64 {
        self.size.x * self.size.y
    }
}

fn cross(o: &Vector2<f64>, a: &Vector2<f64>, b: &Vector2<f64>) -> f64 {
    (a.x - o.x) * (b.y - o.y) - (a.y - o.y) * (b.x - o.x)
}

/// Andrew's monotone chain; collinear points are dropped, output is counter-clockwise.
pub fn convex_hull(points: &[Vector2<f64>]) -> Vec<Vector2<f64>> {
    let mut pts: Vec<Vector2<f64>> = points.to_vec();
    pts.sort_by(|a, b| a.x.total_cmp(&b.x).then(a.y.total_cmp(&b.y)));
    pts.dedup();
    if pts.len() < 3 {
        return pts;
    }
    let mut hull: Vec<Vector2<f64>> = Vec::with_capacity(2 * pts.len());
    for (pass, seq) in [pts.clone(), pts.iter().rev().copied().collect()].iter().enumerate() {
        // the upper pass must not pop into the finished lower chain
        let floor = if pass == 0 { 2 } else { hull.len() + 1 };
        for p in seq.iter().skip(pass) {
            while hull.len() >= floor && cross(&hull[hull.len() - 2], &hull[hull.len() - 1], p) <= 0.0 {
                hull.pop();
            }
            hull.push(*p);
        }
    }
    hull.pop();
    hull
}

/// Wraps an angle into `[−π/2, π/2)`.
pub fn wrap_half_pi(a: f64) -> f64 {
    let mut a = (a + FRAC_PI_2).rem_euclid(PI) - FRAC_PI_2;
    if a >= FRAC_PI_2 {
        a -= PI;
    }
    a
}

fn extents(points: &[Vector2<f64>], yaw: f64) -> (f64, f64, f64, f64) {
    let (s, c) = yaw.sin_cos();
    let mut b = (f64::INFINITY, f64::NEG_INFINITY, f64::INFINITY, f64::NEG_INFINITY);
    for p in points {
        let u = c * p.x + s * p.y;
        let v = -s * p.x + c * p.y;
        b = (b.0.min(u), b.1.max(u), b.2.min(v), b.3.max(v));
    }
    b
}

fn rect_at(points: &[Vector2<f64>], yaw: f64) -> Rect2 {
    let (u0, u1, v0, v1) = extents(points, yaw);
    let (s, c) = yaw.sin_cos();
    let (cu, cv) = ((u0 + u1) / 2.0, (v0 + v1) / 2.0);
    Rect2 {
        center: Vector2::new(c * cu - s * cv, s * cu + c * cv),
        size: Vector2::new(u1 - u0, v1 - v0),
        yaw,
    }
}

fn canonical(mut r: Rect2) -> Rect2 {
    if r.size.y > r.size.x {
        r.size = Vector2::new(r.size.y, r.size.x);
        r.yaw += FRAC_PI_2;
    }
    r.yaw = wrap_half_pi(r.yaw);
    if r.size.x == r.size.y && r.yaw.abs() > FRAC_PI_4 {
        r.yaw = wrap_half_pi(r.yaw + FRAC_PI_2);
    }
    r
}

/// Rotating-calipers minimum-area rectangle over the convex hull.
///
/// Returns `None` for an empty input.
pub fn min_area_rect(points: &[Vector2<f64>]) -> Option<Rect2> {
    let hull = convex_hull(points);
    match hull.len() {
        0 => None,
        1 => Some(Rect2 {
            center: hull[0],
            size: Vector2::zeros(),
            yaw: 0.0,
        }),
        2 => {
            let d = hull[1] - hull[0];
            Some(canonical(rect_at(&hull, d.y.atan2(d.x))))
        }
        n => {
            let mut best: Option<Rect2> = None;
            for i in 0..n {
                let d = hull[(i + 1) % n] - hull[i];
                let r = rect_at(&hull, d.y.atan2(d.x));
                if best.is_none_or(|b| r.area() < b.area()) {
                    best = Some(r);
                }
            }
            best.map(canonical)
        }
    }
}

/// Upright box around 3D points: minimum-area footprint plus z range.
pub fn fit_upright_box(points: &[Vector3<f64>]) -> Option<OrientedBox> {
    let xy: Vec<Vector2<f64>> = points.iter().map(|p| p.xy()).collect();
    let r = min_area_rect(&xy)?;
    let (z0, z1) = points
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), p| (a.min(p.z), b.max(p.z)));
    Some(OrientedBox {
        center: [r.center.x, r.center.y, (z0 + z1) / 2.0],
        size: [r.size.x, r.size.y, z1 - z0],
        yaw: r.yaw,
    })
}

fn polygon_area(poly: &[Vector2<f64>]) -> f64 {
    let n = poly.len();
    if n < 3 {
        return 0.0;
    }
    (0..n)
        .map(|i| {
            let (a, b) = (poly[i], poly[(i + 1) % n]);
            a.x * b.y - a.y * b.x
        })
        .sum::<f64>()
        / 2.0
}

// Sutherland–Hodgman clip of `subject` by the convex counter-clockwise `clip`.
fn clip_convex(subject: &[Vector2<f64>], clip: &[Vector2<f64>]) -> Vec<Vector2<f64>> {
    let mut out = subject.to_vec();
    for i in 0..clip.len() {
        if out.is_empty() {
            break;
        }
        let (a, b) = (clip[i], clip[(i + 1) % clip.len()]);
        let input = std::mem::take(&mut out);
        for j in 0..input.len() {
            let (p, q) = (input[j], input[(j + 1) % input.len()]);
            let (sp, sq) = (cross(&a, &b, &p), cross(&a, &b, &q));
            if sp >= 0.0 {
                out.push(p);
            }
            if (sp >= 0.0) != (sq >= 0.0) {
                let t = sp / (sp - sq);
                out.push(p + (q - p) * t);
            }
        }
    }
    out
}

/// Footprint intersection area of two upright boxes.
pub fn footprint_intersection(a: &OrientedBox, b: &OrientedBox) -> f64 {
    if a.size[0] <= 0.0 || a.size[1] <= 0.0 || b.size[0] <= 0.0 || b.size[1] <= 0.0 {
        return 0.0;
    }
    polygon_area(&clip_convex(&a.corners_xy(), &b.corners_xy())).max(0.0)
}

/// Volumetric IoU of two upright boxes; 0 when either is degenerate.
pub fn box_iou_3d(a: &OrientedBox, b: &OrientedBox) -> f64 {
    let z_lo = (a.center[2] - a.size[2] / 2.0).max(b.center[2] - b.size[2] / 2.0);
    let z_hi = (a.center[2] + a.size[2] / 2.0).min(b.center[2] + b.size[2] / 2.0);
    let dz = (z_hi - z_lo).max(0.0);
    let inter = footprint_intersection(a, b) * dz;
    let union = a.volume() + b.volume() - inter;
    if union <= 0.0 {
        0.0
    } else {
        inter / union
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn aabb(c: [f64; 3], s: [f64; 3]) -> OrientedBox {
        OrientedBox { center: c, size: s, yaw: 0.0 }
    }

    #[test]
    fn iou_of_shifted_unit_cubes() {
        // overlap 0.5 × 1 × 1 -> 0.5 / 1.5
        let a = aabb([0.0; 3], [1.0; 3]);
        let b = aabb([0.5, 0.0, 0.0], [1.0; 3]);
        assert_relative_eq!(box_iou_3d(&a, &b), 1.0 / 3.0, epsilon = 1e-12);
        assert_relative_eq!(box_iou_3d(&a, &a), 1.0, epsilon = 1e-12);
        assert_eq!(box_iou_3d(&a, &aabb([5.0, 0.0, 0.0], [1.0; 3])), 0.0);
    }

    #[test]
    fn rotated_box_iou_is_rotation_consistent() {
        // 45° square inscribed in the unit square's circumcircle: octagon overlap
        let a = aabb([0.0; 3], [2.0, 2.0, 1.0]);
        let b = OrientedBox { yaw: FRAC_PI_4, ..a };
        let inter = 8.0 * (2f64.sqrt() - 1.0); // regular octagon with inradius 1
        assert_relative_eq!(footprint_intersection(&a, &b), inter, epsilon = 1e-9);
        assert_relative_eq!(box_iou_3d(&a, &b), inter / (8.0 - inter), epsilon = 1e-9);
    }

    #[test]
    fn hull_drops_interior_and_collinear() {
        let pts: Vec<_> = [(0., 0.), (1., 0.), (2., 0.), (2., 2.), (0., 2.), (1., 1.)]
            .iter()
            .map(|&(x, y)| Vector2::new(x, y))
            .collect();
        assert_eq!(convex_hull(&pts).len(), 4);
    }

    #[test]
    fn rect_of_rotated_rectangle() {
        let yaw = 0.3;
        let (s, c) = f64::sin_cos(yaw);
        let mut pts = Vec::new();
        for i in 0..=8 {
            for j in 0..=3 {
                let (u, v) = (i as f64 * 0.5, j as f64 * 0.5);
                pts.push(Vector2::new(c * u - s * v + 3.0, s * u + c * v - 1.0));
            }
        }
        let r = min_area_rect(&pts).unwrap();
        assert_relative_eq!(r.size.x, 4.0, epsilon = 1e-9);
        assert_relative_eq!(r.size.y, 1.5, epsilon = 1e-9);
        assert_relative_eq!(r.yaw, yaw, epsilon = 1e-9);
    }

    #[test]
    fn wrap_range() {
        for a in [-10.0, -FRAC_PI_2, 0.0, FRAC_PI_2, 3.0, 7.5] {
            let w = wrap_half_pi(a);
            assert!((-FRAC_PI_2..FRAC_PI_2).contains(&w), "{a} -> {w}");
            assert_relative_eq!(((a - w) / PI).round() * PI, a - w, epsilon = 1e-9);
        }
    }

    #[test]
    fn contains_respects_yaw() {
        let b = OrientedBox { center: [0.0; 3], size: [4.0, 1.0, 1.0], yaw: FRAC_PI_2 };
        assert!(b.contains(&Vector3::new(0.0, 1.9, 0.0)));
        assert!(!b.contains(&Vector3::new(1.9, 0.0, 0.0)));
    }
}
