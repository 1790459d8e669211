//! Planar convex polygons for the support region.

use nalgebra::Vector2;

use crate::math::Pose;

pub type Point2 = Vector2<f64>;

/// True when `poly` is strictly convex with counter-clockwise winding.
pub fn is_convex_ccw(poly: &[[f64; 2]]) -> bool {
    let n = poly.len();
    if n < 3 {
        return false;
    }
    (0..n).all(|i| {
        let a = Point2::from(poly[i]);
        let b = Point2::from(poly[(i + 1) % n]);
        let c = Point2::from(poly[(i + 2) % n]);
        cross(&(b - a), &(c - b)) > 0.0
    })
}

fn cross(a: &Point2, b: &Point2) -> f64 {
    a.x * b.y - a.y * b.x
}

/// Andrew's monotone chain; returns the hull counter-clockwise without collinear points.
pub fn convex_hull(points: &[Point2]) -> Vec<Point2> {
    let mut pts: Vec<Point2> = points.to_vec();
    pts.sort_by(|a, b| a.x.total_cmp(&b.x).then(a.y.total_cmp(&b.y)));
    pts.dedup();
    if pts.len() < 3 {
        return pts;
    }
    let mut lower: Vec<Point2> = Vec::new();
    for p in &pts {
        while lower.len() >= 2 && cross(&(lower[lower.len() - 1] - lower[lower.len() - 2]), &(p - lower[lower.len() - 1])) <= 0.0 {
            lower.pop();
        }
        lower.push(*p);
    }
    let mut upper: Vec<Point2> = Vec::new();
    for p in pts.iter().rev() {
        while upper.len() >= 2 && cross(&(upper[upper.len() - 1] - upper[upper.len() - 2]), &(p - upper[upper.len() - 1])) <= 0.0 {
            upper.pop();
        }
        upper.push(*p);
    }
    lower.pop();
    upper.pop();
    lower.extend(upper);
    lower
}

/// One polygon edge as a half-plane `normal . p >= offset` (inward unit normal).
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Edge {
    pub normal: Point2,
    pub offset: f64,
}

impl Edge {
    /// Signed distance of `p` to the edge line, positive inside.
    pub fn distance(&self, p: &Point2) -> f64 {
        self.normal.dot(p) - self.offset
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SupportPolygon {
    vertices: Vec<Point2>,
    edges: Vec<Edge>,
}

impl SupportPolygon {
    /// Hull of foot sole polygons placed at the given sole poses (projected on the ground).
    pub fn from_feet(feet: &[(Pose, &[[f64; 2]])]) -> Self {
        let mut pts = Vec::new();
        for (pose, poly) in feet {
            for v in poly.iter() {
                let w = pose.transform_point(&crate::math::Vec3::new(v[0], v[1], 0.0));
                pts.push(Point2::new(w.x, w.y));
            }
        }
        Self::from_points(&pts)
    }

    pub fn from_points(points: &[Point2]) -> Self {
        let vertices = convex_hull(points);
        let n = vertices.len();
        let edges = (0..n)
            .map(|i| {
                let a = vertices[i];
                let b = vertices[(i + 1) % n];
                let d = (b - a).normalize();
                let normal = Point2::new(-d.y, d.x);
                Edge {
                    normal,
                    offset: normal.dot(&a),
                }
            })
            .collect();
        Self { vertices, edges }
    }

    pub fn vertices(&self) -> &[Point2] {
        &self.vertices
    }

    pub fn edges(&self) -> &[Edge] {
        &self.edges
    }

    /// Smallest signed edge distance; positive strictly inside.
    pub fn signed_distance(&self, p: &Point2) -> f64 {
        self.edges
            .iter()
            .map(|e| e.distance(p))
            .fold(f64::INFINITY, f64::min)
    }

    /// Whether `p` lies inside the polygon shrunk inwards by `margin`.
    pub fn contains_shrunk(&self, p: &Point2, margin: f64, tol: f64) -> bool {
        self.signed_distance(p) >= margin - tol
    }

    pub fn centroid(&self) -> Point2 {
        // area-weighted centroid
        let n = self.vertices.len();
        let mut area = 0.0;
        let mut c = Point2::zeros();
        for i in 0..n {
            let a = self.vertices[i];
            let b = self.vertices[(i + 1) % n];
            let w = cross(&a, &b);
            area += w;
            c += (a + b) * w;
        }
        if area.abs() < 1e-15 {
            return self.vertices.iter().sum::<Point2>() / n.max(1) as f64;
        }
        c / (3.0 * area)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::math::{quat_from_yaw, Vec3};

    #[test]
    fn convexity_check() {
        assert!(is_convex_ccw(&[[0.0, 0.0], [1.0, 0.0], [1.0, 1.0], [0.0, 1.0]]));
        assert!(!is_convex_ccw(&[[0.0, 0.0], [0.0, 1.0], [1.0, 1.0], [1.0, 0.0]]));
        assert!(!is_convex_ccw(&[[0.0, 0.0], [2.0, 0.0], [1.0, 0.2], [2.0, 2.0], [0.0, 2.0]]));
        assert!(!is_convex_ccw(&[[0.0, 0.0], [1.0, 0.0]]));
    }

    #[test]
    fn hull_of_two_feet() {
        let sole = [[-0.1, -0.05], [0.1, -0.05], [0.1, 0.05], [-0.1, 0.05]];
        let left = Pose::from_position(Vec3::new(0.0, 0.1, 0.0));
        let right = Pose::from_position(Vec3::new(0.0, -0.1, 0.0));
        let poly = SupportPolygon::from_feet(&[(left, &sole), (right, &sole)]);
        assert_eq!(poly.vertices().len(), 4);
        assert!((poly.signed_distance(&Point2::zeros()) - 0.1).abs() < 1e-12);
        assert!(poly.centroid().norm() < 1e-12);
        assert!(poly.contains_shrunk(&Point2::new(0.05, 0.0), 0.02, 0.0));
        assert!(!poly.contains_shrunk(&Point2::new(0.09, 0.0), 0.02, 0.0));
    }

    #[test]
    fn rotated_foot_hull_contains_center() {
        let sole = [[-0.1, -0.05], [0.1, -0.05], [0.1, 0.05], [-0.1, 0.05]];
        let foot = Pose::new(Vec3::new(1.0, 1.0, 0.0), quat_from_yaw(0.7));
        let poly = SupportPolygon::from_feet(&[(foot, &sole)]);
        assert!((poly.signed_distance(&Point2::new(1.0, 1.0)) - 0.05).abs() < 1e-12);
    }
}
