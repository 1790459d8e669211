//! Closest-point queries between swept-sphere primitives (spheres and capsules).

use super::{ForwardKinematics, RobotModel, ShapeId};
use crate::math::Vec3;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Proximity {
    pub shape_a: ShapeId,
    pub shape_b: ShapeId,
    /// Closest point on the surface of `a`, world frame.
    pub point_a: Vec3,
    pub point_b: Vec3,
    /// Unit vector from `a` towards `b`.
    pub axis: Vec3,
    /// Signed separation; negative when the shapes interpenetrate.
    pub distance: f64,
}

/// Closest points between segments `[p1, q1]` and `[p2, q2]`; returns the
/// segment parameters `(s, t)`. Degenerate segments (points) are allowed.
pub fn closest_segment_params(p1: &Vec3, q1: &Vec3, p2: &Vec3, q2: &Vec3) -> (f64, f64) {
    const EPS: f64 = 1e-18;
    let d1 = q1 - p1;
    let d2 = q2 - p2;
    let r = p1 - p2;
    let a = d1.dot(&d1);
    let e = d2.dot(&d2);
    let f = d2.dot(&r);
    if a <= EPS && e <= EPS {
        return (0.0, 0.0);
    }
    if a <= EPS {
        return (0.0, (f / e).clamp(0.0, 1.0));
    }
    let c = d1.dot(&r);
    if e <= EPS {
        return ((-c / a).clamp(0.0, 1.0), 0.0);
    }
    let b = d1.dot(&d2);
    let denom = a * e - b * b;
    let mut s = if denom > EPS * a * e {
        ((b * f - c * e) / denom).clamp(0.0, 1.0)
    } else {
        0.0
    };
    let mut t = (b * s + f) / e;
    if t < 0.0 {
        t = 0.0;
        s = (-c / a).clamp(0.0, 1.0);
    } else if t > 1.0 {
        t = 1.0;
        s = ((b - c) / a).clamp(0.0, 1.0);
    }
    (s, t)
}

fn world_segment(model: &RobotModel, fk: &ForwardKinematics, shape: ShapeId) -> (Vec3, Vec3, f64) {
    let s = &model.shapes()[shape];
    let (a, b) = s.primitive.segment();
    (fk.link_point(s.link, &a), fk.link_point(s.link, &b), s.primitive.radius())
}

fn proximity_ordered(model: &RobotModel, fk: &ForwardKinematics, a: ShapeId, b: ShapeId) -> Proximity {
    let (p1, q1, ra) = world_segment(model, fk, a);
    let (p2, q2, rb) = world_segment(model, fk, b);
    let (s, t) = closest_segment_params(&p1, &q1, &p2, &q2);
    let ca = p1 + (q1 - p1) * s;
    let cb = p2 + (q2 - p2) * t;
    let delta = cb - ca;
    let center_dist = delta.norm();
    // coincident cores: any axis is a valid separating direction
    let axis = if center_dist > 1e-12 { delta / center_dist } else { Vec3::z() };
    Proximity {
        shape_a: a,
        shape_b: b,
        point_a: ca + axis * ra,
        point_b: cb - axis * rb,
        axis,
        distance: center_dist - ra - rb,
    }
}

/// Proximity report for one pair. Swapping `a` and `b` negates the axis and
/// leaves the distance bit-identical.
pub fn pair_proximity(model: &RobotModel, fk: &ForwardKinematics, a: ShapeId, b: ShapeId) -> Proximity {
    if a <= b {
        proximity_ordered(model, fk, a, b)
    } else {
        let p = proximity_ordered(model, fk, b, a);
        Proximity {
            shape_a: a,
            shape_b: b,
            point_a: p.point_b,
            point_b: p.point_a,
            axis: -p.axis,
            distance: p.distance,
        }
    }
}

pub fn collision_proximity(model: &RobotModel, fk: &ForwardKinematics, pairs: &[(ShapeId, ShapeId)]) -> Vec<Proximity> {
    pairs.iter().map(|&(a, b)| pair_proximity(model, fk, a, b)).collect()
}
