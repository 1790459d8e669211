//! Rotation and rigid-body primitives shared by the whole pipeline.
//!
//! Conventions, fixed everywhere in this crate:
//!
//! * quaternions are stored `(w, x, y, z)` and kept on the `w >= 0` hemisphere;
//! * 6-vectors are ordered `(angular, linear)`;
//! * a [`Twist`] carries its linear part in the world frame and its angular part
//!   in the body-fixed frame of the pose it refers to. Orientation integration is
//!   therefore a right multiplication: `q <- q * exp(w * dt)`.

use nalgebra::{Quaternion, Unit, Vector3};
use serde::{Deserialize, Serialize};

pub type Vec3 = Vector3<f64>;
pub type Quat = nalgebra::UnitQuaternion<f64>;

/// Below this norm of the vector part, `quat_log` switches to its series form.
const LOG_SERIES_THRESHOLD: f64 = 1e-8;
/// Below this rotation angle, `quat_exp` switches to its series form.
const EXP_SERIES_THRESHOLD: f64 = 1e-8;

/// Flips `q` onto the `w >= 0` hemisphere and renormalizes.
pub fn canonicalize(q: Quat) -> Quat {
    let raw = q.into_inner();
    let raw = if raw.w < 0.0 { -raw } else { raw };
    Unit::new_normalize(raw)
}

/// Builds a canonical unit quaternion from `(w, x, y, z)` components.
pub fn quat_from_wxyz(w: f64, x: f64, y: f64, z: f64) -> Quat {
    canonicalize(Unit::new_normalize(Quaternion::new(w, x, y, z)))
}

pub fn quat_to_wxyz(q: &Quat) -> [f64; 4] {
    [q.w, q.i, q.j, q.k]
}

/// Rotation vector `angle * axis` of `q`, with `angle` in `[0, pi]`.
pub fn quat_log(q: &Quat) -> Vec3 {
    let raw = q.into_inner();
    let norm = raw.norm();
    let (w, v) = if raw.w < 0.0 {
        (-raw.w / norm, -raw.imag() / norm)
    } else {
        (raw.w / norm, raw.imag() / norm)
    };
    let s = v.norm();
    if s < LOG_SERIES_THRESHOLD {
        // atan2(s, w) / s ~ 1/w - s^2 / (3 w^3)
        return v * (2.0 / w) * (1.0 - s * s / (3.0 * w * w));
    }
    v * (2.0 * s.atan2(w) / s)
}

/// Inverse of [`quat_log`]: the unit quaternion rotating by `|v|` about `v`.
pub fn quat_exp(v: &Vec3) -> Quat {
    let theta = v.norm();
    let half = 0.5 * theta;
    let (w, scale) = if theta < EXP_SERIES_THRESHOLD {
        (1.0 - theta * theta / 8.0, 0.5 - theta * theta / 48.0)
    } else {
        (half.cos(), half.sin() / theta)
    };
    let q = Quaternion::new(w, v.x * scale, v.y * scale, v.z * scale);
    canonicalize(Unit::new_normalize(q))
}

/// Yaw of `q` from the intrinsic z-y-x factorization.
pub fn yaw_of(q: &Quat) -> f64 {
    q.euler_angles().2
}

pub fn quat_from_yaw(yaw: f64) -> Quat {
    canonicalize(Quat::from_axis_angle(&Vec3::z_axis(), yaw))
}

/// Wraps an angle to `(-pi, pi]`.
pub fn wrap_angle(a: f64) -> f64 {
    let two_pi = std::f64::consts::TAU;
    let mut r = a.rem_euclid(two_pi);
    if r > std::f64::consts::PI {
        r -= two_pi;
    }
    r
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(from = "PoseRepr", into = "PoseRepr")]
pub struct Pose {
    pub position: Vec3,
    pub orientation: Quat,
}

impl Default for Pose {
    fn default() -> Self {
        Self::identity()
    }
}

impl Pose {
    pub fn new(position: Vec3, orientation: Quat) -> Self {
        Self {
            position,
            orientation: canonicalize(orientation),
        }
    }

    pub fn identity() -> Self {
        Self {
            position: Vec3::zeros(),
            orientation: Quat::identity(),
        }
    }

    pub fn from_position(position: Vec3) -> Self {
        Self {
            position,
            orientation: Quat::identity(),
        }
    }

    /// `self * other`: `other` expressed in `self`'s frame, mapped to the parent frame.
    pub fn compose(&self, other: &Pose) -> Pose {
        Pose::new(
            self.position + self.orientation * other.position,
            self.orientation * other.orientation,
        )
    }

    pub fn inverse(&self) -> Pose {
        let inv = self.orientation.inverse();
        Pose::new(-(inv * self.position), inv)
    }

    pub fn transform_point(&self, p: &Vec3) -> Vec3 {
        self.position + self.orientation * p
    }

    pub fn inverse_transform_point(&self, p: &Vec3) -> Vec3 {
        self.orientation.inverse() * (p - self.position)
    }

    /// Advances the pose by `twist` over `dt` (first-order; body-frame rotation).
    pub fn integrate(&self, twist: &Twist, dt: f64) -> Pose {
        Pose::new(
            self.position + twist.linear * dt,
            self.orientation * quat_exp(&(twist.angular * dt)),
        )
    }

    pub fn is_finite(&self) -> bool {
        self.position.iter().all(|v| v.is_finite())
            && quat_to_wxyz(&self.orientation).iter().all(|v| v.is_finite())
    }
}

#[derive(Serialize, Deserialize)]
struct PoseRepr {
    position: [f64; 3],
    /// `[w, x, y, z]`
    orientation: [f64; 4],
}

impl From<PoseRepr> for Pose {
    fn from(r: PoseRepr) -> Self {
        let [w, x, y, z] = r.orientation;
        Pose {
            position: Vec3::from(r.position),
            orientation: quat_from_wxyz(w, x, y, z),
        }
    }
}

impl From<Pose> for PoseRepr {
    fn from(p: Pose) -> Self {
        PoseRepr {
            position: p.position.into(),
            orientation: quat_to_wxyz(&p.orientation),
        }
    }
}

/// Serde adapter writing a bare quaternion as `[w, x, y, z]`.
pub mod serde_wxyz {
    use super::{quat_from_wxyz, quat_to_wxyz, Quat};
    use serde::{Deserialize, Deserializer, Serialize, Serializer};

    pub fn serialize<S: Serializer>(q: &Quat, s: S) -> Result<S::Ok, S::Error> {
        quat_to_wxyz(q).serialize(s)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Quat, D::Error> {
        let [w, x, y, z] = <[f64; 4]>::deserialize(d)?;
        Ok(quat_from_wxyz(w, x, y, z))
    }

    pub mod option {
        use super::super::{quat_from_wxyz, quat_to_wxyz, Quat};
        use serde::{Deserialize, Deserializer, Serialize, Serializer};

        pub fn serialize<S: Serializer>(q: &Option<Quat>, s: S) -> Result<S::Ok, S::Error> {
            q.as_ref().map(quat_to_wxyz).serialize(s)
        }

        pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Option<Quat>, D::Error> {
            Ok(Option::<[f64; 4]>::deserialize(d)?.map(|[w, x, y, z]| quat_from_wxyz(w, x, y, z)))
        }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Twist {
    pub linear: Vec3,
    pub angular: Vec3,
}

impl Twist {
    pub fn new(linear: Vec3, angular: Vec3) -> Self {
        Self { linear, angular }
    }

    pub fn zero() -> Self {
        Self::default()
    }

    pub fn scaled(&self, s: f64) -> Twist {
        Twist::new(self.linear * s, self.angular * s)
    }
}

impl std::ops::Add for Twist {
    type Output = Twist;

    fn add(self, rhs: Twist) -> Twist {
        Twist::new(self.linear + rhs.linear, self.angular + rhs.angular)
    }
}

/// Proportional feedback on the error transform between `current` and `desired`.
///
/// The angular part is expressed in the body frame of `current`.
pub fn pose_feedback(current: &Pose, desired: &Pose, gain: f64) -> Twist {
    let linear = (desired.position - current.position) * gain;
    let rot_err = current.orientation.inverse() * desired.orientation;
    Twist::new(linear, quat_log(&rot_err) * gain)
}

/// Skew-symmetric cross-product matrix of `v`.
pub fn skew(v: &Vec3) -> nalgebra::Matrix3<f64> {
    nalgebra::Matrix3::new(0.0, -v.z, v.y, v.z, 0.0, -v.x, -v.y, v.x, 0.0)
}
