//! Kinematic tree with mass properties, named frames and collision primitives.
//!
//! A model is loaded from a JSON document (see [`RobotModel::from_json_str`])
//! and is immutable afterwards. All kinematic queries live in [`kinematics`]
//! and [`collision`] and take the model by shared reference.

pub mod collision;
pub mod kinematics;

use std::collections::{BTreeMap, VecDeque};
use std::path::Path;

use nalgebra::{DVector, Matrix3};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::math::{Pose, Quat, Twist, Vec3};

pub use collision::{collision_proximity, pair_proximity, Proximity};
pub use kinematics::{
    centroidal_momentum_matrix, com_jacobian, com_position, forward_kinematics, geometric_jacobian, ForwardKinematics,
};

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("cannot read model file {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("model parse error at `{field}` (line {line}, column {column}): {message}")]
    Parse {
        field: String,
        line: usize,
        column: usize,
        message: String,
    },
    #[error("invalid model: {0}")]
    Invalid(String),
    #[error("configuration has {got} joint positions, model has {expected} revolute joints")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("unknown frame `{0}`")]
    UnknownFrame(String),
}

fn invalid(msg: impl Into<String>) -> ModelError {
    ModelError::Invalid(msg.into())
}

pub type LinkId = usize;
pub type JointId = usize;
pub type ShapeId = usize;
pub type FrameId = usize;

#[derive(Clone, Debug)]
pub struct Link {
    pub name: String,
    /// Revolute joint connecting this link to its parent; `None` for the floating root.
    pub parent_joint: Option<JointId>,
    pub mass: f64,
    /// Center of mass in the link frame.
    pub com: Vec3,
    /// Rotational inertia about the link CoM, link-frame axes.
    pub inertia: Matrix3<f64>,
}

#[derive(Clone, Debug)]
pub struct Joint {
    pub name: String,
    pub parent_link: LinkId,
    pub child_link: LinkId,
    pub axis: Vec3,
    /// Joint frame relative to the parent link frame at zero position.
    pub origin: Pose,
    pub q_min: f64,
    pub q_max: f64,
    pub velocity_limit: f64,
}

#[derive(Clone, Debug)]
pub struct Frame {
    pub name: String,
    pub link: LinkId,
    pub offset: Pose,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Primitive {
    Sphere { radius: f64, center: Vec3 },
    Capsule { radius: f64, a: Vec3, b: Vec3 },
}

impl Primitive {
    pub fn radius(&self) -> f64 {
        match *self {
            Primitive::Sphere { radius, .. } | Primitive::Capsule { radius, .. } => radius,
        }
    }

    /// Core segment of the swept sphere, in the link frame. A sphere is a degenerate segment.
    pub fn segment(&self) -> (Vec3, Vec3) {
        match *self {
            Primitive::Sphere { center, .. } => (center, center),
            Primitive::Capsule { a, b, .. } => (a, b),
        }
    }
}

#[derive(Clone, Debug)]
pub struct CollisionShape {
    pub name: String,
    pub link: LinkId,
    pub primitive: Primitive,
}

/// Immutable robot description. Generalized velocities are ordered
/// `(base angular [body], base linear [world], joint rates...)`.
#[derive(Clone, Debug)]
pub struct RobotModel {
    pub name: String,
    links: Vec<Link>,
    joints: Vec<Joint>,
    frames: Vec<Frame>,
    frame_index: BTreeMap<String, FrameId>,
    shapes: Vec<CollisionShape>,
    pairs: Vec<(ShapeId, ShapeId)>,
    foot_polygons: BTreeMap<String, Vec<[f64; 2]>>,
    hand_mounting: [Quat; 2],
    /// Revolute joints on the path from the root to each link, root first.
    supports: Vec<Vec<JointId>>,
    total_mass: f64,
    initial: Option<JointConfiguration>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct JointConfiguration {
    pub base_pose: Pose,
    pub joint_positions: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct JointVelocity {
    pub base_twist: Twist,
    pub joint_rates: Vec<f64>,
}

impl JointVelocity {
    pub fn zeros(num_joints: usize) -> Self {
        Self {
            base_twist: Twist::zero(),
            joint_rates: vec![0.0; num_joints],
        }
    }

    /// Stacks into the generalized-velocity layout `(w, v, qdot)`.
    pub fn to_vector(&self) -> DVector<f64> {
        let mut out = DVector::zeros(6 + self.joint_rates.len());
        out.fixed_rows_mut::<3>(0).copy_from(&self.base_twist.angular);
        out.fixed_rows_mut::<3>(3).copy_from(&self.base_twist.linear);
        for (i, r) in self.joint_rates.iter().enumerate() {
            out[6 + i] = *r;
        }
        out
    }

    pub fn from_vector(v: &DVector<f64>) -> Self {
        Self {
            base_twist: Twist::new(v.fixed_rows::<3>(3).into(), v.fixed_rows::<3>(0).into()),
            joint_rates: v.rows(6, v.len() - 6).iter().copied().collect(),
        }
    }
}

impl JointConfiguration {
    /// First-order update with the generalized velocity `v` over `dt`.
    pub fn integrate(&self, v: &JointVelocity, dt: f64) -> JointConfiguration {
        JointConfiguration {
            base_pose: self.base_pose.integrate(&v.base_twist, dt),
            joint_positions: self
                .joint_positions
                .iter()
                .zip(&v.joint_rates)
                .map(|(q, r)| q + r * dt)
                .collect(),
        }
    }
}

impl RobotModel {
    pub fn load(path: impl AsRef<Path>) -> Result<Self, ModelError> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|source| ModelError::Io {
            path: path.display().to_string(),
            source,
        })?;
        Self::from_json_str(&text)
    }

    pub fn from_json_str(text: &str) -> Result<Self, ModelError> {
        let de = &mut serde_json::Deserializer::from_str(text);
        let doc: ModelDoc = serde_path_to_error::deserialize(de).map_err(|e| {
            let field = match e.path().to_string() {
                p if p == "?" => "<document>".to_string(),
                p => p,
            };
            let inner = e.into_inner();
            ModelError::Parse {
                field,
                line: inner.line(),
                column: inner.column(),
                message: inner.to_string(),
            }
        })?;
        Self::from_doc(doc)
    }

    fn from_doc(doc: ModelDoc) -> Result<Self, ModelError> {
        let mut link_index = BTreeMap::new();
        for (i, l) in doc.links.iter().enumerate() {
            if link_index.insert(l.name.clone(), i).is_some() {
                return Err(invalid(format!("duplicate link `{}`", l.name)));
            }
        }
        let mut joint_index = BTreeMap::new();
        for (i, j) in doc.joints.iter().enumerate() {
            if joint_index.insert(j.name.clone(), i).is_some() {
                return Err(invalid(format!("duplicate joint `{}`", j.name)));
            }
        }

        let floating: Vec<_> = doc
            .joints
            .iter()
            .filter(|j| j.kind == JointKind::FloatingBase)
            .collect();
        if floating.len() != 1 {
            return Err(invalid(format!(
                "expected exactly one floating_base joint, found {}",
                floating.len()
            )));
        }
        let floating_name = floating[0].name.clone();

        // child link of every joint, from the links' parent_joint references
        let mut child_of_joint: BTreeMap<&str, usize> = BTreeMap::new();
        for (i, l) in doc.links.iter().enumerate() {
            if !joint_index.contains_key(&l.parent_joint) {
                return Err(invalid(format!(
                    "link `{}` references unknown parent joint `{}`",
                    l.name, l.parent_joint
                )));
            }
            if child_of_joint.insert(l.parent_joint.as_str(), i).is_some() {
                return Err(invalid(format!("joint `{}` has more than one child link", l.parent_joint)));
            }
            if !(l.mass >= 0.0 && l.mass.is_finite()) {
                return Err(invalid(format!("link `{}` has invalid mass {}", l.name, l.mass)));
            }
        }
        let root_doc = *child_of_joint
            .get(floating_name.as_str())
            .ok_or_else(|| invalid("floating_base joint has no child link"))?;

        // parent link for each doc joint
        let mut parent_of_joint = vec![usize::MAX; doc.joints.len()];
        for (ji, j) in doc.joints.iter().enumerate() {
            if !child_of_joint.contains_key(j.name.as_str()) {
                return Err(invalid(format!("joint `{}` has no child link", j.name)));
            }
            match j.kind {
                JointKind::FloatingBase => {
                    if j.parent_link.is_some() {
                        return Err(invalid("floating_base joint must not have a parent_link"));
                    }
                }
                JointKind::Revolute => {
                    let pl = j
                        .parent_link
                        .as_ref()
                        .ok_or_else(|| invalid(format!("revolute joint `{}` lacks parent_link", j.name)))?;
                    parent_of_joint[ji] = *link_index.get(pl).ok_or_else(|| {
                        invalid(format!("joint `{}` references unknown parent link `{}`", j.name, pl))
                    })?;
                    let [lo, hi] = j.limits;
                    if !(lo < hi) {
                        return Err(invalid(format!(
                            "joint `{}` has q_min >= q_max ({} >= {})",
                            j.name, lo, hi
                        )));
                    }
                    if !(j.velocity_limit > 0.0) {
                        return Err(invalid(format!("joint `{}` needs a positive velocity_limit", j.name)));
                    }
                    if Vec3::from(j.axis).norm() < 1e-9 {
                        return Err(invalid(format!("joint `{}` has a zero axis", j.name)));
                    }
                }
            }
        }

        // breadth-first from the root: detects cycles and disconnected links
        let mut children: Vec<Vec<usize>> = vec![Vec::new(); doc.links.len()];
        for (ji, j) in doc.joints.iter().enumerate() {
            if j.kind == JointKind::Revolute {
                children[parent_of_joint[ji]].push(ji);
            }
        }
        let mut order = Vec::with_capacity(doc.links.len());
        let mut visited = vec![false; doc.links.len()];
        let mut queue = VecDeque::from([root_doc]);
        while let Some(l) = queue.pop_front() {
            if visited[l] {
                return Err(invalid(format!("kinematic loop through link `{}`", doc.links[l].name)));
            }
            visited[l] = true;
            order.push(l);
            for &ji in &children[l] {
                queue.push_back(child_of_joint[doc.joints[ji].name.as_str()]);
            }
        }
        if let Some(l) = visited.iter().position(|v| !v) {
            return Err(invalid(format!(
                "link `{}` is not connected to the floating base (cycle or orphan)",
                doc.links[l].name
            )));
        }

        let mut new_link_id = vec![0; doc.links.len()];
        for (new, &old) in order.iter().enumerate() {
            new_link_id[old] = new;
        }

        let mut links = Vec::with_capacity(order.len());
        let mut joints = Vec::new();
        let mut supports: Vec<Vec<JointId>> = Vec::with_capacity(order.len());
        for &old in &order {
            let l = &doc.links[old];
            let dj = joint_index[&l.parent_joint];
            let jd = &doc.joints[dj];
            let parent_joint = match jd.kind {
                JointKind::FloatingBase => {
                    supports.push(Vec::new());
                    None
                }
                JointKind::Revolute => {
                    let parent_link = new_link_id[parent_of_joint[dj]];
                    let id = joints.len();
                    joints.push(Joint {
                        name: jd.name.clone(),
                        parent_link,
                        child_link: new_link_id[old],
                        axis: Vec3::from(jd.axis).normalize(),
                        origin: jd.origin,
                        q_min: jd.limits[0],
                        q_max: jd.limits[1],
                        velocity_limit: jd.velocity_limit,
                    });
                    let mut s = supports[parent_link].clone();
                    s.push(id);
                    supports.push(s);
                    Some(id)
                }
            };
            let [ixx, iyy, izz, ixy, ixz, iyz] = l.inertia;
            links.push(Link {
                name: l.name.clone(),
                parent_joint,
                mass: l.mass,
                com: Vec3::from(l.com),
                inertia: Matrix3::new(ixx, ixy, ixz, ixy, iyy, iyz, ixz, iyz, izz),
            });
        }
        let total_mass: f64 = links.iter().map(|l| l.mass).sum();
        if !(total_mass > 0.0) {
            return Err(invalid("total mass must be positive"));
        }

        let mut frames = Vec::new();
        let mut frame_index = BTreeMap::new();
        for (i, l) in links.iter().enumerate() {
            frame_index.insert(l.name.clone(), frames.len());
            frames.push(Frame {
                name: l.name.clone(),
                link: i,
                offset: Pose::identity(),
            });
        }
        for (name, f) in &doc.frames {
            let link = *link_index
                .get(&f.link)
                .ok_or_else(|| invalid(format!("frame `{}` references unknown link `{}`", name, f.link)))?;
            if frame_index.contains_key(name) {
                return Err(invalid(format!("frame `{name}` collides with an existing frame name")));
            }
            frame_index.insert(name.clone(), frames.len());
            frames.push(Frame {
                name: name.clone(),
                link: new_link_id[link],
                offset: f.offset,
            });
        }

        let mut shapes = Vec::new();
        let mut shape_index = BTreeMap::new();
        for s in &doc.collision_shapes {
            let link = *link_index
                .get(&s.link)
                .ok_or_else(|| invalid(format!("collision shape `{}` references unknown link `{}`", s.name, s.link)))?;
            let primitive = match s.primitive {
                PrimitiveDoc::Sphere { radius, center } => Primitive::Sphere {
                    radius,
                    center: Vec3::from(center),
                },
                PrimitiveDoc::Capsule { radius, a, b } => Primitive::Capsule {
                    radius,
                    a: Vec3::from(a),
                    b: Vec3::from(b),
                },
            };
            if !(primitive.radius() > 0.0) {
                return Err(invalid(format!("collision shape `{}` must have radius > 0", s.name)));
            }
            if shape_index.insert(s.name.clone(), shapes.len()).is_some() {
                return Err(invalid(format!("duplicate collision shape `{}`", s.name)));
            }
            shapes.push(CollisionShape {
                name: s.name.clone(),
                link: new_link_id[link],
                primitive,
            });
        }
        let mut pairs = Vec::new();
        for [a, b] in &doc.collision_pairs {
            let ia = *shape_index
                .get(a)
                .ok_or_else(|| invalid(format!("collision pair references unknown shape `{a}`")))?;
            let ib = *shape_index
                .get(b)
                .ok_or_else(|| invalid(format!("collision pair references unknown shape `{b}`")))?;
            if shapes[ia].link == shapes[ib].link {
                return Err(invalid(format!("collision pair `{a}`/`{b}` lies on a single link")));
            }
            pairs.push((ia, ib));
        }

        for (frame, poly) in &doc.foot_polygons {
            if !frame_index.contains_key(frame) {
                return Err(invalid(format!("foot polygon for unknown frame `{frame}`")));
            }
            if poly.len() < 3 {
                return Err(invalid(format!("foot polygon `{frame}` needs at least 3 vertices")));
            }
            if !crate::ik::support::is_convex_ccw(poly) {
                return Err(invalid(format!(
                    "foot polygon `{frame}` must be convex with counter-clockwise vertices"
                )));
            }
        }

        let mounting = |q: Option<[f64; 4]>| {
            q.map(|[w, x, y, z]| crate::math::quat_from_wxyz(w, x, y, z))
                .unwrap_or_else(Quat::identity)
        };
        let hand_mounting = [
            mounting(doc.hand_mounting.left),
            mounting(doc.hand_mounting.right),
        ];

        let mut model = RobotModel {
            name: doc.name,
            links,
            joints,
            frames,
            frame_index,
            shapes,
            pairs,
            foot_polygons: doc.foot_polygons,
            hand_mounting,
            supports,
            total_mass,
            initial: None,
        };

        if let Some(init) = doc.initial_configuration {
            let mut positions = vec![0.0; model.joints.len()];
            for (name, value) in &init.joints {
                let j = model
                    .joints
                    .iter()
                    .position(|j| &j.name == name)
                    .ok_or_else(|| invalid(format!("initial configuration names unknown joint `{name}`")))?;
                if *value < model.joints[j].q_min || *value > model.joints[j].q_max {
                    return Err(invalid(format!("initial position of `{name}` violates its limits")));
                }
                positions[j] = *value;
            }
            model.initial = Some(JointConfiguration {
                base_pose: init.base_pose,
                joint_positions: positions,
            });
        }
        Ok(model)
    }

    pub fn links(&self) -> &[Link] {
        &self.links
    }

    pub fn joints(&self) -> &[Joint] {
        &self.joints
    }

    pub fn frames(&self) -> &[Frame] {
        &self.frames
    }

    pub fn shapes(&self) -> &[CollisionShape] {
        &self.shapes
    }

    pub fn collision_pairs(&self) -> &[(ShapeId, ShapeId)] {
        &self.pairs
    }

    pub fn num_joints(&self) -> usize {
        self.joints.len()
    }

    /// Size of the generalized velocity vector.
    pub fn nv(&self) -> usize {
        6 + self.joints.len()
    }

    pub fn total_mass(&self) -> f64 {
        self.total_mass
    }

    pub fn supports(&self, link: LinkId) -> &[JointId] {
        &self.supports[link]
    }

    pub fn frame_id(&self, name: &str) -> Result<FrameId, ModelError> {
        self.frame_index
            .get(name)
            .copied()
            .ok_or_else(|| ModelError::UnknownFrame(name.to_string()))
    }

    pub fn joint_id(&self, name: &str) -> Option<JointId> {
        self.joints.iter().position(|j| j.name == name)
    }

    pub fn foot_polygon(&self, frame: &str) -> Option<&[[f64; 2]]> {
        self.foot_polygons.get(frame).map(Vec::as_slice)
    }

    /// Fixed rotation from a handheld controller frame to the robot hand frame, `[left, right]`.
    pub fn hand_mounting(&self) -> [Quat; 2] {
        self.hand_mounting
    }

    /// Configuration declared in the model file, or the zero configuration.
    pub fn initial_configuration(&self) -> JointConfiguration {
        self.initial.clone().unwrap_or_else(|| self.zero_configuration())
    }

    pub fn zero_configuration(&self) -> JointConfiguration {
        JointConfiguration {
            base_pose: Pose::identity(),
            joint_positions: self
                .joints
                .iter()
                .map(|j| 0.0f64.clamp(j.q_min, j.q_max))
                .collect(),
        }
    }

    pub fn check_dimension(&self, q: &JointConfiguration) -> Result<(), ModelError> {
        if q.joint_positions.len() != self.joints.len() {
            return Err(ModelError::DimensionMismatch {
                expected: self.joints.len(),
                got: q.joint_positions.len(),
            });
        }
        Ok(())
    }

    /// Clamps joint positions into their limits; returns how many were moved.
    pub fn clamp_to_limits(&self, q: &mut JointConfiguration) -> usize {
        let mut clamped = 0;
        for (v, j) in q.joint_positions.iter_mut().zip(&self.joints) {
            let c = v.clamp(j.q_min, j.q_max);
            if c != *v {
                *v = c;
                clamped += 1;
            }
        }
        clamped
    }

    pub fn within_limits(&self, q: &JointConfiguration) -> bool {
        q.joint_positions
            .iter()
            .zip(&self.joints)
            .all(|(v, j)| *v >= j.q_min && *v <= j.q_max)
    }
}

// ---------------------------------------------------------------------------
// file schema
// ---------------------------------------------------------------------------

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct ModelDoc {
    name: String,
    links: Vec<LinkDoc>,
    joints: Vec<JointDoc>,
    #[serde(default)]
    frames: BTreeMap<String, FrameDoc>,
    #[serde(default)]
    collision_shapes: Vec<ShapeDoc>,
    #[serde(default)]
    collision_pairs: Vec<[String; 2]>,
    #[serde(default)]
    foot_polygons: BTreeMap<String, Vec<[f64; 2]>>,
    #[serde(default)]
    hand_mounting: HandMountingDoc,
    #[serde(default)]
    initial_configuration: Option<InitialDoc>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct LinkDoc {
    name: String,
    parent_joint: String,
    mass: f64,
    #[serde(default)]
    com: [f64; 3],
    /// `[ixx, iyy, izz, ixy, ixz, iyz]` about the CoM
    #[serde(default)]
    inertia: [f64; 6],
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Deserialize)]
#[serde(rename_all = "snake_case")]
enum JointKind {
    Revolute,
    FloatingBase,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct JointDoc {
    name: String,
    #[serde(rename = "type")]
    kind: JointKind,
    #[serde(default)]
    parent_link: Option<String>,
    #[serde(default = "default_axis")]
    axis: [f64; 3],
    #[serde(default)]
    origin: Pose,
    #[serde(default = "default_limits")]
    limits: [f64; 2],
    #[serde(default = "default_velocity_limit")]
    velocity_limit: f64,
}

fn default_axis() -> [f64; 3] {
    [0.0, 0.0, 1.0]
}

fn default_limits() -> [f64; 2] {
    [-std::f64::consts::PI, std::f64::consts::PI]
}

fn default_velocity_limit() -> f64 {
    10.0
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct FrameDoc {
    link: String,
    #[serde(default)]
    offset: Pose,
}

#[derive(Deserialize)]
struct ShapeDoc {
    name: String,
    link: String,
    #[serde(flatten)]
    primitive: PrimitiveDoc,
}

#[derive(Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
enum PrimitiveDoc {
    Sphere {
        radius: f64,
        #[serde(default)]
        center: [f64; 3],
    },
    Capsule { radius: f64, a: [f64; 3], b: [f64; 3] },
}

#[derive(Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct HandMountingDoc {
    left: Option<[f64; 4]>,
    right: Option<[f64; 4]>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct InitialDoc {
    base_pose: Pose,
    #[serde(default)]
    joints: BTreeMap<String, f64>,
}

/// Models shipped with the crate.
pub mod bundled {
    pub const PLANAR_2R: &str = include_str!("../../data/models/planar_2r.model");
    pub const NADIA_LIKE: &str = include_str!("../../data/models/nadia_like.model");

    pub fn planar_2r() -> super::RobotModel {
        super::RobotModel::from_json_str(PLANAR_2R).expect("bundled planar_2r.model is valid")
    }

    pub fn nadia_like() -> super::RobotModel {
        super::RobotModel::from_json_str(NADIA_LIKE).expect("bundled nadia_like.model is valid")
    }
}
