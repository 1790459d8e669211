//! Forward kinematics, point Jacobians, center of mass and the centroidal
//! momentum matrix.
//!
//! Jacobians here are world-aligned: rows `0..3` give the angular velocity of
//! the body in world axes, rows `3..6` the world velocity of the query point.
//! Callers that need body-frame angular rows rotate them (see
//! [`ForwardKinematics::body_angular_rows`]).

use nalgebra::{Dyn, Isometry3, Matrix3, OMatrix, Translation3, UnitQuaternion, U3, U6};

use super::{FrameId, JointConfiguration, LinkId, ModelError, RobotModel};
use crate::math::{skew, Pose, Vec3};

pub type Jacobian = OMatrix<f64, U6, Dyn>;
pub type Jacobian3 = OMatrix<f64, U3, Dyn>;

fn to_iso(p: &Pose) -> Isometry3<f64> {
    Isometry3::from_parts(Translation3::from(p.position), p.orientation)
}

fn from_iso(iso: &Isometry3<f64>) -> Pose {
    Pose::new(iso.translation.vector, iso.rotation)
}

/// World placement of every link for one configuration.
#[derive(Clone, Debug)]
pub struct ForwardKinematics {
    link_poses: Vec<Isometry3<f64>>,
    joint_axes: Vec<Vec3>,
    joint_origins: Vec<Vec3>,
    nv: usize,
}

pub fn forward_kinematics(model: &RobotModel, q: &JointConfiguration) -> Result<ForwardKinematics, ModelError> {
    model.check_dimension(q)?;
    let links = model.links();
    let joints = model.joints();
    let mut link_poses = Vec::with_capacity(links.len());
    let mut joint_axes = vec![Vec3::zeros(); joints.len()];
    let mut joint_origins = vec![Vec3::zeros(); joints.len()];
    // links are stored parent-before-child
    for link in links {
        match link.parent_joint {
            None => link_poses.push(to_iso(&q.base_pose)),
            Some(j) => {
                let joint = &joints[j];
                let joint_frame = link_poses[joint.parent_link] * to_iso(&joint.origin);
                let axis_world = joint_frame.rotation * joint.axis;
                joint_axes[j] = axis_world;
                joint_origins[j] = joint_frame.translation.vector;
                let rot = UnitQuaternion::from_axis_angle(
                    &nalgebra::Unit::new_unchecked(joint.axis),
                    q.joint_positions[j],
                );
                link_poses.push(joint_frame * rot);
            }
        }
    }
    Ok(ForwardKinematics {
        link_poses,
        joint_axes,
        joint_origins,
        nv: model.nv(),
    })
}

impl ForwardKinematics {
    pub fn link_pose(&self, link: LinkId) -> Pose {
        from_iso(&self.link_poses[link])
    }

    pub fn frame_pose(&self, model: &RobotModel, frame: FrameId) -> Pose {
        let f = &model.frames()[frame];
        from_iso(&(self.link_poses[f.link] * to_iso(&f.offset)))
    }

    pub fn frame_pose_by_name(&self, model: &RobotModel, name: &str) -> Result<Pose, ModelError> {
        Ok(self.frame_pose(model, model.frame_id(name)?))
    }

    /// Pose of every link and named frame, keyed by name.
    pub fn all_poses(&self, model: &RobotModel) -> std::collections::BTreeMap<String, Pose> {
        model
            .frames()
            .iter()
            .enumerate()
            .map(|(i, f)| (f.name.clone(), self.frame_pose(model, i)))
            .collect()
    }

    pub fn link_point(&self, link: LinkId, local: &Vec3) -> Vec3 {
        self.link_poses[link].transform_point(&(*local).into()).coords
    }

    /// Jacobian of the point `point` (world coordinates) rigidly attached to `link`.
    pub fn point_jacobian(&self, model: &RobotModel, link: LinkId, point: &Vec3) -> Jacobian {
        let mut jac = Jacobian::zeros(self.nv);
        self.point_jacobian_into(model, link, point, &mut jac);
        jac
    }

    pub fn point_jacobian_into(&self, model: &RobotModel, link: LinkId, point: &Vec3, jac: &mut Jacobian) {
        jac.fill(0.0);
        let base = &self.link_poses[0];
        let rb = base.rotation.to_rotation_matrix().into_inner();
        let r = point - base.translation.vector;
        // base angular velocity is body-frame: w_world = R_b w
        jac.fixed_view_mut::<3, 3>(0, 0).copy_from(&rb);
        jac.fixed_view_mut::<3, 3>(3, 0).copy_from(&(-skew(&r) * rb));
        jac.fixed_view_mut::<3, 3>(3, 3).copy_from(&Matrix3::identity());
        for &j in model.supports(link) {
            let axis = self.joint_axes[j];
            let lin = axis.cross(&(point - self.joint_origins[j]));
            let col = 6 + j;
            jac[(0, col)] = axis.x;
            jac[(1, col)] = axis.y;
            jac[(2, col)] = axis.z;
            jac[(3, col)] = lin.x;
            jac[(4, col)] = lin.y;
            jac[(5, col)] = lin.z;
        }
    }

    /// Angular rows of `jac` re-expressed in the axes of `orientation`.
    pub fn body_angular_rows(jac: &Jacobian, orientation: &UnitQuaternion<f64>) -> Jacobian3 {
        let rt = orientation.to_rotation_matrix().into_inner().transpose();
        rt * jac.fixed_rows::<3>(0)
    }
}

/// Jacobian of a named frame, evaluated at the world point `expressed_at`.
pub fn geometric_jacobian(
    model: &RobotModel,
    q: &JointConfiguration,
    body_frame: &str,
    expressed_at: &Vec3,
) -> Result<Jacobian, ModelError> {
    let frame = model.frame_id(body_frame)?;
    let fk = forward_kinematics(model, q)?;
    Ok(fk.point_jacobian(model, model.frames()[frame].link, expressed_at))
}

pub fn com_position(model: &RobotModel, fk: &ForwardKinematics) -> Vec3 {
    let mut acc = Vec3::zeros();
    for (i, link) in model.links().iter().enumerate() {
        acc += link.mass * fk.link_point(i, &link.com);
    }
    acc / model.total_mass()
}

/// Centroidal momentum matrix `A` (6 x nv), rows `(angular about CoM; linear)`.
///
/// `A * v` is the centroidal momentum; the linear block equals `m * J_com`.
pub fn centroidal_momentum_matrix(model: &RobotModel, fk: &ForwardKinematics) -> Jacobian {
    let com = com_position(model, fk);
    let nv = model.nv();
    let mut a = Jacobian::zeros(nv);
    let mut jac = Jacobian::zeros(nv);
    for (i, link) in model.links().iter().enumerate() {
        if link.mass == 0.0 && link.inertia == Matrix3::zeros() {
            continue;
        }
        let c = fk.link_point(i, &link.com);
        fk.point_jacobian_into(model, i, &c, &mut jac);
        let rot = fk.link_poses[i].rotation.to_rotation_matrix().into_inner();
        let inertia_world = rot * link.inertia * rot.transpose();
        let lever = skew(&(c - com)) * link.mass;
        let ang = jac.fixed_rows::<3>(0);
        let lin = jac.fixed_rows::<3>(3);
        let mut a_ang = a.fixed_rows_mut::<3>(0);
        a_ang.gemm(1.0, &inertia_world, &ang, 1.0);
        a_ang.gemm(1.0, &lever, &lin, 1.0);
        let mut a_lin = a.fixed_rows_mut::<3>(3);
        a_lin += lin * link.mass;
    }
    a
}

/// Linear CoM Jacobian `d com / dt = J_com v` (3 x nv).
pub fn com_jacobian(model: &RobotModel, fk: &ForwardKinematics) -> Jacobian3 {
    let nv = model.nv();
    let mut out = Jacobian3::zeros(nv);
    let mut jac = Jacobian::zeros(nv);
    for (i, link) in model.links().iter().enumerate() {
        if link.mass == 0.0 {
            continue;
        }
        let c = fk.link_point(i, &link.com);
        fk.point_jacobian_into(model, i, &c, &mut jac);
        out += jac.fixed_rows::<3>(3) * (link.mass / model.total_mass());
    }
    out
}
