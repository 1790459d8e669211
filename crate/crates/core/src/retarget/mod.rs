//! Maps a human tracker bundle to robot-space references.
//!
//! Calibration is implicit: the first bundle of a session is taken as the
//! reference posture. Human and robot share one world frame.

pub mod footstep;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::math::{canonicalize, Pose, Quat, Vec3};
use crate::model::{forward_kinematics, JointConfiguration, ModelError, RobotModel};

pub use footstep::{FootstepCommand, FootstepParams, FootstepStreamState, Side};

#[derive(Debug, Error)]
pub enum RetargetError {
    #[error("waist tracker too low for calibration ({0:.3} m)")]
    WaistTooLow(f64),
    #[error("estimated human arm length {0:.3} m is too short")]
    ArmTooShort(f64),
    #[error("head and chest trackers are {0:.3} m apart")]
    DegenerateHeadChest(f64),
    #[error("tracker bundle contains non-finite values")]
    NonFinite,
    #[error(transparent)]
    Model(#[from] ModelError),
}

/// One sample of the seven tracked frames, world coordinates.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrackerBundle {
    pub timestamp: f64,
    pub headset: Pose,
    pub controller_left: Pose,
    pub controller_right: Pose,
    pub chest: Pose,
    pub waist: Pose,
    pub ankle_left: Pose,
    pub ankle_right: Pose,
}

impl TrackerBundle {
    pub fn is_finite(&self) -> bool {
        self.timestamp.is_finite()
            && [
                &self.headset,
                &self.controller_left,
                &self.controller_right,
                &self.chest,
                &self.waist,
                &self.ankle_left,
                &self.ankle_right,
            ]
            .iter()
            .all(|p| p.is_finite())
    }

    pub fn controller(&self, side: Side) -> &Pose {
        match side {
            Side::Left => &self.controller_left,
            Side::Right => &self.controller_right,
        }
    }

    pub fn ankle(&self, side: Side) -> &Pose {
        match side {
            Side::Left => &self.ankle_left,
            Side::Right => &self.ankle_right,
        }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PelvisScaling {
    /// Scale the whole waist displacement vector.
    #[default]
    Full,
    /// Scale only the vertical component; horizontal displacement passes through.
    VerticalOnly,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RetargetParams {
    pub pelvis_scaling: PelvisScaling,
    pub footstep: FootstepParams,
}

#[derive(Clone, Debug, PartialEq)]
pub struct RetargetingCalibration {
    pub initial_bundle: TrackerBundle,
    pub robot_initial_pelvis: Pose,
    pub robot_initial_chest: Quat,
    pub delta_pelvis: f64,
    pub delta_arm: f64,
    pub arm_length_human: f64,
    pub arm_length_robot: f64,
    /// `[left, right]`
    pub shoulder_initial_human: [Pose; 2],
    pub pelvis_scaling: PelvisScaling,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct RobotReferences {
    pub pelvis: Pose,
    pub hand_left: Pose,
    pub hand_right: Pose,
    #[serde(with = "crate::math::serde_wxyz")]
    pub chest_orientation: Quat,
    /// Ground point, `z = 0`.
    pub com_ground: Vec3,
    pub timestamp: f64,
}

/// Robot-side geometry the references are anchored to.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RobotAnchors {
    /// Shoulder positions of the current robot state, `[left, right]`.
    pub shoulders: [Vec3; 2],
    /// Current stance sole poses, `[left, right]`.
    pub feet: [Pose; 2],
}

/// Frame names the retargeter reads from the model.
pub const LEFT_SHOULDER: &str = "left_shoulder";
pub const RIGHT_SHOULDER: &str = "right_shoulder";
pub const LEFT_HAND: &str = "left_hand";
pub const RIGHT_HAND: &str = "right_hand";
pub const LEFT_FOOT: &str = "left_foot";
pub const RIGHT_FOOT: &str = "right_foot";
pub const CHEST: &str = "chest";

const MIN_WAIST_HEIGHT: f64 = 0.3;
const MIN_ARM_LENGTH: f64 = 0.2;
const MIN_HEAD_CHEST: f64 = 0.1;
const MIN_FEET_SEPARATION: f64 = 1e-3;

/// Pelvis height above the soles with straight legs.
pub fn robot_pelvis_height(model: &RobotModel) -> Result<f64, ModelError> {
    let fk = forward_kinematics(model, &model.zero_configuration())?;
    let sole_z = fk
        .frame_pose_by_name(model, LEFT_FOOT)?
        .position
        .z
        .min(fk.frame_pose_by_name(model, RIGHT_FOOT)?.position.z);
    Ok(fk.link_pose(0).position.z - sole_z)
}

/// Mean shoulder-to-hand distance of the robot in configuration `q`.
pub fn robot_arm_length(model: &RobotModel, q: &JointConfiguration) -> Result<f64, ModelError> {
    let fk = forward_kinematics(model, q)?;
    let arm = |s: &str, h: &str| -> Result<f64, ModelError> {
        Ok((fk.frame_pose_by_name(model, h)?.position - fk.frame_pose_by_name(model, s)?.position).norm())
    };
    Ok(0.5 * (arm(LEFT_SHOULDER, LEFT_HAND)? + arm(RIGHT_SHOULDER, RIGHT_HAND)?))
}

pub fn initialize_calibration(
    bundle: &TrackerBundle,
    model: &RobotModel,
    robot_state: &JointConfiguration,
    pelvis_scaling: PelvisScaling,
) -> Result<RetargetingCalibration, RetargetError> {
    if !bundle.is_finite() {
        return Err(RetargetError::NonFinite);
    }
    let pelvis_height = robot_pelvis_height(model)?;
    let arm_length_robot = robot_arm_length(model, robot_state)?;
    let fk = forward_kinematics(model, robot_state)?;
    let h_human = bundle.waist.position.z;
    if h_human <= MIN_WAIST_HEIGHT {
        return Err(RetargetError::WaistTooLow(h_human));
    }
    let shoulders = estimate_shoulders(bundle)?;
    calibration_from_lengths(
        bundle,
        fk.link_pose(0),
        fk.frame_pose_by_name(model, CHEST)?.orientation,
        pelvis_height,
        arm_length_robot,
        shoulders,
        pelvis_scaling,
    )
}

/// Calibration from explicit robot reference lengths.
pub fn calibration_from_lengths(
    bundle: &TrackerBundle,
    robot_pelvis: Pose,
    robot_chest: Quat,
    pelvis_height_robot: f64,
    arm_length_robot: f64,
    shoulders: [Pose; 2],
    pelvis_scaling: PelvisScaling,
) -> Result<RetargetingCalibration, RetargetError> {
    let h_human = bundle.waist.position.z;
    if h_human <= MIN_WAIST_HEIGHT {
        return Err(RetargetError::WaistTooLow(h_human));
    }
    let arm_length_human = 0.5
        * ((bundle.controller_left.position - shoulders[0].position).norm()
            + (bundle.controller_right.position - shoulders[1].position).norm());
    if arm_length_human < MIN_ARM_LENGTH {
        return Err(RetargetError::ArmTooShort(arm_length_human));
    }
    Ok(RetargetingCalibration {
        initial_bundle: *bundle,
        robot_initial_pelvis: robot_pelvis,
        robot_initial_chest: robot_chest,
        delta_pelvis: pelvis_height_robot / h_human,
        delta_arm: arm_length_robot / arm_length_human,
        arm_length_human,
        arm_length_robot,
        shoulder_initial_human: shoulders,
        pelvis_scaling,
    })
}

/// Relative rotation with its roll dropped (intrinsic z-y-x factorization).
pub fn drop_roll(rel: &Quat) -> Quat {
    let (_roll, pitch, yaw) = rel.euler_angles();
    canonicalize(Quat::from_euler_angles(0.0, pitch, yaw))
}

pub fn retarget_pelvis(cal: &RetargetingCalibration, bundle: &TrackerBundle) -> Pose {
    let waist0 = &cal.initial_bundle.waist;
    let mut disp = bundle.waist.position - waist0.position;
    match cal.pelvis_scaling {
        PelvisScaling::Full => disp *= cal.delta_pelvis,
        PelvisScaling::VerticalOnly => disp.z *= cal.delta_pelvis,
    }
    let rel = bundle.waist.orientation * waist0.orientation.inverse();
    Pose::new(
        cal.robot_initial_pelvis.position + disp,
        cal.robot_initial_pelvis.orientation * drop_roll(&rel),
    )
}

/// Head length from the head-chest distance.
pub fn head_length(bundle: &TrackerBundle) -> Result<f64, RetargetError> {
    let d = (bundle.headset.position - bundle.chest.position).norm();
    if d.is_nan() || d <= MIN_HEAD_CHEST {
        return Err(RetargetError::DegenerateHeadChest(d));
    }
    Ok(d / 1.5)
}

/// Human shoulder poses `[left, right]`. The lateral offset follows the chest
/// tracker's y axis; the vertical offset is along world z.
pub fn estimate_shoulders(bundle: &TrackerBundle) -> Result<[Pose; 2], RetargetError> {
    let l_head = head_length(bundle)?;
    let chest = &bundle.chest;
    let up = Vec3::new(0.0, 0.0, 0.5 * (bundle.headset.position.z - chest.position.z));
    let shoulder = |sign: f64| {
        let lateral = chest.orientation * Vec3::new(0.0, sign * l_head, 0.0);
        Pose::new(chest.position + lateral + up, chest.orientation)
    };
    Ok([shoulder(1.0), shoulder(-1.0)])
}

/// Robot hand targets `[left, right]`.
pub fn retarget_hands(
    cal: &RetargetingCalibration,
    bundle: &TrackerBundle,
    robot_shoulders: &[Vec3; 2],
    mounting: &[Quat; 2],
) -> Result<[Pose; 2], RetargetError> {
    let human = estimate_shoulders(bundle)?;
    let hand = |i: usize, controller: &Pose| {
        Pose::new(
            robot_shoulders[i] + (controller.position - human[i].position) * cal.delta_arm,
            controller.orientation * mounting[i],
        )
    };
    Ok([hand(0, &bundle.controller_left), hand(1, &bundle.controller_right)])
}

pub fn retarget_chest(cal: &RetargetingCalibration, bundle: &TrackerBundle) -> Quat {
    let rel = bundle.chest.orientation * cal.initial_bundle.chest.orientation.inverse();
    canonicalize(cal.robot_initial_chest * rel)
}

fn ground(p: &Vec3) -> Vec3 {
    Vec3::new(p.x, p.y, 0.0)
}

/// Normalized offset of the waist along the human feet line, clamped to `[0, 1]`,
/// and the matching robot ground point. `None` when either stance is degenerate.
pub fn retarget_com(bundle: &TrackerBundle, robot_feet_ground: &[Vec3; 2]) -> Option<(Vec3, f64)> {
    let waist = ground(&bundle.waist.position);
    let lf = ground(&bundle.ankle_left.position);
    let rf = ground(&bundle.ankle_right.position);
    let line = rf - lf;
    let robot_l = ground(&robot_feet_ground[0]);
    let robot_r = ground(&robot_feet_ground[1]);
    if line.norm() <= MIN_FEET_SEPARATION || (robot_r - robot_l).norm() <= MIN_FEET_SEPARATION {
        return None;
    }
    let o = ((waist - lf).dot(&line) / line.norm_squared()).clamp(0.0, 1.0);
    Some((robot_l + (robot_r - robot_l) * o, o))
}

#[derive(Clone, Debug, PartialEq)]
pub struct RetargetOutput {
    pub references: RobotReferences,
    pub footstep: Option<FootstepCommand>,
}

/// Stateful retargeter: calibrates on the first bundle, then maps every bundle.
#[derive(Clone, Debug)]
pub struct Retargeter {
    params: RetargetParams,
    pelvis_height_robot: f64,
    arm_length_robot: f64,
    robot_pelvis: Pose,
    robot_chest: Quat,
    mounting: [Quat; 2],
    calibration: Option<RetargetingCalibration>,
    footsteps: Option<FootstepStreamState>,
    last_com: Option<Vec3>,
}

impl Retargeter {
    pub fn new(model: &RobotModel, robot_state: &JointConfiguration, params: RetargetParams) -> Result<Self, RetargetError> {
        let pelvis_height_robot = robot_pelvis_height(model)?;
        let arm_length_robot = robot_arm_length(model, robot_state)?;
        let fk = forward_kinematics(model, robot_state)?;
        Ok(Self {
            params,
            pelvis_height_robot,
            arm_length_robot,
            robot_pelvis: fk.link_pose(0),
            robot_chest: fk.frame_pose_by_name(model, CHEST)?.orientation,
            mounting: model.hand_mounting(),
            calibration: None,
            footsteps: None,
            last_com: None,
        })
    }

    pub fn calibration(&self) -> Option<&RetargetingCalibration> {
        self.calibration.as_ref()
    }

    pub fn footstep_state(&self) -> Option<&FootstepStreamState> {
        self.footsteps.as_ref()
    }

    pub fn process(&mut self, bundle: &TrackerBundle, anchors: &RobotAnchors) -> Result<RetargetOutput, RetargetError> {
        if !bundle.is_finite() {
            return Err(RetargetError::NonFinite);
        }
        if self.calibration.is_none() {
            let shoulders = estimate_shoulders(bundle)?;
            self.calibration = Some(calibration_from_lengths(
                bundle,
                self.robot_pelvis,
                self.robot_chest,
                self.pelvis_height_robot,
                self.arm_length_robot,
                shoulders,
                self.params.pelvis_scaling,
            )?);
            self.footsteps = Some(FootstepStreamState::new(bundle));
        }
        let cal = self.calibration.as_ref().expect("calibrated above");
        let pelvis = retarget_pelvis(cal, bundle);
        let [hand_left, hand_right] = retarget_hands(cal, bundle, &anchors.shoulders, &self.mounting)?;
        let feet_ground = [ground(&anchors.feet[0].position), ground(&anchors.feet[1].position)];
        let com_ground = match retarget_com(bundle, &feet_ground) {
            Some((c, _)) => c,
            None => self.last_com.unwrap_or_else(|| (feet_ground[0] + feet_ground[1]) * 0.5),
        };
        self.last_com = Some(com_ground);
        let footstep = self
            .footsteps
            .as_mut()
            .expect("initialized with the calibration")
            .update(bundle, &anchors.feet, &self.params.footstep);
        Ok(RetargetOutput {
            references: RobotReferences {
                pelvis,
                hand_left,
                hand_right,
                chest_orientation: retarget_chest(cal, bundle),
                com_ground,
                timestamp: bundle.timestamp,
            },
            footstep,
        })
    }
}
