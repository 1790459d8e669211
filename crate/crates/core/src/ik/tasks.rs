//! Motion tasks: what the IK tries to track each tick.

use serde::{Deserialize, Serialize};

use crate::input::{Predictions, LEFT_HAND, PELVIS, RIGHT_HAND};
use crate::math::{Pose, Twist, Vec3};
use crate::model::{FrameId, RobotModel};

use super::IKConfig;

/// Axis order of weights and selections: angular x, y, z, linear x, y, z.
pub type Axes = [bool; 6];

pub const ALL_AXES: Axes = [true; 6];
pub const ANGULAR_AXES: Axes = [true, true, true, false, false, false];
pub const LINEAR_AXES: Axes = [false, false, false, true, true, true];
/// Height and orientation.
pub const PELVIS_AXES: Axes = [true, true, true, false, false, true];
/// Ground-plane position.
pub const COM_AXES: Axes = [false, false, false, true, true, false];

pub const CHEST: &str = "chest";

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum TaskKind {
    /// Pose of a named frame. Angular error is taken in the frame's body axes.
    Spatial { frame: FrameId },
    /// Ground-plane center of mass.
    Com,
    /// Centroidal angular momentum driven to zero.
    MomentumMin,
}

#[derive(Clone, Debug, PartialEq)]
pub struct MotionTask {
    pub name: String,
    pub kind: TaskKind,
    /// Per-axis weight, see [`Axes`] for the order.
    pub weights: [f64; 6],
    pub gain: f64,
    pub selection: Axes,
    pub reference: Pose,
    /// Reference velocity; angular part in the reference's body axes.
    pub feedforward: Twist,
}

impl MotionTask {
    pub fn spatial(name: &str, frame: FrameId, weight: f64, gain: f64, selection: Axes, reference: Pose, feedforward: Twist) -> Self {
        Self {
            name: name.to_string(),
            kind: TaskKind::Spatial { frame },
            weights: [weight; 6],
            gain,
            selection,
            reference,
            feedforward,
        }
    }

    pub fn is_well_formed(&self) -> bool {
        self.weights.iter().all(|w| *w >= 0.0 && w.is_finite())
            && self.gain >= 0.0
            && self.selection.iter().any(|s| *s)
            && self.reference.is_finite()
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ComMode {
    /// Hold the CoM over the support polygon centroid.
    #[default]
    BalanceHold,
    /// Follow the operator's CoM ground point while it is streamed.
    TrackUser,
}

fn selection_from_flags(base: Axes, linear: bool, angular: bool) -> Axes {
    let mut s = base;
    for (i, v) in s.iter_mut().enumerate() {
        *v &= if i < 3 { angular } else { linear };
    }
    s
}

/// Tasks for every active prediction plus the CoM and momentum tasks.
///
/// `balance_point` is the ground-plane CoM target used in balance-hold mode
/// (and in tracking mode while no CoM input is active).
pub fn build_tasks(model: &RobotModel, predictions: &Predictions, balance_point: &Vec3, config: &IKConfig) -> Vec<MotionTask> {
    let w = &config.weights;
    let mut tasks = Vec::new();
    for (name, (pred, spec)) in &predictions.bodies {
        if !pred.active {
            continue;
        }
        let Ok(frame) = model.frame_id(name) else {
            log::warn!("no frame named `{name}`, target ignored");
            continue;
        };
        let (weight, axes) = match name.as_str() {
            LEFT_HAND | RIGHT_HAND => (w.hands, ALL_AXES),
            PELVIS => (w.pelvis, PELVIS_AXES),
            CHEST => (w.chest, ANGULAR_AXES),
            _ => (w.other, ALL_AXES),
        };
        let selection = selection_from_flags(axes, spec.linear, spec.angular);
        if !selection.iter().any(|s| *s) {
            continue;
        }
        tasks.push(MotionTask::spatial(name, frame, weight, config.gain, selection, pred.desired, pred.feedforward));
    }
    if let Some(chest) = predictions.chest.filter(|p| p.active) {
        if !predictions.bodies.get(CHEST).is_some_and(|(p, _)| p.active) {
            if let Ok(frame) = model.frame_id(CHEST) {
                tasks.push(MotionTask::spatial(
                    CHEST,
                    frame,
                    w.chest,
                    config.gain,
                    ANGULAR_AXES,
                    chest.desired,
                    Twist::new(Vec3::zeros(), chest.feedforward.angular),
                ));
            }
        }
    }

    let hold = (Vec3::new(balance_point.x, balance_point.y, 0.0), Twist::zero());
    let (com_ref, com_ff) = match (config.com_mode, predictions.com) {
        (ComMode::TrackUser, Some(p)) if p.active => (p.desired.position, Twist::new(p.feedforward.linear, Vec3::zeros())),
        _ => hold,
    };
    tasks.push(MotionTask {
        name: "com".into(),
        kind: TaskKind::Com,
        weights: [w.com; 6],
        gain: config.gain,
        selection: COM_AXES,
        reference: Pose::from_position(com_ref),
        feedforward: com_ff,
    });
    tasks.push(MotionTask {
        name: "momentum".into(),
        kind: TaskKind::MomentumMin,
        weights: [w.momentum; 6],
        gain: 0.0,
        selection: ANGULAR_AXES,
        reference: Pose::identity(),
        feedforward: Twist::zero(),
    });
    tasks
}

/// Foot pose target for a sole frame.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct FootTarget {
    pub frame: FrameId,
    pub pose: Pose,
    pub velocity: Twist,
}

/// High-weight tasks keeping the soles on their stance or swing trajectory.
pub fn contact_tasks(feet: &[FootTarget], config: &IKConfig) -> Vec<MotionTask> {
    feet.iter()
        .map(|f| {
            MotionTask::spatial(
                "foot_contact",
                f.frame,
                config.weights.feet,
                config.foot_gain,
                ALL_AXES,
                f.pose,
                f.velocity,
            )
        })
        .collect()
}
