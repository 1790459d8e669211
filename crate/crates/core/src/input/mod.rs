//! Motion inputs: safety validation and per-body prediction.

pub mod estimator;

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::math::{quat_log, Pose, Quat, Vec3};
use crate::retarget::RobotReferences;

pub use estimator::{BodyEstimator, EstimatorBank, EstimatorMode, EstimatorParams, Prediction, Predictions};

fn yes() -> bool {
    true
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TargetSpec {
    pub pose: Pose,
    #[serde(default = "yes")]
    pub linear: bool,
    #[serde(default = "yes")]
    pub angular: bool,
}

impl TargetSpec {
    pub fn full(pose: Pose) -> Self {
        Self {
            pose,
            linear: true,
            angular: true,
        }
    }
}

/// One robot-space input sample. Target keys are model frame names.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct MotionInput {
    pub timestamp: f64,
    #[serde(default)]
    pub targets: BTreeMap<String, TargetSpec>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub com_ground: Option<Vec3>,
    #[serde(
        default,
        skip_serializing_if = "Option::is_none",
        with = "crate::math::serde_wxyz::option"
    )]
    pub chest_orientation: Option<Quat>,
}

pub const LEFT_HAND: &str = "left_hand";
pub const RIGHT_HAND: &str = "right_hand";
pub const PELVIS: &str = "pelvis";

impl MotionInput {
    pub fn from_references(r: &RobotReferences) -> Self {
        let mut targets = BTreeMap::new();
        targets.insert(LEFT_HAND.to_string(), TargetSpec::full(r.hand_left));
        targets.insert(RIGHT_HAND.to_string(), TargetSpec::full(r.hand_right));
        targets.insert(PELVIS.to_string(), TargetSpec::full(r.pelvis));
        Self {
            timestamp: r.timestamp,
            targets,
            com_ground: Some(r.com_ground),
            chest_orientation: Some(r.chest_orientation),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.targets.is_empty() && self.com_ground.is_none() && self.chest_orientation.is_none()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SafetyLimits {
    /// Allowed target region in the mid-feet frame (m).
    pub box_min: Vec3,
    pub box_max: Vec3,
    /// Largest displacement per nominal input interval (m, rad).
    pub max_rate_linear: f64,
    pub max_rate_angular: f64,
    /// Largest implied velocity between accepted inputs (m/s, rad/s).
    pub max_velocity_linear: f64,
    pub max_velocity_angular: f64,
    /// Nominal input interval (s).
    pub input_period: f64,
}

impl Default for SafetyLimits {
    fn default() -> Self {
        Self {
            box_min: Vec3::new(-1.2, -1.2, -0.2),
            box_max: Vec3::new(1.2, 1.2, 2.2),
            max_rate_linear: 0.1,
            max_rate_angular: 0.6,
            max_velocity_linear: 4.0,
            max_velocity_angular: 12.0,
            input_period: 1.0 / 60.0,
        }
    }
}

/// Shortest interval used when converting displacements to velocities.
pub const MIN_VELOCITY_DT: f64 = 0.005;

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Rule {
    NonFinite,
    BoundingBox,
    Rate,
    Velocity,
    /// Timestamp not after the previous accepted one.
    Stale,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Rejection {
    pub body: String,
    pub rule: Rule,
    pub value: f64,
}

/// Key under which the CoM ground target is tracked.
pub const COM_KEY: &str = "com";
/// Key under which the chest orientation target is tracked.
pub const CHEST_KEY: &str = "chest_orientation";

#[derive(Clone, Copy, Debug)]
struct Accepted {
    pose: Pose,
    timestamp: f64,
}

/// Stateful validator remembering the last accepted value of every target.
#[derive(Clone, Debug, Default)]
pub struct InputValidator {
    pub limits: SafetyLimits,
    previous: BTreeMap<String, Accepted>,
}

impl InputValidator {
    pub fn new(limits: SafetyLimits) -> Self {
        Self {
            limits,
            previous: BTreeMap::new(),
        }
    }

    pub fn reset(&mut self) {
        self.previous.clear();
    }

    /// Drops offending targets individually and returns what remains.
    pub fn validate(&mut self, input: &MotionInput, mid_feet: &Pose) -> (MotionInput, Vec<Rejection>) {
        let mut out = MotionInput {
            timestamp: input.timestamp,
            ..Default::default()
        };
        let mut rejections = Vec::new();
        let t = input.timestamp;
        for (name, target) in &input.targets {
            match self.check(name, &target.pose, t, mid_feet, true, true) {
                Ok(()) => {
                    out.targets.insert(name.clone(), *target);
                }
                Err(r) => rejections.push(r),
            }
        }
        if let Some(c) = input.com_ground {
            match self.check(COM_KEY, &Pose::from_position(c), t, mid_feet, true, false) {
                Ok(()) => out.com_ground = Some(c),
                Err(r) => rejections.push(r),
            }
        }
        if let Some(q) = input.chest_orientation {
            match self.check(CHEST_KEY, &Pose::new(Vec3::zeros(), q), t, mid_feet, false, true) {
                Ok(()) => out.chest_orientation = Some(q),
                Err(r) => rejections.push(r),
            }
        }
        (out, rejections)
    }

    fn check(&mut self, body: &str, pose: &Pose, t: f64, mid_feet: &Pose, linear: bool, angular: bool) -> Result<(), Rejection> {
        let reject = |rule, value| Rejection {
            body: body.to_string(),
            rule,
            value,
        };
        if !pose.is_finite() || !t.is_finite() {
            return Err(reject(Rule::NonFinite, f64::NAN));
        }
        let lim = &self.limits;
        if linear {
            let local = mid_feet.inverse_transform_point(&pose.position);
            let outside = (0..3)
                .map(|i| (lim.box_min[i] - local[i]).max(local[i] - lim.box_max[i]))
                .fold(f64::NEG_INFINITY, f64::max);
            if outside > 0.0 {
                return Err(reject(Rule::BoundingBox, outside));
            }
        }
        if let Some(prev) = self.previous.get(body) {
            let dt = t - prev.timestamp;
            if dt <= 0.0 {
                return Err(reject(Rule::Stale, dt));
            }
            // the per-interval budget accumulates over missed intervals
            let intervals = (dt / lim.input_period).max(1.0);
            let dv = if linear { (pose.position - prev.pose.position).norm() } else { 0.0 };
            let dw = if angular {
                quat_log(&(prev.pose.orientation.inverse() * pose.orientation)).norm()
            } else {
                0.0
            };
            if dv > lim.max_rate_linear * intervals {
                return Err(reject(Rule::Rate, dv));
            }
            if dw > lim.max_rate_angular * intervals {
                return Err(reject(Rule::Rate, dw));
            }
            let vdt = dt.max(MIN_VELOCITY_DT);
            if dv / vdt > lim.max_velocity_linear {
                return Err(reject(Rule::Velocity, dv / vdt));
            }
            if dw / vdt > lim.max_velocity_angular {
                return Err(reject(Rule::Velocity, dw / vdt));
            }
        }
        self.previous.insert(
            body.to_string(),
            Accepted {
                pose: *pose,
                timestamp: t,
            },
        );
        Ok(())
    }
}

/// One-shot validation against an explicit previous accepted input.
pub fn validate_input(
    input: &MotionInput,
    limits: &SafetyLimits,
    mid_feet: &Pose,
    previous: Option<&MotionInput>,
) -> (MotionInput, Vec<Rejection>) {
    let mut v = InputValidator::new(*limits);
    if let Some(prev) = previous {
        let _ = v.validate(prev, mid_feet);
    }
    v.validate(input, mid_feet)
}
