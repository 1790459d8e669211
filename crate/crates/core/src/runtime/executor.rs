//! Kinematic footstep execution: one swing at a time, feet otherwise fixed.

use std::collections::VecDeque;

use serde::{Deserialize, Serialize};

use crate::ik::{FootTarget, SupportPolygon};
use crate::math::{quat_exp, quat_from_yaw, quat_log, yaw_of, Pose, Twist, Vec3};
use crate::model::{forward_kinematics, FrameId, JointConfiguration, ModelError, RobotModel};
use crate::retarget::footstep::{FootstepCommand, Side};
use crate::retarget::{LEFT_FOOT, RIGHT_FOOT};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExecutorConfig {
    pub swing_duration: f64,
    pub apex_height: f64,
    pub queue_capacity: usize,
}

impl Default for ExecutorConfig {
    fn default() -> Self {
        Self {
            swing_duration: 0.6,
            apex_height: 0.05,
            queue_capacity: 8,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Swing {
    pub side: Side,
    pub start: Pose,
    pub goal: Pose,
    pub start_time: f64,
    pub duration: f64,
}

impl Swing {
    fn phase(&self, t: f64) -> f64 {
        ((t - self.start_time) / self.duration).clamp(0.0, 1.0)
    }

    /// Smoothstep along the straight line, a parabolic lift peaking at
    /// `apex` mid-swing, and yaw interpolated on the geodesic.
    pub fn pose(&self, t: f64, apex: f64) -> Pose {
        let s = self.phase(t);
        let h = s * s * (3.0 - 2.0 * s);
        let mut p = self.start.position + (self.goal.position - self.start.position) * h;
        p.z += 4.0 * apex * s * (1.0 - s);
        let rel = quat_log(&(self.start.orientation.inverse() * self.goal.orientation));
        Pose::new(p, self.start.orientation * quat_exp(&(rel * h)))
    }

    /// Time derivative of [`Swing::pose`]; angular part in the foot's axes.
    pub fn velocity(&self, t: f64, apex: f64) -> Twist {
        if t < self.start_time || t > self.start_time + self.duration {
            return Twist::zero();
        }
        let s = self.phase(t);
        let dh = 6.0 * s * (1.0 - s) / self.duration;
        let mut v = (self.goal.position - self.start.position) * dh;
        v.z += 4.0 * apex * (1.0 - 2.0 * s) / self.duration;
        let rel = quat_log(&(self.start.orientation.inverse() * self.goal.orientation));
        Twist::new(v, rel * dh)
    }
}

/// A finished swing.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Completion {
    pub side: Side,
    pub pose: Pose,
    pub time: f64,
}

#[derive(Clone, Debug)]
pub struct FootstepExecutor {
    pub config: ExecutorConfig,
    feet: [Pose; 2],
    frames: [FrameId; 2],
    polygons: [Vec<[f64; 2]>; 2],
    queue: VecDeque<FootstepCommand>,
    active: Option<Swing>,
    pub completed: u64,
}

impl FootstepExecutor {
    pub fn new(model: &RobotModel, q: &JointConfiguration, config: ExecutorConfig) -> Result<Self, ModelError> {
        let fk = forward_kinematics(model, q)?;
        let frames = [model.frame_id(LEFT_FOOT)?, model.frame_id(RIGHT_FOOT)?];
        let polygon = |name: &str| model.foot_polygon(name).map(<[_]>::to_vec).unwrap_or_default();
        Ok(Self {
            config,
            feet: [fk.frame_pose(model, frames[0]), fk.frame_pose(model, frames[1])],
            frames,
            polygons: [polygon(LEFT_FOOT), polygon(RIGHT_FOOT)],
            queue: VecDeque::new(),
            active: None,
            completed: 0,
        })
    }

    /// Stance poses; the swing foot keeps its lift-off pose until touchdown.
    pub fn feet(&self) -> &[Pose; 2] {
        &self.feet
    }

    pub fn active(&self) -> Option<&Swing> {
        self.active.as_ref()
    }

    pub fn pending(&self) -> usize {
        self.queue.len()
    }

    pub fn is_idle(&self) -> bool {
        self.active.is_none() && self.queue.is_empty()
    }

    /// Queues a command; false when the queue is full.
    pub fn enqueue(&mut self, cmd: FootstepCommand) -> bool {
        if self.queue.len() >= self.config.queue_capacity {
            return false;
        }
        self.queue.push_back(cmd);
        true
    }

    /// Advances to time `t`; returns the swing that touched down, if any.
    pub fn update(&mut self, t: f64) -> Option<Completion> {
        if self.active.is_none() {
            if let Some(cmd) = self.queue.pop_front() {
                self.active = Some(Swing {
                    side: cmd.side,
                    start: self.feet[cmd.side.index()],
                    goal: cmd.pose,
                    start_time: t,
                    duration: self.config.swing_duration,
                });
            }
            return None;
        }
        let swing = self.active.expect("checked above");
        if t - swing.start_time >= swing.duration {
            self.feet[swing.side.index()] = swing.goal;
            self.active = None;
            self.completed += 1;
            return Some(Completion {
                side: swing.side,
                pose: swing.goal,
                time: t,
            });
        }
        None
    }

    pub fn foot_targets(&self, t: f64) -> [FootTarget; 2] {
        let mut out = [0, 1].map(|i| FootTarget {
            frame: self.frames[i],
            pose: self.feet[i],
            velocity: Twist::zero(),
        });
        if let Some(s) = &self.active {
            let i = s.side.index();
            out[i].pose = s.pose(t, self.config.apex_height);
            out[i].velocity = s.velocity(t, self.config.apex_height);
        }
        out
    }

    /// Hull of both stance soles.
    pub fn support_polygon(&self) -> SupportPolygon {
        SupportPolygon::from_feet(&[(self.feet[0], &self.polygons[0][..]), (self.feet[1], &self.polygons[1][..])])
    }

    /// Between the soles, yawed halfway between them, on the ground.
    pub fn mid_feet(&self) -> Pose {
        mid_feet(&self.feet)
    }

    pub fn foot(&self, side: Side) -> &Pose {
        &self.feet[side.index()]
    }

    /// Where the foot will be once every accepted step has executed.
    pub fn planned(&self, side: Side) -> Pose {
        self.queue
            .iter()
            .rev()
            .find(|c| c.side == side)
            .map(|c| c.pose)
            .or_else(|| self.active.filter(|s| s.side == side).map(|s| s.goal))
            .unwrap_or(self.feet[side.index()])
    }
}

pub fn mid_feet(feet: &[Pose; 2]) -> Pose {
    let p = (feet[0].position + feet[1].position) * 0.5;
    let (yl, yr) = (yaw_of(&feet[0].orientation), yaw_of(&feet[1].orientation));
    let yaw = yr + crate::math::wrap_angle(yl - yr) * 0.5;
    Pose::new(Vec3::new(p.x, p.y, p.z), quat_from_yaw(yaw))
}
