//! Deterministic input streams for benchmarks, demos and soak tests.

use std::f64::consts::PI;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::input::{MotionInput, TargetSpec, PELVIS};
use crate::math::{quat_from_yaw, Pose, Quat, Vec3};
use crate::model::{com_position, forward_kinematics, ModelError, RobotModel};
use crate::retarget::{TrackerBundle, CHEST, LEFT_HAND, RIGHT_HAND};

use super::protocol::{kind, Envelope};
use super::record::{tick_for_arrival, RecordedMessage};

/// Transport delay stamped on every generated message, seconds.
pub const TRANSPORT_DELAY: f64 = 0.0004;

fn message(kind: &str, seq: u64, t_send: f64, payload: &impl Serialize, tick_period: f64) -> RecordedMessage {
    let arrival = t_send + TRANSPORT_DELAY;
    RecordedMessage {
        arrival,
        tick: tick_for_arrival(arrival, tick_period),
        envelope: Envelope::new(kind, seq, t_send, payload),
    }
}

/// Robot-space poses of the tracked bodies at the model's initial configuration.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RestPoses {
    pub hands: [Pose; 2],
    pub pelvis: Pose,
    pub chest: Quat,
    pub com_ground: Vec3,
}

impl RestPoses {
    pub fn new(model: &RobotModel) -> Result<Self, ModelError> {
        let fk = forward_kinematics(model, &model.initial_configuration())?;
        let c = com_position(model, &fk);
        Ok(Self {
            hands: [fk.frame_pose_by_name(model, LEFT_HAND)?, fk.frame_pose_by_name(model, RIGHT_HAND)?],
            pelvis: fk.link_pose(0),
            chest: fk.frame_pose_by_name(model, CHEST)?.orientation,
            com_ground: Vec3::new(c.x, c.y, 0.0),
        })
    }

    /// All six tracked quantities at rest: hands, pelvis, chest, CoM.
    pub fn input(&self, timestamp: f64) -> MotionInput {
        let mut input = MotionInput {
            timestamp,
            com_ground: Some(self.com_ground),
            chest_orientation: Some(self.chest),
            ..Default::default()
        };
        input.targets.insert(LEFT_HAND.into(), TargetSpec::full(self.hands[0]));
        input.targets.insert(RIGHT_HAND.into(), TargetSpec::full(self.hands[1]));
        input.targets.insert(PELVIS.into(), TargetSpec::full(self.pelvis));
        input
    }
}

/// Both hands oscillating about their rest positions, the rest held.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct HandSine {
    pub rest: RestPoses,
    pub amplitude: f64,
    pub frequency: f64,
    /// Unit direction of the oscillation, world frame.
    pub axis: Vec3,
    pub input_rate: f64,
}

impl HandSine {
    pub fn new(model: &RobotModel, amplitude: f64, frequency: f64) -> Result<Self, ModelError> {
        Ok(Self {
            rest: RestPoses::new(model)?,
            amplitude,
            frequency,
            axis: Vec3::z(),
            input_rate: 60.0,
        })
    }

    pub fn hand_target(&self, side: usize, t: f64) -> Pose {
        let mut p = self.rest.hands[side];
        p.position += self.axis * (self.amplitude * (2.0 * PI * self.frequency * t).sin());
        p
    }

    pub fn input_at(&self, t: f64) -> MotionInput {
        let mut input = self.rest.input(t);
        for (side, name) in [LEFT_HAND, RIGHT_HAND].into_iter().enumerate() {
            input.targets.insert(name.into(), TargetSpec::full(self.hand_target(side, t)));
        }
        input
    }

    /// Messages at `input_rate` over `[0, duration)`.
    pub fn recording(&self, duration: f64, tick_period: f64) -> Vec<RecordedMessage> {
        let n = (duration * self.input_rate).ceil() as u64;
        (0..n)
            .map(|i| {
                let t = i as f64 / self.input_rate;
                message(kind::MOTION_INPUT, i, t, &self.input_at(t), tick_period)
            })
            .collect()
    }
}

/// What the adversarial stream did to a message.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Perturbation {
    None,
    Jump,
    OutOfBox,
    NonFinite,
    Stale,
    /// Hand target inside the torso.
    IntoTorso,
    /// Hands swapped across the body.
    Crossed,
    /// CoM ground target far outside the feet.
    ComAway,
}

/// A smooth 60 Hz stream with randomized dropouts, jumps, out-of-box and
/// non-finite targets, stale timestamps and targets that would drive the
/// hands into the body or the CoM off the feet.
pub fn adversarial_recording(
    model: &RobotModel,
    duration: f64,
    seed: u64,
    tick_period: f64,
) -> Result<Vec<(RecordedMessage, Perturbation)>, ModelError> {
    let rest = RestPoses::new(model)?;
    let chest_pos = forward_kinematics(model, &model.initial_configuration())?
        .frame_pose_by_name(model, CHEST)?
        .position;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let rate = 60.0;
    let mut out = Vec::new();
    let mut seq = 0;
    let mut t = 0.0;
    // slow wandering offsets per hand, re-drawn every few seconds
    let mut wander = [Vec3::zeros(); 2];
    let mut next_wander = 0.0;
    let mut sustained: Option<(Perturbation, f64)> = None;
    while t < duration {
        if t >= next_wander {
            for w in &mut wander {
                *w = Vec3::new(rng.gen_range(-0.25..0.25), rng.gen_range(-0.25..0.25), rng.gen_range(-0.3..0.3));
            }
            next_wander = t + rng.gen_range(1.0..4.0);
        }
        // dropout
        if rng.gen_bool(0.01) {
            t += rng.gen_range(0.1..1.5);
            continue;
        }
        if sustained.is_some_and(|(_, until)| t >= until) {
            sustained = None;
        }
        if sustained.is_none() && rng.gen_bool(0.004) {
            let kind = [Perturbation::IntoTorso, Perturbation::Crossed, Perturbation::ComAway][rng.gen_range(0..3)];
            sustained = Some((kind, t + rng.gen_range(1.0..3.0)));
        }

        let mut input = rest.input(t);
        let phase = 2.0 * PI * 0.4 * t;
        let mut hands = [0, 1].map(|i| {
            let mut p = rest.hands[i];
            p.position += wander[i] * (0.5 - 0.5 * (phase + i as f64).cos());
            p
        });
        let mut label = Perturbation::None;
        match sustained {
            Some((Perturbation::IntoTorso, _)) => {
                hands[0].position = chest_pos;
                hands[1].position = chest_pos - Vec3::new(0.0, 0.0, 0.3);
                label = Perturbation::IntoTorso;
            }
            Some((Perturbation::Crossed, _)) => {
                let (l, r) = (hands[0].position, hands[1].position);
                hands[0].position = Vec3::new(l.x, r.y - 0.1, l.z);
                hands[1].position = Vec3::new(r.x, l.y + 0.1, r.z);
                label = Perturbation::Crossed;
            }
            Some((Perturbation::ComAway, _)) => {
                input.com_ground = Some(rest.com_ground + Vec3::new(0.6, 0.4, 0.0));
                hands[0].position.x += 0.5;
                hands[1].position.x += 0.5;
                label = Perturbation::ComAway;
            }
            _ => {}
        }
        let roll: f64 = rng.gen();
        let mut timestamp = t;
        let victim = rng.gen_range(0..2);
        if roll < 0.02 {
            let dir = Vec3::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0));
            hands[victim].position += dir.normalize() * rng.gen_range(0.2..1.0);
            label = Perturbation::Jump;
        } else if roll < 0.03 {
            hands[victim].position = Vec3::new(3.0, 0.0, 1.0);
            label = Perturbation::OutOfBox;
        } else if roll < 0.035 {
            hands[victim].position.y = f64::NAN;
            label = Perturbation::NonFinite;
        } else if roll < 0.04 {
            timestamp = (t - 0.5).max(0.0);
            label = Perturbation::Stale;
        }
        input.timestamp = timestamp;
        input.targets.insert(LEFT_HAND.into(), TargetSpec::full(hands[0]));
        input.targets.insert(RIGHT_HAND.into(), TargetSpec::full(hands[1]));
        out.push((message(kind::MOTION_INPUT, seq, t, &input, tick_period), label));
        seq += 1;
        t += 1.0 / rate;
    }
    Ok(out)
}

/// A person standing with the reference tracker layout: headset, two
/// controllers, chest, waist and both ankles.
pub fn standing_bundle() -> TrackerBundle {
    let at = |x: f64, y: f64, z: f64| Pose::from_position(Vec3::new(x, y, z));
    TrackerBundle {
        timestamp: 0.0,
        headset: at(0.0, 0.0, 1.65),
        controller_left: at(0.35, 0.2, 1.1),
        controller_right: at(0.35, -0.2, 1.1),
        chest: at(0.0, 0.0, 1.35),
        waist: at(0.0, 0.0, 1.0),
        ankle_left: at(0.0, 0.1, 0.1),
        ankle_right: at(0.0, -0.1, 0.1),
    }
}

/// Human walking forward: alternate steps of `step_length` starting with the
/// left foot, one step every `period` seconds after a 1.5 s stand, arms
/// swinging. Each step takes 0.5 s with a 0.12 m ankle lift.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Walk {
    pub steps: usize,
    pub step_length: f64,
    pub period: f64,
    pub turn_per_step: f64,
}

impl Default for Walk {
    fn default() -> Self {
        Self {
            steps: 4,
            step_length: 0.3,
            period: 1.8,
            turn_per_step: 0.0,
        }
    }
}

const STEP_DURATION: f64 = 0.5;
const STAND: f64 = 1.5;

impl Walk {
    pub fn step_start(&self, i: usize) -> f64 {
        STAND + i as f64 * self.period
    }

    pub fn bundle_at(&self, t: f64) -> TrackerBundle {
        let mut b = standing_bundle();
        b.timestamp = t;
        let mut ankles = [b.ankle_left, b.ankle_right];
        let mut yaw = 0.0;
        for i in 0..self.steps {
            let s = ((t - self.step_start(i)) / STEP_DURATION).clamp(0.0, 1.0);
            if s <= 0.0 {
                break;
            }
            let h = s * s * (3.0 - 2.0 * s);
            let a = &mut ankles[i % 2];
            a.position += quat_from_yaw(yaw) * Vec3::new(self.step_length * h, 0.0, 0.0);
            if s < 1.0 {
                a.position.z += 0.12 * (PI * s).sin();
            }
            yaw += self.turn_per_step * h;
            a.orientation = quat_from_yaw(yaw);
        }
        let mid = (ankles[0].position + ankles[1].position) * 0.5;
        let shift = Vec3::new(mid.x, mid.y, 0.0);
        let body = quat_from_yaw(yaw);
        for p in [&mut b.headset, &mut b.chest, &mut b.waist] {
            p.position += shift;
            p.orientation = body;
        }
        let swing = 0.1 * (2.0 * PI * 0.5 * t).sin();
        b.controller_left.position = shift + body * (b.controller_left.position + Vec3::new(swing, 0.0, 0.0));
        b.controller_right.position = shift + body * (b.controller_right.position - Vec3::new(swing, 0.0, 0.0));
        b.controller_left.orientation = body;
        b.controller_right.orientation = body;
        b.ankle_left = ankles[0];
        b.ankle_right = ankles[1];
        b
    }

    /// Bundles at `rate` over `[0, duration)`.
    pub fn recording(&self, duration: f64, rate: f64, tick_period: f64) -> Vec<RecordedMessage> {
        let n = (duration * rate).ceil() as u64;
        (0..n)
            .map(|i| {
                let t = i as f64 / rate;
                message(kind::TRACKER_FRAME, i, t, &self.bundle_at(t), tick_period)
            })
            .collect()
    }
}
