//! Per-body velocity estimation and high-rate prediction between inputs.
//!
//! Each tracked body keeps a finite-difference velocity of its last two
//! inputs. Between inputs the estimate is integrated forward with that
//! velocity, faded out linearly by `alpha` so a silent input stops moving the
//! target after `decay_duration`. In feedback mode a correction velocity
//! additionally pulls the estimate towards the latest input without ever
//! snapping to it.
//!
//! An input consumed `age` seconds after it arrived is treated as having been
//! extrapolated over `age` already, so predictions stay aligned with the
//! input's own clock rather than the tick grid.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::math::{quat_exp, quat_log, Pose, Quat, Twist, Vec3};

use super::{MotionInput, TargetSpec};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EstimatorMode {
    FirstOrder,
    #[default]
    Feedback,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EstimatorParams {
    pub mode: EstimatorMode,
    /// Time for the velocity fade to reach zero after the last input (s).
    pub decay_duration: f64,
    /// Time constant of the feedback correction (s).
    pub t_corr: f64,
    /// Clamp on the finite-difference interval (s).
    pub dt_input_min: f64,
    pub dt_input_max: f64,
    /// Largest arrival-to-consumption age that is compensated (s).
    pub max_age: f64,
}

impl Default for EstimatorParams {
    fn default() -> Self {
        Self {
            mode: EstimatorMode::Feedback,
            decay_duration: 0.25,
            t_corr: 0.05,
            dt_input_min: 0.005,
            dt_input_max: 0.1,
            max_age: 0.1,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Prediction {
    pub desired: Pose,
    pub feedforward: Twist,
    pub alpha: f64,
    pub active: bool,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct BodyEstimator {
    pub last_input: Pose,
    pub last_input_time: f64,
    pub estimated: Pose,
    pub v_fd: Vec3,
    pub w_fd: Vec3,
    pub v_corr: Vec3,
    pub w_corr: Vec3,
    pub alpha_timer: f64,
}

impl BodyEstimator {
    /// Estimator seeded with a first input; zero velocity.
    pub fn new(pose: Pose, timestamp: f64, age: f64) -> Self {
        Self {
            last_input: pose,
            last_input_time: timestamp,
            estimated: pose,
            v_fd: Vec3::zeros(),
            w_fd: Vec3::zeros(),
            v_corr: Vec3::zeros(),
            w_corr: Vec3::zeros(),
            alpha_timer: age.max(0.0),
        }
    }

    pub fn on_input(&mut self, pose: Pose, timestamp: f64, age: f64, params: &EstimatorParams) {
        let dt = (timestamp - self.last_input_time).clamp(params.dt_input_min, params.dt_input_max);
        let age = age.clamp(0.0, params.max_age);
        self.v_fd = (pose.position - self.last_input.position) / dt;
        self.w_fd = quat_log(&(self.last_input.orientation.inverse() * pose.orientation)) / dt;
        self.last_input = pose;
        self.last_input_time = timestamp;
        let target = Pose::new(
            pose.position + self.v_fd * age,
            pose.orientation * quat_exp(&(self.w_fd * age)),
        );
        match params.mode {
            EstimatorMode::FirstOrder => {
                self.estimated = target;
                self.v_corr = Vec3::zeros();
                self.w_corr = Vec3::zeros();
            }
            EstimatorMode::Feedback => {
                self.v_corr = (target.position - self.estimated.position) / params.t_corr;
                self.w_corr = quat_log(&(self.estimated.orientation.inverse() * target.orientation)) / params.t_corr;
            }
        }
        self.alpha_timer = age;
    }

    pub fn alpha(&self, decay_duration: f64) -> f64 {
        // tolerance absorbs accumulated tick rounding in the timer
        if self.alpha_timer >= decay_duration - 1e-9 {
            0.0
        } else {
            (1.0 - self.alpha_timer / decay_duration).clamp(0.0, 1.0)
        }
    }

    /// Current desired pose and velocity, then advances the estimate by `dt`.
    pub fn predict(&mut self, dt: f64, params: &EstimatorParams) -> Prediction {
        let alpha = self.alpha(params.decay_duration);
        let feedforward = if alpha > 0.0 {
            Twist::new((self.v_fd + self.v_corr) * alpha, (self.w_fd + self.w_corr) * alpha)
        } else {
            Twist::zero()
        };
        let out = Prediction {
            desired: self.estimated,
            feedforward,
            alpha,
            active: alpha > 0.0,
        };
        if alpha > 0.0 {
            self.estimated = self.estimated.integrate(&feedforward, dt);
        }
        self.alpha_timer += dt;
        out
    }
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct Predictions {
    /// Per target body, with its tracked-axes flags.
    pub bodies: BTreeMap<String, (Prediction, TargetSpec)>,
    pub com: Option<Prediction>,
    pub chest: Option<Prediction>,
}

/// Estimators for every body seen so far.
#[derive(Clone, Debug, Default)]
pub struct EstimatorBank {
    pub params: EstimatorParams,
    bodies: BTreeMap<String, (BodyEstimator, TargetSpec)>,
    com: Option<BodyEstimator>,
    chest: Option<BodyEstimator>,
}

impl EstimatorBank {
    pub fn new(params: EstimatorParams) -> Self {
        Self {
            params,
            ..Default::default()
        }
    }

    pub fn body(&self, name: &str) -> Option<&BodyEstimator> {
        self.bodies.get(name).map(|(e, _)| e)
    }

    /// Feeds an accepted input consumed `age` seconds after its arrival.
    pub fn on_input(&mut self, input: &MotionInput, age: f64) {
        let p = self.params;
        let t = input.timestamp;
        let feed = |slot: Option<&mut BodyEstimator>, pose: Pose| match slot {
            Some(e) => {
                e.on_input(pose, t, age, &p);
                None
            }
            None => Some(BodyEstimator::new(pose, t, age)),
        };
        for (name, spec) in &input.targets {
            match self.bodies.get_mut(name) {
                Some((e, flags)) => {
                    e.on_input(spec.pose, t, age, &p);
                    *flags = *spec;
                }
                None => {
                    self.bodies.insert(name.clone(), (BodyEstimator::new(spec.pose, t, age), *spec));
                }
            }
        }
        if let Some(c) = input.com_ground {
            if let Some(fresh) = feed(self.com.as_mut(), Pose::from_position(c)) {
                self.com = Some(fresh);
            }
        }
        if let Some(q) = input.chest_orientation {
            if let Some(fresh) = feed(self.chest.as_mut(), Pose::new(Vec3::zeros(), q)) {
                self.chest = Some(fresh);
            }
        }
    }

    pub fn predict(&mut self, dt: f64) -> Predictions {
        let p = self.params;
        Predictions {
            bodies: self
                .bodies
                .iter_mut()
                .map(|(k, (e, spec))| (k.clone(), (e.predict(dt, &p), *spec)))
                .collect(),
            com: self.com.as_mut().map(|e| e.predict(dt, &p)),
            chest: self.chest.as_mut().map(|e| e.predict(dt, &p)),
        }
    }

    /// Orientation-only view of the chest prediction.
    pub fn chest_orientation(pred: &Prediction) -> Quat {
        pred.desired.orientation
    }
}
