//! Setpoint shaping between the IK and the robot: velocity scaling, a PD
//! double integrator, optional low-pass filtering and the start-up blend.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::math::{pose_feedback, quat_exp, quat_log, Pose, Twist};
use crate::model::{JointConfiguration, JointVelocity, RobotModel};

#[derive(Debug, Error, PartialEq)]
pub enum PostError {
    #[error("velocity_scale {0} outside [0, 1]")]
    VelocityScale(f64),
    #[error("gains must be non-negative and finite (kp {kp}, kd {kd})")]
    Gains { kp: f64, kd: f64 },
    #[error("lowpass_cutoff must be >= 0, got {0}")]
    Cutoff(f64),
    #[error("blend_duration must be >= 0, got {0}")]
    BlendDuration(f64),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PostProcessConfig {
    pub velocity_scale: f64,
    pub kp: f64,
    pub kd: f64,
    /// Hz; 0 disables the filter.
    pub lowpass_cutoff: f64,
    pub blend_duration: f64,
    /// Filter the integrator output (true) or the IK reference (false).
    pub lowpass_after_feedback: bool,
}

impl Default for PostProcessConfig {
    fn default() -> Self {
        Self {
            velocity_scale: 1.0,
            kp: 100.0,
            kd: 20.0,
            lowpass_cutoff: 0.0,
            blend_duration: 1.0,
            lowpass_after_feedback: true,
        }
    }
}

impl PostProcessConfig {
    pub fn validate(&self) -> Result<(), PostError> {
        if !(0.0..=1.0).contains(&self.velocity_scale) {
            return Err(PostError::VelocityScale(self.velocity_scale));
        }
        if !(self.kp >= 0.0 && self.kd >= 0.0 && self.kp.is_finite() && self.kd.is_finite()) {
            return Err(PostError::Gains { kp: self.kp, kd: self.kd });
        }
        if !(self.lowpass_cutoff >= 0.0) {
            return Err(PostError::Cutoff(self.lowpass_cutoff));
        }
        if !(self.blend_duration >= 0.0) {
            return Err(PostError::BlendDuration(self.blend_duration));
        }
        if self.kd * self.kd < 2.0 * self.kp {
            log::warn!("strongly underdamped setpoint integrator (kp {}, kd {})", self.kp, self.kd);
        }
        Ok(())
    }
}

/// One emitted setpoint: positions, rates and accelerations for every joint and the base.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct JointSetpointFrame {
    pub tick_index: u64,
    pub timestamp: f64,
    pub base_pose: Pose,
    /// Linear part world frame, angular part body frame.
    pub base_twist: Twist,
    pub base_acceleration: Twist,
    pub q: Vec<f64>,
    pub qd: Vec<f64>,
    pub qdd: Vec<f64>,
}

impl JointSetpointFrame {
    /// A frame at rest at `q`.
    pub fn at_rest(q: &JointConfiguration, tick_index: u64, timestamp: f64) -> Self {
        let n = q.joint_positions.len();
        Self {
            tick_index,
            timestamp,
            base_pose: q.base_pose,
            base_twist: Twist::zero(),
            base_acceleration: Twist::zero(),
            q: q.joint_positions.clone(),
            qd: vec![0.0; n],
            qdd: vec![0.0; n],
        }
    }

    pub fn configuration(&self) -> JointConfiguration {
        JointConfiguration {
            base_pose: self.base_pose,
            joint_positions: self.q.clone(),
        }
    }

    pub fn velocity(&self) -> JointVelocity {
        JointVelocity {
            base_twist: self.base_twist,
            joint_rates: self.qd.clone(),
        }
    }

    pub fn is_finite(&self) -> bool {
        let twist_ok = |t: &Twist| t.linear.iter().chain(t.angular.iter()).all(|x| x.is_finite());
        self.base_pose.is_finite()
            && twist_ok(&self.base_twist)
            && twist_ok(&self.base_acceleration)
            && self.q.iter().chain(&self.qd).chain(&self.qdd).all(|x| x.is_finite())
    }
}

pub fn downscale_velocity(v: &JointVelocity, scale: f64) -> JointVelocity {
    JointVelocity {
        base_twist: v.base_twist.scaled(scale),
        joint_rates: v.joint_rates.iter().map(|r| r * scale).collect(),
    }
}

/// PD acceleration toward the IK reference, then semi-implicit Euler
/// (velocity first, then position).
pub fn feedback_integrate(
    frame: &JointSetpointFrame,
    q_ik: &JointConfiguration,
    qd_ik: &JointVelocity,
    config: &PostProcessConfig,
    dt: f64,
) -> JointSetpointFrame {
    let (kp, kd) = (config.kp, config.kd);
    let mut out = frame.clone();
    for i in 0..frame.q.len() {
        let acc = kp * (q_ik.joint_positions[i] - frame.q[i]) + kd * (qd_ik.joint_rates[i] - frame.qd[i]);
        out.qdd[i] = acc;
        out.qd[i] = frame.qd[i] + acc * dt;
        out.q[i] = frame.q[i] + out.qd[i] * dt;
    }

    // SE(3) analog: pose error from pose_feedback, reference angular rate
    // re-expressed in the current body axes.
    let err = pose_feedback(&frame.base_pose, &q_ik.base_pose, 1.0);
    let w_ref = frame.base_pose.orientation.inverse() * (q_ik.base_pose.orientation * qd_ik.base_twist.angular);
    let acc = Twist::new(
        err.linear * kp + (qd_ik.base_twist.linear - frame.base_twist.linear) * kd,
        err.angular * kp + (w_ref - frame.base_twist.angular) * kd,
    );
    out.base_acceleration = acc;
    out.base_twist = frame.base_twist + acc.scaled(dt);
    out.base_pose = frame.base_pose.integrate(&out.base_twist, dt);
    out
}

/// Smoothing factor of the first-order filter; 1 means pass-through.
pub fn lowpass_beta(cutoff: f64, dt: f64) -> f64 {
    if cutoff <= 0.0 {
        1.0
    } else {
        dt / (dt + 1.0 / (2.0 * std::f64::consts::PI * cutoff))
    }
}

pub fn lowpass(previous: f64, input: f64, cutoff: f64, dt: f64) -> f64 {
    if cutoff <= 0.0 {
        return input;
    }
    previous + lowpass_beta(cutoff, dt) * (input - previous)
}

/// Filters a pose; the rotation moves along the geodesic from the previous output.
pub fn lowpass_pose(previous: &Pose, input: &Pose, cutoff: f64, dt: f64) -> Pose {
    if cutoff <= 0.0 {
        return *input;
    }
    let b = lowpass_beta(cutoff, dt);
    let rel = quat_log(&(previous.orientation.inverse() * input.orientation));
    Pose::new(
        previous.position + (input.position - previous.position) * b,
        previous.orientation * quat_exp(&(rel * b)),
    )
}

fn lowpass_frame(previous: &JointSetpointFrame, input: &JointSetpointFrame, cutoff: f64, dt: f64) -> JointSetpointFrame {
    let mut out = input.clone();
    if cutoff <= 0.0 {
        return out;
    }
    let lp = |p: &[f64], x: &[f64], o: &mut [f64]| {
        for ((o, p), x) in o.iter_mut().zip(p).zip(x) {
            *o = lowpass(*p, *x, cutoff, dt);
        }
    };
    lp(&previous.q, &input.q, &mut out.q);
    lp(&previous.qd, &input.qd, &mut out.qd);
    lp(&previous.qdd, &input.qdd, &mut out.qdd);
    out.base_pose = lowpass_pose(&previous.base_pose, &input.base_pose, cutoff, dt);
    let b = lowpass_beta(cutoff, dt);
    let mix = |p: &Twist, x: &Twist| Twist::new(p.linear + (x.linear - p.linear) * b, p.angular + (x.angular - p.angular) * b);
    out.base_twist = mix(&previous.base_twist, &input.base_twist);
    out.base_acceleration = mix(&previous.base_acceleration, &input.base_acceleration);
    out
}

/// `3s^2 - 2s^3` on `s = clamp(t / duration, 0, 1)`.
pub fn blend_weight(t: f64, duration: f64) -> f64 {
    if duration <= 0.0 {
        return 1.0;
    }
    let s = (t / duration).clamp(0.0, 1.0);
    s * s * (3.0 - 2.0 * s)
}

/// Interpolates from the robot's actual configuration (at rest) to the stream.
pub fn blend_initial(actual: &JointConfiguration, stream: &JointSetpointFrame, t_since_start: f64, blend_duration: f64) -> JointSetpointFrame {
    let sigma = blend_weight(t_since_start, blend_duration);
    if sigma >= 1.0 {
        return stream.clone();
    }
    let mut out = stream.clone();
    if sigma <= 0.0 {
        out.q = actual.joint_positions.clone();
        out.base_pose = actual.base_pose;
    } else {
        for (o, (a, s)) in out.q.iter_mut().zip(actual.joint_positions.iter().zip(&stream.q)) {
            *o = a + (s - a) * sigma;
        }
        let rel = quat_log(&(actual.base_pose.orientation.inverse() * stream.base_pose.orientation));
        out.base_pose = Pose::new(
            actual.base_pose.position + (stream.base_pose.position - actual.base_pose.position) * sigma,
            actual.base_pose.orientation * quat_exp(&(rel * sigma)),
        );
    }
    for v in out.qd.iter_mut().chain(out.qdd.iter_mut()) {
        *v *= sigma;
    }
    out.base_twist = stream.base_twist.scaled(sigma);
    out.base_acceleration = stream.base_acceleration.scaled(sigma);
    out
}

/// Keeps joint positions inside their limits; a clamped joint's rate becomes
/// the displacement actually taken from `previous`.
fn clamp_frame(model: &RobotModel, previous: &[f64], frame: &mut JointSetpointFrame, dt: f64) -> usize {
    let mut n = 0;
    for (i, j) in model.joints().iter().enumerate() {
        let q = frame.q[i];
        if q > j.q_max || q < j.q_min {
            frame.q[i] = q.clamp(j.q_min, j.q_max);
            frame.qd[i] = (frame.q[i] - previous[i]) / dt;
            n += 1;
        }
    }
    n
}

/// Stateful post-processing chain owned by the tick loop.
#[derive(Clone, Debug)]
pub struct PostProcessor {
    pub config: PostProcessConfig,
    /// Integrator state.
    feedback: JointSetpointFrame,
    /// Last emitted frame.
    output: JointSetpointFrame,
    /// Reference filter state when filtering before the integrator.
    reference: Option<(JointConfiguration, JointVelocity)>,
    blend_from: JointConfiguration,
    blend_start: f64,
    pub clamps: u64,
}

impl PostProcessor {
    pub fn new(config: PostProcessConfig, actual: &JointConfiguration, t: f64) -> Result<Self, PostError> {
        config.validate()?;
        let frame = JointSetpointFrame::at_rest(actual, 0, t);
        Ok(Self {
            config,
            feedback: frame.clone(),
            output: frame,
            reference: None,
            blend_from: actual.clone(),
            blend_start: t,
            clamps: 0,
        })
    }

    pub fn last(&self) -> &JointSetpointFrame {
        &self.output
    }

    /// Starts a new blend from the current output, e.g. after a stream restart.
    pub fn restart_blend(&mut self, t: f64) {
        self.blend_from = self.output.configuration();
        self.blend_start = t;
    }

    pub fn blend_weight(&self, t: f64) -> f64 {
        blend_weight(t - self.blend_start, self.config.blend_duration)
    }

    pub fn step(
        &mut self,
        model: &RobotModel,
        q_ik: &JointConfiguration,
        v_ik: &JointVelocity,
        tick_index: u64,
        t: f64,
        dt: f64,
    ) -> &JointSetpointFrame {
        let cfg = &self.config;
        let v = downscale_velocity(v_ik, cfg.velocity_scale);
        let mut target = JointSetpointFrame {
            tick_index,
            timestamp: t,
            base_pose: q_ik.base_pose,
            base_twist: v.base_twist,
            base_acceleration: Twist::zero(),
            q: q_ik.joint_positions.clone(),
            qd: v.joint_rates,
            qdd: vec![0.0; q_ik.joint_positions.len()],
        };
        target = blend_initial(&self.blend_from, &target, t - self.blend_start, cfg.blend_duration);
        let (mut q_ref, mut v_ref) = (target.configuration(), target.velocity());
        if !cfg.lowpass_after_feedback && cfg.lowpass_cutoff > 0.0 {
            let (pq, pv) = self.reference.get_or_insert_with(|| (q_ref.clone(), v_ref.clone()));
            for (p, x) in pq.joint_positions.iter_mut().zip(&q_ref.joint_positions) {
                *p = lowpass(*p, *x, cfg.lowpass_cutoff, dt);
            }
            for (p, x) in pv.joint_rates.iter_mut().zip(&v_ref.joint_rates) {
                *p = lowpass(*p, *x, cfg.lowpass_cutoff, dt);
            }
            pq.base_pose = lowpass_pose(&pq.base_pose, &q_ref.base_pose, cfg.lowpass_cutoff, dt);
            q_ref = pq.clone();
            v_ref = pv.clone();
        }

        let mut fb = feedback_integrate(&self.feedback, &q_ref, &v_ref, cfg, dt);
        fb.tick_index = tick_index;
        fb.timestamp = t;
        self.clamps += clamp_frame(model, &self.feedback.q, &mut fb, dt) as u64;
        self.feedback = fb;

        let mut out = if cfg.lowpass_after_feedback {
            lowpass_frame(&self.output, &self.feedback, cfg.lowpass_cutoff, dt)
        } else {
            self.feedback.clone()
        };
        clamp_frame(model, &self.output.q, &mut out, dt);
        self.output = out;
        &self.output
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::math::Vec3;
    use crate::model::bundled;
    use proptest::prelude::*;

    fn scalar_frame(q: f64, qd: f64) -> JointSetpointFrame {
        JointSetpointFrame {
            tick_index: 0,
            timestamp: 0.0,
            base_pose: Pose::identity(),
            base_twist: Twist::zero(),
            base_acceleration: Twist::zero(),
            q: vec![q],
            qd: vec![qd],
            qdd: vec![0.0],
        }
    }

    fn scalar_config(q: f64) -> JointConfiguration {
        JointConfiguration {
            base_pose: Pose::identity(),
            joint_positions: vec![q],
        }
    }

    fn scalar_velocity(v: f64) -> JointVelocity {
        JointVelocity {
            base_twist: Twist::zero(),
            joint_rates: vec![v],
        }
    }

    #[test]
    fn downscale_examples() {
        let v = JointVelocity {
            base_twist: Twist::new(Vec3::new(1.0, 0.0, 0.0), Vec3::zeros()),
            joint_rates: vec![1.0, -2.0],
        };
        assert_eq!(downscale_velocity(&v, 1.0), v);
        assert_eq!(downscale_velocity(&v, 0.0).joint_rates, vec![0.0, -0.0]);
        assert_eq!(downscale_velocity(&v, 0.5).joint_rates, vec![0.5, -1.0]);
    }

    #[test]
    fn pd_acceleration_arithmetic() {
        let cfg = PostProcessConfig::default();
        let out = feedback_integrate(&scalar_frame(0.0, 0.0), &scalar_config(0.1), &scalar_velocity(0.0), &cfg, 0.001);
        assert!((out.qdd[0] - 10.0).abs() < 1e-12);
    }

    #[test]
    fn matched_reference_is_a_fixed_point() {
        let cfg = PostProcessConfig::default();
        let f = scalar_frame(0.3, 0.5);
        let out = feedback_integrate(&f, &scalar_config(0.3), &scalar_velocity(0.5), &cfg, 0.001);
        assert_eq!(out.qdd[0], 0.0);
        assert_eq!(out.qd[0], 0.5);
        assert!((out.q[0] - (0.3 + 0.5 * 0.001)).abs() < 1e-15);
    }

    /// Critically damped step response `x(t) = A (1 + w t) e^{-w t}`, w = 10.
    #[test]
    fn step_response_follows_continuous_oracle() {
        let cfg = PostProcessConfig::default();
        let dt = 0.001;
        let step = 0.1;
        let w = cfg.kp.sqrt();
        assert_eq!(cfg.kd, 2.0 * w);
        let mut f = scalar_frame(0.0, 0.0);
        let mut worst: f64 = 0.0;
        for k in 1..=1000 {
            f = feedback_integrate(&f, &scalar_config(step), &scalar_velocity(0.0), &cfg, dt);
            let t = k as f64 * dt;
            let oracle_err = step * (1.0 + w * t) * (-w * t).exp();
            worst = worst.max(((step - f.q[0]) - oracle_err).abs());
        }
        assert!((step - f.q[0]).abs() < 1e-4, "err {}", step - f.q[0]);
        // first-order method against the exact solution
        assert!(worst < 5e-3 * step, "worst {worst}");
    }

    #[test]
    fn integrator_stays_bounded() {
        let cfg = PostProcessConfig::default();
        let mut f = scalar_frame(1.0, -3.0);
        let mut peak: f64 = 0.0;
        for _ in 0..100_000 {
            f = feedback_integrate(&f, &scalar_config(0.25), &scalar_velocity(0.0), &cfg, 0.001);
            peak = peak.max(f.q[0].abs() + f.qd[0].abs());
        }
        assert!(peak < 10.0);
        assert!((f.q[0] - 0.25).abs() < 1e-12);
    }

    #[test]
    fn base_feedback_converges_in_se3() {
        let cfg = PostProcessConfig::default();
        let mut f = scalar_frame(0.0, 0.0);
        let goal = JointConfiguration {
            base_pose: Pose::new(Vec3::new(0.1, -0.05, 0.9), quat_exp(&Vec3::new(0.0, 0.2, 0.4))),
            joint_positions: vec![0.0],
        };
        for _ in 0..2000 {
            f = feedback_integrate(&f, &goal, &scalar_velocity(0.0), &cfg, 0.001);
        }
        assert!((f.base_pose.position - goal.base_pose.position).norm() < 1e-6);
        assert!(quat_log(&(f.base_pose.orientation.inverse() * goal.base_pose.orientation)).norm() < 1e-6);
    }

    #[test]
    fn lowpass_bypass_and_dc_gain() {
        assert_eq!(lowpass(0.3, 1.7, 0.0, 0.001), 1.7);
        let (cutoff, dt) = (5.0, 0.001);
        // a constant already reached is a fixed point, exactly
        assert_eq!(lowpass(1.25, 1.25, cutoff, dt), 1.25);
        let tau = 1.0 / (2.0 * std::f64::consts::PI * cutoff);
        let b = lowpass_beta(cutoff, dt);
        let steps = (10.0 * tau / dt).ceil() as i32;
        let mut y = 0.0;
        for _ in 0..steps {
            y = lowpass(y, 1.0, cutoff, dt);
        }
        let oracle = (1.0 - b).powi(steps);
        assert!(((1.0 - y) - oracle).abs() < 1e-12);
        // discretization makes the decay marginally slower than e^{-t/tau}
        assert!(1.0 - y <= 1.2 * (-10.0f64).exp());
        for _ in 0..steps {
            y = lowpass(y, 1.0, cutoff, dt);
        }
        assert!((y - 1.0).abs() < 1e-8);
    }

    #[test]
    fn sinusoid_at_cutoff_is_attenuated_by_sqrt2() {
        let (cutoff, dt) = (2.0, 0.001);
        // discrete-time magnitude of y[k] = y[k-1] + b (x[k] - y[k-1])
        let b = lowpass_beta(cutoff, dt);
        let wd = 2.0 * std::f64::consts::PI * cutoff * dt;
        let oracle = b / ((1.0 - (1.0 - b) * wd.cos()).powi(2) + ((1.0 - b) * wd.sin()).powi(2)).sqrt();
        assert!((oracle - std::f64::consts::FRAC_1_SQRT_2).abs() < 0.05);

        let mut y = 0.0;
        let mut peak: f64 = 0.0;
        for k in 0..5000 {
            let x = (2.0 * std::f64::consts::PI * cutoff * k as f64 * dt).sin();
            y = lowpass(y, x, cutoff, dt);
            if k >= 3000 {
                peak = peak.max(y.abs());
            }
        }
        assert!((peak - oracle).abs() < 2e-3, "peak {peak} oracle {oracle}");
        assert!((peak * std::f64::consts::SQRT_2 - 1.0).abs() < 0.05);
    }

    #[test]
    fn pose_lowpass_moves_along_geodesic() {
        let a = Pose::identity();
        let b = Pose::new(Vec3::new(1.0, 0.0, 0.0), quat_exp(&Vec3::new(0.0, 0.0, 1.0)));
        let y = lowpass_pose(&a, &b, 10.0, 0.01);
        let beta = lowpass_beta(10.0, 0.01);
        assert!((quat_log(&y.orientation) - Vec3::new(0.0, 0.0, beta)).norm() < 1e-12);
        assert_eq!(lowpass_pose(&a, &b, 0.0, 0.01), b);
    }

    #[test]
    fn blend_endpoints_and_midpoint() {
        let actual = scalar_config(0.0);
        let stream = scalar_frame(1.0, 2.0);
        let start = blend_initial(&actual, &stream, 0.0, 1.0);
        assert_eq!(start.q, vec![0.0]);
        assert_eq!(start.qd, vec![0.0]);
        assert_eq!(start.base_pose, actual.base_pose);
        assert_eq!(blend_initial(&actual, &stream, 1.0, 1.0), stream);
        assert_eq!(blend_initial(&actual, &stream, 7.0, 1.0), stream);
        let mid = blend_initial(&actual, &stream, 0.5, 1.0);
        assert_eq!(blend_weight(0.5, 1.0), 0.5);
        assert!((mid.q[0] - 0.5).abs() < 1e-15);
        assert!((mid.qd[0] - 1.0).abs() < 1e-15);
    }

    #[test]
    fn invalid_config_rejected() {
        let bad = PostProcessConfig {
            velocity_scale: 1.5,
            ..Default::default()
        };
        assert_eq!(bad.validate(), Err(PostError::VelocityScale(1.5)));
        let bad = PostProcessConfig {
            lowpass_cutoff: -1.0,
            ..Default::default()
        };
        assert!(bad.validate().is_err());
    }

    #[test]
    fn processor_output_within_limits_and_continuous() {
        let m = bundled::nadia_like();
        let q0 = m.initial_configuration();
        let mut post = PostProcessor::new(PostProcessConfig::default(), &q0, 0.0).unwrap();
        let mut target = q0.clone();
        for (i, j) in m.joints().iter().enumerate() {
            // far outside the limits, to exercise clamping
            target.joint_positions[i] = j.q_max + 1.0;
        }
        let v = JointVelocity::zeros(m.num_joints());
        let dt = 0.001;
        let mut prev = post.last().clone();
        for k in 1..3000u64 {
            let f = post.step(&m, &target, &v, k, k as f64 * dt, dt).clone();
            assert!(f.is_finite());
            assert!(m.within_limits(&f.configuration()));
            for i in 0..f.q.len() {
                let bound = (f.qd[i].abs() + f.qdd[i].abs() * dt) * dt;
                assert!((f.q[i] - prev.q[i]).abs() <= bound + 1e-15, "joint {i} tick {k}");
            }
            prev = f;
        }
    }

    proptest! {
        #[test]
        fn blend_weight_monotone(t1 in 0.0..3.0f64, dt in 0.0..1.0f64, dur in 0.01..2.0f64) {
            prop_assert!(blend_weight(t1 + dt, dur) >= blend_weight(t1, dur));
            let w = blend_weight(t1, dur);
            prop_assert!((0.0..=1.0).contains(&w));
        }

        #[test]
        fn feedback_step_is_continuous(q in -2.0..2.0f64, qd in -5.0..5.0f64, target in -2.0..2.0f64, vt in -5.0..5.0f64) {
            let cfg = PostProcessConfig::default();
            let dt = 0.001;
            let out = feedback_integrate(&scalar_frame(q, qd), &scalar_config(target), &scalar_velocity(vt), &cfg, dt);
            prop_assert!((out.q[0] - q).abs() <= (out.qd[0].abs() + out.qdd[0].abs() * dt) * dt + 1e-15);
        }
    }
}
