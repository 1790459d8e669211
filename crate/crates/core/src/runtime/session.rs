//! The per-tick pipeline: ingest, predict, solve, post-process.
//!
//! A session is single-threaded and deterministic. Session time is logical:
//! tick `k` runs at `k / tick_rate`. Given the same messages delivered before
//! the same ticks, two sessions emit bitwise identical frames.

use std::collections::BTreeMap;
use std::time::Instant;

use thiserror::Error;

use crate::ik::{build_tasks, contact_tasks, IKState, IkEngine, IkError, SupportPolygon, TickStats};
use crate::input::{EstimatorBank, InputValidator, MotionInput};
use crate::math::{quat_from_yaw, wrap_angle, yaw_of, Pose, Vec3};
use crate::model::{com_position, forward_kinematics, FrameId, JointConfiguration, ModelError, RobotModel};
use crate::post::{JointSetpointFrame, PostError, PostProcessor};
use crate::qp::QuadraticProgram;
use crate::retarget::footstep::{check_feasibility, FootstepCommand};
use crate::retarget::{RetargetError, Retargeter, RobotAnchors, TrackerBundle, LEFT_SHOULDER, RIGHT_SHOULDER};

use super::config::{ConfigError, InputMode, SessionConfig};
use super::executor::FootstepExecutor;
use super::metrics::{BodyTraceRow, Metrics, TraceRow};
use super::protocol::{AckSource, ClientMessage, Envelope, ErrorCode, ErrorPayload, FootstepAck, FootstepRequest};
use super::record::{RecordError, RecordedMessage, Recorder};

#[derive(Debug, Error)]
pub enum SessionError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Ik(#[from] IkError),
    #[error(transparent)]
    Post(#[from] PostError),
    #[error(transparent)]
    Retarget(#[from] RetargetError),
    #[error(transparent)]
    Record(#[from] RecordError),
}

/// Source of the emit timestamps used for latency.
#[derive(Clone, Copy, Debug)]
pub enum SessionClock {
    /// Frames are emitted at their logical tick time.
    Simulated,
    /// Wall time since `Instant`; arrivals must be stamped with the same origin.
    Wall(Instant),
}

impl SessionClock {
    pub fn wall() -> Self {
        SessionClock::Wall(Instant::now())
    }

    /// Seconds since the session origin; `logical` for the simulated clock.
    pub fn now(&self, logical: f64) -> f64 {
        match self {
            SessionClock::Simulated => logical,
            SessionClock::Wall(t0) => t0.elapsed().as_secs_f64(),
        }
    }
}

/// Server-bound consequences of a delivered message.
#[derive(Clone, Debug, PartialEq)]
pub enum Outbound {
    /// For every client.
    FootstepAck(FootstepAck),
    /// For the sender only.
    Error(ErrorPayload),
}

#[derive(Clone, Debug, PartialEq)]
pub struct TickReport {
    pub frame: JointSetpointFrame,
    pub stats: TickStats,
    /// Latency of each input first reflected in this frame, seconds.
    pub latencies: Vec<f64>,
    /// `t_send_s` of the newest accepted input so far.
    pub echo_t_send: Option<f64>,
    pub footstep_completed: bool,
}

#[derive(Debug)]
pub struct Session {
    pub config: SessionConfig,
    model: RobotModel,
    clock: SessionClock,
    ik: IkEngine,
    post: PostProcessor,
    estimators: EstimatorBank,
    validator: InputValidator,
    retargeter: Retargeter,
    executor: FootstepExecutor,
    support: SupportPolygon,
    mid_feet: Pose,
    /// CoM ground point held in balance mode, in the mid-feet frame.
    balance_offset: Vec3,
    /// The same point in world coordinates; exact at start, moved on touchdown.
    balance_point: Vec3,
    shoulders: [FrameId; 2],
    tick: u64,
    metrics: Metrics,
    recorder: Option<Recorder>,
    pending_arrivals: Vec<f64>,
    echo_t_send: Option<f64>,
    last_accepted: Option<f64>,
    last_tick: Option<u64>,
    active_tasks: usize,
    /// Latest accepted pose per target body.
    input_targets: BTreeMap<String, Pose>,
}

impl Session {
    pub fn new(config: SessionConfig, model: RobotModel) -> Result<Self, SessionError> {
        let q0 = model.initial_configuration();
        model.check_dimension(&q0)?;
        let ik = IkEngine::new(&model, q0.clone(), config.ik.clone())?;
        let post = PostProcessor::new(config.post.clone(), &q0, 0.0)?;
        let executor = FootstepExecutor::new(&model, &q0, config.executor)?;
        let retargeter = Retargeter::new(&model, &q0, config.retargeting.clone())?;
        let support = executor.support_polygon();
        let mid_feet = executor.mid_feet();
        let fk = forward_kinematics(&model, &q0)?;
        let com = com_position(&model, &fk);
        let balance_point = Vec3::new(com.x, com.y, 0.0);
        let mut balance_offset = mid_feet.inverse_transform_point(&com);
        balance_offset.z = 0.0;
        let recorder = config.record.as_deref().map(Recorder::create).transpose()?;
        Ok(Self {
            shoulders: [model.frame_id(LEFT_SHOULDER)?, model.frame_id(RIGHT_SHOULDER)?],
            estimators: EstimatorBank::new(config.estimator),
            validator: InputValidator::new(config.safety),
            config,
            model,
            clock: SessionClock::Simulated,
            ik,
            post,
            retargeter,
            executor,
            support,
            mid_feet,
            balance_offset,
            balance_point,
            tick: 0,
            metrics: Metrics::default(),
            recorder,
            pending_arrivals: Vec::new(),
            echo_t_send: None,
            last_accepted: None,
            last_tick: None,
            active_tasks: 0,
            input_targets: BTreeMap::new(),
        })
    }

    /// Loads the configured model and builds the session.
    pub fn from_config(config: SessionConfig) -> Result<Self, SessionError> {
        let model = config.load_model()?;
        Self::new(config, model)
    }

    pub fn with_clock(mut self, clock: SessionClock) -> Self {
        self.clock = clock;
        self
    }

    pub fn clock(&self) -> SessionClock {
        self.clock
    }

    pub fn model(&self) -> &RobotModel {
        &self.model
    }

    pub fn metrics(&self) -> &Metrics {
        &self.metrics
    }

    pub fn metrics_mut(&mut self) -> &mut Metrics {
        &mut self.metrics
    }

    pub fn ik_state(&self) -> &IKState {
        self.ik.state()
    }

    pub fn executor(&self) -> &FootstepExecutor {
        &self.executor
    }

    pub fn support(&self) -> &SupportPolygon {
        &self.support
    }

    pub fn mid_feet(&self) -> &Pose {
        &self.mid_feet
    }

    pub fn estimators(&self) -> &EstimatorBank {
        &self.estimators
    }

    /// Motion tasks in the last tick, contact tasks excluded.
    pub fn active_tasks(&self) -> usize {
        self.active_tasks
    }

    /// Index of the next tick.
    pub fn tick_index(&self) -> u64 {
        self.tick
    }

    /// Logical time of the next tick.
    pub fn time(&self) -> f64 {
        self.tick as f64 * self.config.tick_period()
    }

    /// Jumps the next tick forward to `tick`, dropping the ticks in between.
    /// Used when the real-time loop overruns: fresh time over replayed time.
    pub fn skip_to(&mut self, tick: u64) {
        self.tick = self.tick.max(tick);
    }

    pub fn last_frame(&self) -> &JointSetpointFrame {
        self.post.last()
    }

    /// Ground point the CoM task holds in balance mode.
    pub fn balance_point(&self) -> Vec3 {
        self.balance_point
    }

    pub fn capture_qp(&mut self, on: bool) {
        self.ik.capture_qp(on);
    }

    /// QP solved by the last tick, when capture is on.
    pub fn last_qp(&self) -> Option<&QuadraticProgram> {
        self.ik.last_qp()
    }

    /// Hands a client message to the session before the next tick.
    /// `arrival` is on the session clock.
    pub fn deliver(&mut self, env: &Envelope, arrival: f64) -> Result<Vec<Outbound>, SessionError> {
        let msg = match ClientMessage::from_envelope(env) {
            Ok(m) => m,
            Err(e) => {
                self.metrics.protocol_errors += 1;
                return Ok(vec![Outbound::Error(ErrorPayload {
                    code: e.code(),
                    message: e.to_string(),
                    seq: Some(env.seq),
                })]);
            }
        };
        let input_mode = match &msg {
            ClientMessage::MotionInput(_) => Some(InputMode::MotionInput),
            ClientMessage::TrackerFrame(_) => Some(InputMode::TrackerBundle),
            _ => None,
        };
        if let Some(mode) = input_mode {
            if mode != self.config.mode {
                self.metrics.protocol_errors += 1;
                return Ok(vec![Outbound::Error(ErrorPayload {
                    code: ErrorCode::ModeMismatch,
                    message: format!("session consumes {:?}, got {:?}", self.config.mode, mode),
                    seq: Some(env.seq),
                })]);
            }
        }
        if let Some(r) = &mut self.recorder {
            if matches!(msg, ClientMessage::MotionInput(_) | ClientMessage::TrackerFrame(_) | ClientMessage::FootstepCommand(_)) {
                r.write(&RecordedMessage {
                    arrival,
                    tick: self.tick,
                    envelope: env.clone(),
                })?;
            }
        }
        Ok(match msg {
            ClientMessage::MotionInput(input) => {
                self.accept_input(&input, arrival, env.t_send_s);
                Vec::new()
            }
            ClientMessage::TrackerFrame(bundle) => self.accept_bundle(&bundle, arrival, env.t_send_s, env.seq)?,
            ClientMessage::FootstepCommand(req) => vec![Outbound::FootstepAck(self.request_footstep(&req, Some(env.seq)))],
            ClientMessage::Hello(_) | ClientMessage::ModelSummaryRequest => Vec::new(),
        })
    }

    fn accept_input(&mut self, input: &MotionInput, arrival: f64, t_send: f64) {
        self.metrics.inputs_received += 1;
        let (accepted, rejections) = self.validator.validate(input, &self.mid_feet);
        for r in &rejections {
            log::debug!("rejected {} ({:?}, {:.3})", r.body, r.rule, r.value);
            self.metrics.reject(r.rule);
        }
        if accepted.is_empty() {
            return;
        }
        self.metrics.inputs_accepted += 1;
        let t = self.time();
        let resumed = self
            .last_accepted
            .map_or(true, |last| t - last > self.config.estimator.decay_duration);
        if resumed {
            self.post.restart_blend(t);
        }
        self.last_accepted = Some(t);
        self.estimators.on_input(&accepted, (t - arrival).max(0.0));
        for (name, spec) in &accepted.targets {
            self.input_targets.insert(name.clone(), spec.pose);
        }
        self.pending_arrivals.push(arrival);
        self.echo_t_send = Some(t_send);
    }

    fn accept_bundle(&mut self, bundle: &TrackerBundle, arrival: f64, t_send: f64, seq: u64) -> Result<Vec<Outbound>, SessionError> {
        let fk = forward_kinematics(&self.model, &self.ik.state().q)?;
        let anchors = RobotAnchors {
            shoulders: self.shoulders.map(|f| fk.frame_pose(&self.model, f).position),
            feet: *self.executor.feet(),
        };
        let out = match self.retargeter.process(bundle, &anchors) {
            Ok(out) => out,
            Err(e) => {
                self.metrics.inputs_received += 1;
                return Ok(vec![Outbound::Error(ErrorPayload {
                    code: ErrorCode::Rejected,
                    message: e.to_string(),
                    seq: Some(seq),
                })]);
            }
        };
        let mut events = Vec::new();
        if let Some(cmd) = out.footstep {
            events.push(Outbound::FootstepAck(self.enqueue_footstep(cmd, AckSource::Retargeting, None)));
        }
        self.accept_input(&MotionInput::from_references(&out.references), arrival, t_send);
        Ok(events)
    }

    fn enqueue_footstep(&mut self, cmd: FootstepCommand, source: AckSource, request_seq: Option<u64>) -> FootstepAck {
        let accepted = self.executor.enqueue(cmd);
        if accepted {
            self.metrics.footsteps_accepted += 1;
        } else {
            self.metrics.footsteps_rejected += 1;
        }
        FootstepAck {
            side: cmd.side,
            pose: cmd.pose,
            accepted,
            reason: (!accepted).then(|| "footstep queue full".to_string()),
            source,
            request_seq,
        }
    }

    /// Plans a step relative to where the foot will be after the steps
    /// already queued, in that foot's yaw frame.
    pub fn request_footstep(&mut self, req: &FootstepRequest, request_seq: Option<u64>) -> FootstepAck {
        let foot = self.executor.planned(req.side);
        let stance = self.executor.planned(req.side.other());
        let yaw = yaw_of(&foot.orientation);
        let offset = quat_from_yaw(yaw) * Vec3::new(req.dx, req.dy, 0.0);
        let pose = Pose::new(foot.position + offset, quat_from_yaw(wrap_angle(yaw + req.dyaw)));
        let finite = [req.dx, req.dy, req.dyaw].iter().all(|x| x.is_finite());
        let check = if finite {
            check_feasibility(req.side, &pose, &stance, &self.config.retargeting.footstep).map_err(|why| format!("{why:?}"))
        } else {
            Err("non-finite request".to_string())
        };
        match check {
            Ok(()) => {
                let cmd = FootstepCommand {
                    side: req.side,
                    pose,
                    timestamp: self.time(),
                };
                self.enqueue_footstep(cmd, AckSource::Client, request_seq)
            }
            Err(reason) => {
                self.metrics.footsteps_rejected += 1;
                FootstepAck {
                    side: req.side,
                    pose: if finite { pose } else { foot },
                    accepted: false,
                    reason: Some(reason),
                    source: AckSource::Client,
                    request_seq,
                }
            }
        }
    }

    /// Runs one tick at [`Session::time`].
    pub fn tick(&mut self) -> Result<TickReport, SessionError> {
        let started = Instant::now();
        let dt = self.config.tick_period();
        let k = self.tick;
        let t = self.time();

        let footstep_completed = self.executor.update(t).is_some();
        if footstep_completed {
            self.support = self.executor.support_polygon();
            self.mid_feet = self.executor.mid_feet();
            self.balance_point = self.mid_feet.transform_point(&self.balance_offset);
            self.metrics.footsteps_completed += 1;
        }
        let elapsed = self.last_tick.map_or(dt, |last| (k - last) as f64 * dt);
        self.last_tick = Some(k);
        let predictions = self.estimators.predict(elapsed);
        let balance = self.balance_point();
        let mut tasks = build_tasks(&self.model, &predictions, &balance, &self.config.ik);
        self.active_tasks = tasks.len();
        tasks.extend(contact_tasks(&self.executor.foot_targets(t), &self.config.ik));
        let stats = self.ik.tick(&self.model, &tasks, &self.support)?;
        let state = self.ik.state();
        let clamps_before = self.post.clamps;
        let frame = self.post.step(&self.model, &state.q, &state.v, k, t, dt).clone();
        self.metrics.output_clamps += self.post.clamps - clamps_before;
        self.tick += 1;

        let emit = self.clock.now(t);
        let latencies: Vec<f64> = self.pending_arrivals.drain(..).map(|a| (emit - a).max(0.0)).collect();
        for l in &latencies {
            self.metrics.latency.record(*l);
        }
        let compute = started.elapsed().as_secs_f64();
        self.metrics.record_tick(&stats, compute, self.config.ik.max_backtracks);
        self.metrics.session_time = t;
        if self.metrics.tracing() {
            for (body, input, desired) in self.body_poses(&self.ik.state().q)? {
                self.metrics.push_body_trace(BodyTraceRow::new(k, t, &body, &input, &desired));
            }
            self.metrics.push_trace(TraceRow {
                tick: k,
                t,
                compute_us: compute * 1e6,
                outcome: stats.outcome,
                qp_iterations: stats.qp_iterations,
                active_constraints: stats.active_constraints,
                collision_rows: stats.collision_rows,
                backtracks: stats.backtracks,
                latency_ms: latencies.last().map(|l| l * 1e3),
            });
        }
        Ok(TickReport {
            frame,
            stats,
            latencies,
            echo_t_send: self.echo_t_send,
            footstep_completed,
        })
    }

    /// `(body, latest accepted input, pose at q)` for every target body the
    /// model has a frame for. Pass the IK state for the desired pose or a
    /// frame's configuration for the commanded one.
    pub fn body_poses(&self, q: &JointConfiguration) -> Result<Vec<(String, Pose, Pose)>, SessionError> {
        let fk = forward_kinematics(&self.model, q)?;
        Ok(self
            .input_targets
            .iter()
            .filter_map(|(name, input)| {
                let id = self.model.frame_id(name).ok()?;
                Some((name.clone(), *input, fk.frame_pose(&self.model, id)))
            })
            .collect())
    }

    pub fn flush_recording(&mut self) -> Result<(), SessionError> {
        if let Some(r) = &mut self.recorder {
            r.flush()?;
        }
        Ok(())
    }
}

/// Feeds `messages` (ordered by tick) into the session and runs `ticks` ticks.
/// With `speed`, each tick waits until its time divided by `speed` has passed
/// on the wall clock; without it the loop runs as fast as it can.
pub fn run_recorded(
    session: &mut Session,
    messages: &[RecordedMessage],
    ticks: u64,
    speed: Option<f64>,
    mut on_tick: impl FnMut(&Session, &TickReport, &[Outbound]),
) -> Result<(), SessionError> {
    let wall = Instant::now();
    let mut next = messages.partition_point(|m| m.tick < session.tick_index());
    let mut events = Vec::new();
    for _ in 0..ticks {
        let k = session.tick_index();
        events.clear();
        while next < messages.len() && messages[next].tick <= k {
            events.extend(session.deliver(&messages[next].envelope, messages[next].arrival)?);
            next += 1;
        }
        if let Some(speed) = speed.filter(|s| *s > 0.0) {
            let due = session.time() / speed;
            let now = wall.elapsed().as_secs_f64();
            if due > now {
                std::thread::sleep(std::time::Duration::from_secs_f64(due - now));
            }
        }
        let report = session.tick()?;
        on_tick(session, &report, &events);
    }
    session.flush_recording()
}

#[cfg(test)]
mod tests;
